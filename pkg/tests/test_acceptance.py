"""End-to-end acceptance gate.

Each test checks one release criterion at its stated tolerance and prints a
single pass/fail line. Run with `pytest tests/test_acceptance.py -s` to see
the lines as they complete; the slow learning checks train real models on
synthetic data and dominate the runtime.
"""

import hashlib
import time

import numpy as np
import pytest

from conftest import make_ring_mask, random_mask
from aimsan.attention import (attention_scores_dense_oracle,
                              attention_scores_sparse, score_counter)
from aimsan.data import load_dataset, prepare, synth_generate
from aimsan.graph import SparseScores, normalize_sparse, build_mask_topk
from aimsan.layer import diffusion_gcn
from aimsan.model import ModelConfig, init_params, load_checkpoint
from aimsan.tensor import Tensor
from aimsan import gradcheck
from aimsan.training import (evaluate, evaluate_split, improvement_score,
                             persistence_mae, train)
from test_layer import make_params
from test_model import make_aux, run_forward


def report(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}: {name}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


def rel_err(a, b):
    denom = np.maximum(np.abs(a) + np.abs(b), 1.0)
    return float(np.max(np.abs(a - b) / denom))


class TestSparseDenseEquivalence:
    def test_fifty_random_instances(self):
        rng = np.random.default_rng(0)
        t0 = time.perf_counter()
        max_fwd, max_grad = 0.0, 0.0
        for _ in range(50):
            n = int(rng.integers(2, 65))
            h = int(rng.integers(1, 5))
            b = int(rng.integers(1, 3))
            mask = random_mask(rng, n)
            qd = rng.standard_normal((b, h, n, 4))
            kd = rng.standard_normal((b, h, n, 4))
            w = rng.standard_normal((b, h, mask.nnz))

            q1 = Tensor(qd, dtype=np.float64, requires_grad=True)
            k1 = Tensor(kd, dtype=np.float64, requires_grad=True)
            sparse = attention_scores_sparse(q1, k1, mask)
            (sparse.values * Tensor(w)).sum().backward()

            q2 = Tensor(qd, dtype=np.float64, requires_grad=True)
            k2 = Tensor(kd, dtype=np.float64, requires_grad=True)
            dense = attention_scores_dense_oracle(q2, k2, mask.densify())
            wd = np.zeros((b, h, n, n))
            wd[:, :, mask.rows, mask.col_indices] = w
            (dense * Tensor(wd)).sum().backward()

            max_fwd = max(max_fwd, rel_err(sparse.densify(), dense.data * 1.0))
            max_grad = max(max_grad, rel_err(q1.grad, q2.grad),
                           rel_err(k1.grad, k2.grad))
        elapsed = time.perf_counter() - t0
        report("sparse/dense attention equivalence (50 instances)",
               max_fwd < 1e-6 and max_grad < 1e-5 and elapsed < 30,
               f"fwd {max_fwd:.2e}, grad {max_grad:.2e}, {elapsed:.1f}s")


class TestComplexityCounts:
    def test_exact_counts_and_scaling(self):
        rng = np.random.default_rng(1)
        ok = True
        # count equals nnz exactly for every tested mask (one instance each)
        for _ in range(10):
            n = int(rng.integers(2, 40))
            mask = random_mask(rng, n)
            q = Tensor(rng.standard_normal((1, 1, n, 3)))
            score_counter.reset()
            attention_scores_sparse(q, q, mask)
            ok &= score_counter.total == mask.nnz
        # top-k bound and exact doubling/quadrupling on ring masks
        k = 4
        counts = {}
        for n in (24, 48):
            mask = make_ring_mask(n, k)
            ok &= mask.nnz <= n * (k + 1)
            q = Tensor(rng.standard_normal((1, 1, n, 3)))
            score_counter.reset()
            attention_scores_sparse(q, q, mask)
            sparse_count = score_counter.total
            score_counter.reset()
            attention_scores_dense_oracle(q, q, mask.densify())
            counts[n] = (sparse_count, score_counter.total)
        ok &= counts[48][0] == 2 * counts[24][0]
        ok &= counts[48][1] == 4 * counts[24][1]
        ok &= counts[24][1] == 24 * 24
        report("complexity counts (nnz exact, linear vs quadratic)", ok,
               f"sparse {counts[24][0]}->{counts[48][0]}, "
               f"dense {counts[24][1]}->{counts[48][1]}")


class TestGradientSuite:
    def test_all_scopes(self):
        t0 = time.perf_counter()
        results = gradcheck.run_all(seed=0)
        elapsed = time.perf_counter() - t0
        worst = max(err for _, err in results)
        report("gradient suite (all ops + full layer)",
               worst < 1e-4 and elapsed < 120,
               f"worst {worst:.2e} over {len(results)} checks, {elapsed:.1f}s")


class TestArchitectureShape:
    def test_temporal_schedule_and_output(self):
        rng = np.random.default_rng(2)
        c, n = 4, 6
        mask = make_ring_mask(n, 2)
        i_cur = Tensor(rng.standard_normal((1, c, n, 12)).astype(np.float32))
        s_cur = Tensor(np.zeros((1, 8, n, 12), dtype=np.float32))
        lengths = []
        for d in [2, 2, 2, 2, 2, 1]:
            from aimsan.layer import san_forward
            p = make_params(rng, c, 8, 2, dilation=d)
            i_cur, s_cur = san_forward(i_cur, s_cur, None, mask, p)
            lengths.append(i_cur.shape[3])
        out = run_forward(rng, ModelConfig(), b=3, n=8)
        report("architecture shape (lengths 10,8,6,4,2,1; output [B,12,N,1])",
               lengths == [10, 8, 6, 4, 2, 1] and out.shape == (3, 12, 8, 1),
               f"lengths {lengths}, output {out.shape}")


class TestNormalizationOracle:
    def test_against_dense_formula(self):
        rng = np.random.default_rng(3)
        max_err = 0.0
        for _ in range(20):
            n = int(rng.integers(2, 33))
            mask = random_mask(rng, n)
            vals = rng.uniform(0, 3, (2, mask.nnz))
            out = normalize_sparse(
                SparseScores(mask, Tensor(vals, dtype=np.float64))).densify()
            a = np.zeros((2, n, n))
            a[:, mask.rows, mask.col_indices] = vals
            a_tilde = a + np.eye(n)
            d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=2))
            expected = d_inv_sqrt[:, :, None] * a_tilde * d_inv_sqrt[:, None, :]
            max_err = max(max_err, rel_err(out, expected))
        mask = make_ring_mask(8, 3)
        zero = normalize_sparse(
            SparseScores(mask, Tensor(np.zeros((1, mask.nnz))))).densify()[0]
        identity_ok = np.allclose(zero, np.eye(8), atol=1e-7)
        report("adjacency normalization oracle",
               max_err < 1e-6 and identity_ok, f"max err {max_err:.2e}")


class TestDiffusionOracle:
    def test_dense_polynomial(self):
        rng = np.random.default_rng(4)
        max_err = 0.0
        for _ in range(10):
            n = int(rng.integers(2, 33))
            mask = random_mask(rng, n)
            vals = rng.uniform(0, 0.5, (2, mask.nnz))
            a_n = SparseScores(mask, Tensor(vals, dtype=np.float64))
            c = 3
            x = rng.standard_normal((2, c, n, 4))
            weights = [Tensor(rng.standard_normal((c, c)), dtype=np.float64)
                       for _ in range(3)]
            out = diffusion_gcn(a_n, Tensor(x, dtype=np.float64), weights)
            dense = a_n.densify()
            expected, hop = np.zeros_like(x), x
            for i, w in enumerate(weights):
                if i > 0:
                    hop = np.einsum("bij,bcjt->bcit", dense, hop)
                expected += np.einsum("oc,bcnt->bont", w.data, hop)
            max_err = max(max_err, rel_err(out.data, expected))
        report("diffusion convolution oracle (k=2, N<=32)", max_err < 1e-6,
               f"max err {max_err:.2e}")


class TestMetrics:
    def test_hand_values(self):
        shaped = lambda v: np.asarray(v, dtype=np.float64).reshape(1, 2, 1, 1)
        rep = evaluate(shaped([2.0, 4.0]), shaped([1.0, 2.0]),
                       shaped([1.0, 1.0]), horizons=(1, 2))
        m = rep.rows["all"]
        ok = (abs(m.mae - 1.5) < 1e-9
              and abs(m.rmse - np.sqrt(2.5)) < 1e-9
              and abs(m.rmse - 1.581139) < 1e-6
              and abs(m.mape - 100.0) < 1e-9
              and round(improvement_score(3.18, 3.04), 2) == 4.40)
        report("metrics hand values + improvement score", ok,
               f"MAE {m.mae}, RMSE {m.rmse:.6f}, MAPE {m.mape}, "
               f"imp {improvement_score(3.18, 3.04):.2f}%")


@pytest.fixture(scope="module")
def week_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept") / "synth20"
    synth_generate(20, 2016, seed=7, out_dir=out)
    return load_dataset(out)


class TestDeskScaleLearning:
    def test_beats_persistence_and_untrained(self, week_dataset, tmp_path):
        cfg = ModelConfig()
        prep = prepare(week_dataset, cfg.s_in, cfg.t_out)
        mask = build_mask_topk(week_dataset.spec, cfg.mask_k)
        untrained = evaluate_split(prep, "test", init_params(cfg, 7), cfg,
                                   mask).rows["all"].mae
        t0 = time.perf_counter()
        res = train(prep, mask, cfg, seed=7, out_dir=tmp_path / "run",
                    epochs=10, batch_size=32)
        elapsed = time.perf_counter() - t0
        params, bcfg, _ = load_checkpoint(res.checkpoint)
        test_mae = evaluate_split(prep, "test", params, bcfg,
                                  mask).rows["all"].mae
        baseline = persistence_mae(prep, "test")
        ok = (test_mae < baseline and test_mae < 0.3 * untrained
              and elapsed < 15 * 60)
        report("desk-scale learning (beats persistence and 0.3x untrained)",
               ok, f"test MAE {test_mae:.4f} vs persistence {baseline:.4f}, "
                   f"untrained {untrained:.4f}, {elapsed / 60:.1f} min")


class TestAblationOrdering:
    def test_mean_over_three_seeds(self, tmp_path):
        data = synth_generate(10, 600, seed=0, out_dir=tmp_path / "small")
        ds = load_dataset(data)
        means = {}
        for ablation in ("none", "no-aim", "tcn-only"):
            maes = []
            for seed in (0, 1, 2):
                cfg = ModelConfig(hidden=16, skip=64, aim_dim=8, mask_k=3,
                                  ablation=ablation)
                prep = prepare(ds, cfg.s_in, cfg.t_out)
                mask = build_mask_topk(ds.spec, cfg.mask_k)
                res = train(prep, mask, cfg, seed=seed,
                            out_dir=tmp_path / f"{ablation}-{seed}",
                            epochs=5, batch_size=32)
                params, bcfg, _ = load_checkpoint(res.checkpoint)
                maes.append(evaluate_split(prep, "test", params, bcfg,
                                           mask).rows["all"].mae)
            means[ablation] = float(np.mean(maes))
        ok = means["none"] <= means["no-aim"] <= means["tcn-only"]
        report("ablation ordering (full <= no-aim <= tcn-only, 3-seed mean)",
               ok, f"full {means['none']:.4f}, no-aim {means['no-aim']:.4f}, "
                   f"tcn-only {means['tcn-only']:.4f}")


class TestDeterminism:
    def test_identical_runs(self, tmp_path):
        data = synth_generate(6, 260, seed=4, out_dir=tmp_path / "data")
        ds = load_dataset(data)
        cfg = ModelConfig(hidden=8, skip=16, aim_dim=4, heads=2, mask_k=2)
        prep = prepare(ds, cfg.s_in, cfg.t_out)
        mask = build_mask_topk(ds.spec, cfg.mask_k)
        outcomes = []
        for name in ("first", "second"):
            res = train(prep, mask, cfg, seed=11, out_dir=tmp_path / name,
                        epochs=1, batch_size=16)
            digest = hashlib.sha256(res.checkpoint.read_bytes()).hexdigest()
            outcomes.append((res.history[0]["train_loss"], digest))
        ok = outcomes[0] == outcomes[1]
        report("determinism (epoch-1 loss + checkpoint checksum)", ok,
               f"loss {outcomes[0][0]:.6f}, checksum {outcomes[0][1][:12]}")
