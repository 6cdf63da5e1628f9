"""Command-line entry point: dataset synthesis, training, evaluation, the
sparse-vs-dense scaling benchmark, and the gradient-check suites.

Configuration is key=value text with [section] headers; command-line flags
override file values. AIMSAN_THREADS caps kernel parallelism (applied before
numpy loads its BLAS)."""

import os
import sys

if "AIMSAN_THREADS" in os.environ:
    _n = os.environ["AIMSAN_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _n)

import argparse
import configparser
import dataclasses
from pathlib import Path

from . import benchmark as bench
from . import gradcheck
from .data import load_dataset, prepare, synth_generate
from .graph import build_mask_threshold, build_mask_topk
from .model import ABLATIONS, ModelConfig, load_checkpoint
from .training import evaluate, improvement_score, persistence_mae, \
    predict_split, train

_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {"epochs", "batch_size", "clip_norm"}
_RUN_KEYS = {"dataset", "out", "seed", "ablation", "mask", "split", "horizons",
             # keys emitted into resolved-config snapshots, accepted on re-read
             "command", "nodes", "steps", "period", "checkpoint", "n_list",
             "k", "heads", "repeats"}

_INT_LIST = {"dilations"}
_STR_LIST = {"branches"}


def _parse_value(key, raw):
    if key in _INT_LIST:
        return [int(v) for v in raw.split(",")]
    if key in _STR_LIST:
        return [v.strip() for v in raw.split(",")]
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    return raw


def read_config_file(path):
    """Returns {section: {key: parsed value}}; unknown keys are rejected."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    allowed = {"model": _MODEL_KEYS, "train": _TRAIN_KEYS, "run": _RUN_KEYS}
    out = {}
    for section in cp.sections():
        if section not in allowed:
            raise ValueError(f"unknown config section [{section}]")
        out[section] = {}
        for key, raw in cp[section].items():
            if key not in allowed[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            out[section][key] = _parse_value(key, raw)
    return out


def write_resolved_config(out_dir, command, model_cfg, train_cfg, run_cfg):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"# resolved configuration for `{command}`", "[run]",
             f"command = {command}"]
    for k, v in run_cfg.items():
        lines.append(f"{k} = {v}")
    if model_cfg is not None:
        lines.append("[model]")
        for f in dataclasses.fields(ModelConfig):
            v = getattr(model_cfg, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
    if train_cfg:
        lines.append("[train]")
        for k, v in train_cfg.items():
            lines.append(f"{k} = {v}")
    (out_dir / "resolved_config.ini").write_text("\n".join(lines) + "\n")


def _parse_mask_flag(value):
    kind, _, arg = value.partition(":")
    if kind == "topk":
        return {"mask_mode": "topk", "mask_k": int(arg)}
    if kind == "threshold":
        return {"mask_mode": "threshold", "mask_epsilon": float(arg)}
    raise ValueError(f"mask must be topk:K or threshold:EPS, got {value!r}")


def _require_dataset(path):
    if path is None or not Path(path).exists():
        print(f"error: dataset path not found: {path}", file=sys.stderr)
        raise SystemExit(2)
    return load_dataset(path)


def _build_mask(spec, cfg: ModelConfig):
    if cfg.mask_mode == "topk":
        return build_mask_topk(spec, min(cfg.mask_k, spec.n),
                               symmetrize=cfg.symmetrize_mask)
    return build_mask_threshold(spec, cfg.mask_epsilon,
                                symmetrize=cfg.symmetrize_mask)


def _resolve_model_config(args, file_cfg, dataset):
    overrides = dict(file_cfg.get("model", {}))
    if args.ablation:
        overrides["ablation"] = args.ablation
    if args.mask:
        overrides.update(_parse_mask_flag(args.mask))
    cfg = ModelConfig(**overrides)
    if "branches" not in overrides:
        branches = ["time"]
        if dataset.manifest.coordinates is not None:
            branches.append("position")
        if dataset.weather is not None:
            branches.append("weather")
        cfg.branches = branches
    cfg.weather_dim = dataset.manifest.weather_dim if "weather" in cfg.branches else 0
    cfg.validate()
    return cfg


def cmd_synth(args):
    out = synth_generate(args.nodes, args.steps, args.seed, args.out,
                         period_minutes=args.period)
    write_resolved_config(out, "synth", None, {},
                          {"nodes": args.nodes, "steps": args.steps,
                           "seed": args.seed, "out": out,
                           "period": args.period})
    print(f"synthetic dataset written to {out}")
    return 0


def cmd_train(args):
    file_cfg = read_config_file(args.config) if args.config else {}
    dataset = _require_dataset(args.dataset)
    cfg = _resolve_model_config(args, file_cfg, dataset)
    tr = dict(file_cfg.get("train", {}))
    if args.epochs is not None:
        tr["epochs"] = args.epochs
    if args.batch_size is not None:
        tr["batch_size"] = args.batch_size
    tr.setdefault("epochs", 100)
    tr.setdefault("batch_size", 32)
    tr.setdefault("clip_norm", 5.0)

    prepared = prepare(dataset, cfg.s_in, cfg.t_out)
    mask = _build_mask(dataset.spec, cfg)
    write_resolved_config(args.out, "train", cfg, tr,
                          {"dataset": args.dataset, "seed": args.seed,
                           "out": args.out})
    result = train(prepared, mask, cfg, args.seed, args.out,
                   epochs=int(tr["epochs"]), batch_size=int(tr["batch_size"]),
                   clip_norm=float(tr["clip_norm"]), log=print)
    print(f"best validation MAE {result.best_val_mae:.4f}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def _eval_one(ckpt_path, dataset, split, horizons, batch_size=32):
    params, cfg, _seed = load_checkpoint(ckpt_path)
    if dataset.n_nodes != len(dataset.manifest.node_ids):
        raise ValueError("dataset inconsistent with its manifest")
    cfg.validate()
    if "weather" in cfg.branches and dataset.weather is None:
        raise ValueError("checkpoint expects weather data the dataset lacks")
    prepared = prepare(dataset, cfg.s_in, cfg.t_out)
    mask = _build_mask(dataset.spec, cfg)
    preds, targets, valids = predict_split(prepared, split, params, cfg, mask,
                                           batch_size)
    return evaluate(preds, targets, valids, horizons)


def cmd_eval(args):
    dataset = _require_dataset(args.dataset)
    horizons = tuple(int(h) for h in args.horizons.split(","))
    report = _eval_one(args.checkpoint, dataset, args.split, horizons)
    print(report.as_table())
    lines = ["horizon,mae,rmse,mape"]
    for label, m in report.rows.items():
        lines.append(f"{label},{m.mae:.6f},{m.rmse:.6f},{m.mape:.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text("\n".join(lines) + "\n")
        write_resolved_config(out, "eval", None, {},
                              {"dataset": args.dataset, "split": args.split,
                               "horizons": args.horizons,
                               "checkpoint": args.checkpoint})
    if args.compare_to:
        other = _eval_one(args.compare_to, dataset, args.split, horizons)
        print("\nimprovement of first checkpoint over --compare-to "
              "(positive = first is better):")
        for metric in ("mae", "rmse", "mape"):
            m1 = getattr(other.rows["all"], metric)
            m2 = getattr(report.rows["all"], metric)
            print(f"  {metric.upper():5s} {improvement_score(m1, m2):+.2f}%")
    return 0


def cmd_benchmark(args):
    n_list = [int(n) for n in args.n_list.split(",")]
    rows = bench.run_benchmark(n_list, args.k, heads=args.heads,
                               repeats=args.repeats)
    csv_text = bench.rows_to_csv(rows)
    print(csv_text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "benchmark.csv").write_text(csv_text)
        write_resolved_config(out, "benchmark", None, {},
                              {"n_list": args.n_list, "k": args.k,
                               "heads": args.heads, "repeats": args.repeats})
    return 0


def cmd_gradcheck(args):
    results = (gradcheck.run_all(args.seed) if args.scope == "all"
               else gradcheck.run(args.scope, args.seed))
    failed = 0
    for name, err in results:
        ok = err < args.tolerance
        print(f"{'PASS' if ok else 'FAIL'} {name}: max relative error {err:.2e}")
        failed += not ok
    return 1 if failed else 0


def cmd_baseline(args):
    dataset = _require_dataset(args.dataset)
    prepared = prepare(dataset, args.s, args.t)
    print(f"persistence masked MAE ({args.split}): "
          f"{persistence_mae(prepared, args.split):.6f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aimsan",
        description="Sparse cross-attention spatio-temporal forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--steps", type=int, default=2016)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--period", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="key=value config file with [sections]")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", choices=[a for a in ABLATIONS if a != "none"])
    p.add_argument("--mask", help="topk:K or threshold:EPS")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--compare-to", help="second checkpoint for improvement scores")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--horizons", default="3,6,12")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("benchmark",
                       help="sparse vs dense attention scaling report")
    p.add_argument("--n-list", default="64,128,256,512")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--heads", type=int, default=3)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--scope", choices=gradcheck.SCOPES + ("all",),
                   default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("baseline", help="persistence-baseline masked MAE")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--s", type=int, default=12)
    p.add_argument("--t", type=int, default=12)
    p.set_defaults(fn=cmd_baseline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
