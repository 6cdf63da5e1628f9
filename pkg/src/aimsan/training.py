"""Training loop (Adam, stepwise learning-rate decay, gradient clipping),
masked MAE loss, and per-horizon evaluation metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import PreparedData
from .model import ModelConfig, init_params, model_forward, save_checkpoint
from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    pass


# -- loss & metrics -------------------------------------------------------------

def masked_mae_loss(pred: Tensor, target: np.ndarray,
                    valid_mask: np.ndarray) -> Tensor:
    """Mean absolute error over valid entries only."""
    if pred.shape != target.shape or pred.shape != valid_mask.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, target "
                         f"{target.shape}, mask {valid_mask.shape}")
    count = float(valid_mask.sum())
    if count == 0:
        raise ValueError("no valid entries in batch")
    diff = (pred - Tensor(target.astype(pred.dtype))).absolute()
    return (diff * Tensor(valid_mask.astype(pred.dtype))).sum() * (1.0 / count)


@dataclass
class Metrics:
    mae: float
    rmse: float
    mape: float


@dataclass
class MetricsReport:
    rows: dict  # horizon label ("3", "6", "12", "all") -> Metrics

    def as_table(self) -> str:
        lines = ["horizon        MAE       RMSE    MAPE(%)"]
        for label, m in self.rows.items():
            lines.append(f"{label:>7} {m.mae:10.4f} {m.rmse:10.4f} {m.mape:10.4f}")
        return "\n".join(lines)


def _metrics(diff, target, valid) -> Metrics:
    mae = float(np.abs(diff).sum() / valid.sum())
    rmse = float(np.sqrt((diff ** 2).sum() / valid.sum()))
    nz = valid * (target != 0)
    mape = float(100.0 * (np.abs(diff / np.where(target == 0, 1.0, target))
                          * nz).sum() / nz.sum())
    return Metrics(mae, rmse, mape)


def evaluate(preds: np.ndarray, targets: np.ndarray, valid_mask: np.ndarray,
             horizons=(3, 6, 12)) -> MetricsReport:
    """Per-horizon and overall MAE / RMSE / MAPE on de-normalized values.

    preds/targets/valid: [B, T, N, 1]; horizon label h covers prediction
    step h (1-based)."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    valid = np.asarray(valid_mask, dtype=np.float64)
    diff = (preds - targets) * valid
    rows = {}
    for h in horizons:
        sl = (slice(None), h - 1)
        rows[str(h)] = _metrics(diff[sl], targets[sl], valid[sl])
    rows["all"] = _metrics(diff, targets, valid)
    return MetricsReport(rows)


def improvement_score(m1: float, m2: float) -> float:
    """(m1 - m2) / m1 * 100; positive when the second method is better."""
    if m1 == 0:
        raise ValueError("reference metric is zero")
    return (m1 - m2) / m1 * 100.0


def lr_at_epoch(epoch: int, initial: float = 1e-3, floor: float = 1e-6,
                decay_every: int = 20) -> float:
    """Decays to one tenth every `decay_every` epochs, never below the floor."""
    return max(initial * 0.1 ** (epoch // decay_every), floor)


# -- optimizer ------------------------------------------------------------------

@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: OptimizerState, lr: float):
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1 ** t)
        v_hat = state.v[name] / (1 - state.beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


def clip_global_norm(params: dict, max_norm: float = 5.0):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale


# -- model-level evaluation -------------------------------------------------------

def predict_split(prepared: PreparedData, split: str, params: dict,
                  config: ModelConfig, mask, batch_size: int = 32):
    """Forward over all windows of a split; returns de-normalized arrays."""
    starts = prepared.starts(split)
    preds, targets, valids = [], [], []
    for lo in range(0, len(starts), batch_size):
        batch = prepared.batch(starts[lo:lo + batch_size])
        out = model_forward(Tensor(batch.x), batch.d_hist, batch.f_fut,
                            mask, params, config)
        preds.append(prepared.scaler.invert(out.data))
        targets.append(batch.y)
        valids.append(batch.y_valid)
    return (np.concatenate(preds), np.concatenate(targets),
            np.concatenate(valids))


def evaluate_split(prepared, split, params, config, mask,
                   batch_size: int = 32, horizons=(3, 6, 12)) -> MetricsReport:
    preds, targets, valids = predict_split(prepared, split, params, config,
                                           mask, batch_size)
    return evaluate(preds, targets, valids, horizons)


def persistence_mae(prepared: PreparedData, split: str = "test") -> float:
    """Masked MAE of predicting every future step as the last observed value."""
    starts = prepared.starts(split)
    ds, s, t = prepared.dataset, prepared.s, prepared.t
    last = ds.traffic[starts + s - 1]                         # [B, N]
    y_steps = starts[:, None] + s + np.arange(t)[None, :]
    target = ds.traffic[y_steps]                              # [B, T, N]
    valid = ds.valid[y_steps]
    diff = np.abs(last[:, None, :] - target) * valid
    return float(diff.sum() / valid.sum())


# -- training loop ------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Path
    history: list
    best_val_mae: float


def train(prepared: PreparedData, mask, config: ModelConfig, seed: int,
          out_dir, epochs: int = 100, batch_size: int = 32,
          clip_norm: float = 5.0, log=None) -> TrainResult:
    """Shuffled mini-batch training with per-epoch validation; the best
    validation checkpoint is kept. Fully deterministic for a fixed seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.validate()
    params = init_params(config, seed)
    state = OptimizerState()
    rng = np.random.default_rng(seed)
    train_starts = prepared.starts("train")
    mean, std = float(prepared.scaler.mean), float(prepared.scaler.std)

    ckpt_path = out / "checkpoint.bin"
    history, best = [], np.inf
    for epoch in range(epochs):
        lr = lr_at_epoch(epoch)
        order = rng.permutation(len(train_starts))
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, len(order), batch_size):
            batch = prepared.batch(train_starts[order[lo:lo + batch_size]])
            for p in params.values():
                p.grad = None
            pred = model_forward(Tensor(batch.x), batch.d_hist, batch.f_fut,
                                 mask, params, config)
            pred_phys = pred * std + mean
            loss = masked_mae_loss(pred_phys, batch.y, batch.y_valid)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}; last good checkpoint "
                    f"(if any) is {ckpt_path}")
            loss.backward()
            clip_global_norm(params, clip_norm)
            adam_step(params, state, lr)
            epoch_loss += float(loss.data)
            n_batches += 1
        train_loss = epoch_loss / n_batches
        val = evaluate_split(prepared, "val", params, config, mask, batch_size)
        row = {"epoch": epoch, "lr": lr, "train_loss": train_loss,
               "val_mae": val.rows["all"].mae, "val_rmse": val.rows["all"].rmse,
               "val_mape": val.rows["all"].mape}
        history.append(row)
        if log:
            log(f"epoch {epoch:3d}  lr {lr:.1e}  train {train_loss:.4f}  "
                f"val MAE {row['val_mae']:.4f}")
        if row["val_mae"] < best:
            best = row["val_mae"]
            save_checkpoint(ckpt_path, params, config, seed)

    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
        writer.writeheader()
        writer.writerows(history)
    return TrainResult(checkpoint=ckpt_path, history=history, best_val_mae=best)
