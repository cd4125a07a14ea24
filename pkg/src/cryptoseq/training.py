"""MSE training with Adam, variational dropout and best-epoch snapshotting."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cells import (DropoutMasks, NetworkSpec, RecurrentNetwork, backward, flatten_grads,
                    forward)
from .dataset import WindowedDataset
from .errors import DivergenceError, ShapeError
from .numerics import RandomStream


def _residuals(pred, target) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} targets")
    if p.size == 0:
        raise ValueError("cannot score an empty sequence")
    return p - t


def mse(pred, target) -> float:
    r = _residuals(pred, target)
    return float(np.mean(r * r))


def rmse(pred, target) -> float:
    return math.sqrt(mse(pred, target))


# --- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    apply_dropout: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive (use inf to disable)")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def for_family(cls, family: str, **overrides) -> "TrainConfig":
        """Defaults with the family's batch size (125 dense, 100 recurrent)."""
        overrides.setdefault("batch_size", 125 if family == "SimpleNN" else 100)
        return cls(**overrides)


# --- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState, cfg: TrainConfig) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads and optimizer moments differ in count")
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(f"parameter {p.shape} vs gradient {np.shape(g)}")
    if state.step_count < 0:
        raise ValueError("step_count must be non-negative")
    t = state.step_count + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    state.step_count = t


def clip_global_norm(grads: Sequence[np.ndarray], limit: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``limit``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if math.isfinite(limit) and norm > limit:
        scale = limit / norm
        for g in grads:
            g *= scale
    return norm


# --- dropout masks -----------------------------------------------------------

def sample_masks(spec: NetworkSpec, rng: RandomStream, batch: int = 1) -> DropoutMasks:
    """Fresh masks for ``batch`` sequences, one column per sequence.

    A mask column is reused at every timestep of its sequence.  Rate 0 gives
    all-ones masks and draws nothing from ``rng``.
    """
    inputs, recurrent = [], []
    for k, (kind, n_in, n_out) in enumerate(zip(spec.kinds, spec.layer_inputs(), spec.layer_sizes)):
        if kind == "dense":
            # only the flattened window feeding SimpleNN is dropped
            inputs.append(rng.keep_mask((n_in, batch), spec.dropout_rate) if k == 0 else None)
            recurrent.append(None)
        else:
            inputs.append(rng.keep_mask((n_in, batch), spec.dropout_rate))
            recurrent.append(rng.keep_mask((n_out, batch), spec.recurrent_dropout_rate))
    return DropoutMasks(inputs, recurrent)


# --- training loop -----------------------------------------------------------

@dataclass
class TrainReport:
    train_loss_curve: list = field(default_factory=list)
    val_loss_curve: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    rmse_train: Optional[float] = None
    rmse_test: Optional[float] = None

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss_curve)

    def summary(self) -> dict:
        return {"best_epoch": self.best_epoch, "rmse_train": self.rmse_train,
                "rmse_test": self.rmse_test}


def predict(net: RecurrentNetwork, data: WindowedDataset, chunk: int = 512) -> np.ndarray:
    """Inference-path predictions (no dropout) for every sample."""
    out = np.empty(len(data))
    for start in range(0, len(data), chunk):
        stop = min(start + chunk, len(data))
        pred, _ = forward(net, data.windows[start:stop])
        out[start:stop] = pred
    return out


def evaluate(net: RecurrentNetwork, data: WindowedDataset) -> float:
    """RMSE of inference predictions against the (normalized) targets."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    _check_width(net, data)
    return rmse(predict(net, data), data.targets)


def persistence_rmse(data: WindowedDataset) -> float:
    """RMSE of predicting each target by its previous day's value."""
    return rmse(data.previous_target, data.targets)


def _check_width(net: RecurrentNetwork, data: WindowedDataset) -> None:
    spec = net.spec
    if data.lookback != spec.lookback or data.width != spec.input_width:
        raise ShapeError(f"dataset windows are {data.lookback}x{data.width}, "
                         f"network expects {spec.lookback}x{spec.input_width}")


def _canonical(data: WindowedDataset) -> WindowedDataset:
    order = np.argsort(data.target_dates, kind="stable")
    return data.take(order)


def train(net: RecurrentNetwork, train_set: WindowedDataset, val_set: WindowedDataset,
          cfg: TrainConfig, test_set: Optional[WindowedDataset] = None):
    """Fit ``net`` and return ``(best_net, report)``; ``net`` itself is not modified.

    Samples are put in target-date order before the seeded shuffle, so the
    result does not depend on the order the caller supplies them in.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be nonempty")
    _check_width(net, train_set)
    _check_width(net, val_set)
    work = net.copy()
    report = TrainReport()
    if cfg.epochs == 0:
        return work, report

    data = _canonical(train_set)
    root = RandomStream(cfg.seed)
    shuffle_rng = root.split()
    mask_rng = root.split()
    params = work.arrays()
    adam = AdamState.zeros_like(params)
    best, best_val = None, math.inf
    n = len(data)

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        sq_sum = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            X, y = data.windows[idx], data.targets[idx]
            masks = sample_masks(work.spec, mask_rng, len(idx)) if cfg.apply_dropout else None
            pred, tape = forward(work, X, masks)
            resid = pred - y
            batch_sq = float(np.sum(resid * resid))
            if not math.isfinite(batch_sq):
                raise DivergenceError(epoch, b, batch_sq)
            sq_sum += batch_sq
            grads = flatten_grads(backward(work, tape, (2.0 / len(idx)) * resid, masks))
            clip_global_norm(grads, cfg.clip_norm)
            adam_step(params, grads, adam, cfg)
        val_loss = mse(predict(work, val_set), val_set.targets)
        if not math.isfinite(val_loss):
            raise DivergenceError(epoch, "validation", val_loss)
        report.train_loss_curve.append(sq_sum / n)
        report.val_loss_curve.append(val_loss)
        if val_loss < best_val:
            best_val, best = val_loss, work.copy()
            report.best_epoch = epoch

    report.rmse_train = evaluate(best, train_set)
    if test_set is not None:
        report.rmse_test = evaluate(best, test_set)
    return best, report


# --- serialization -----------------------------------------------------------

def write_report(report: TrainReport, csv_path, json_path=None) -> None:
    """Loss curves as ``epoch,train_loss,val_loss`` CSV plus a JSON summary."""
    with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, (tl, vl) in enumerate(zip(report.train_loss_curve, report.val_loss_curve)):
            w.writerow([e, repr(tl), repr(vl)])
    if json_path is not None:
        Path(json_path).write_text(json.dumps(report.summary(), indent=2) + "\n", encoding="utf-8")


def read_report(csv_path, json_path=None) -> TrainReport:
    report = TrainReport()
    with Path(csv_path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["epoch", "train_loss", "val_loss"]:
        raise ValueError(f"{csv_path}: not a training report")
    for row in rows[1:]:
        report.train_loss_curve.append(float(row[1]))
        report.val_loss_curve.append(float(row[2]))
    if json_path is not None:
        summary = json.loads(Path(json_path).read_text(encoding="utf-8"))
        report.best_epoch = summary["best_epoch"]
        report.rmse_train = summary["rmse_train"]
        report.rmse_test = summary["rmse_test"]
    return report
