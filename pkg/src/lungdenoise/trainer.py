"""Training loop: minibatch MSE under Adam with early stopping.

The epoch engine (:func:`fit_loop`) is deliberately model-agnostic: it
sees four callables (train one epoch, measure validation loss, snapshot
weights, restore weights). ``train`` wires a real model and dataset into
it. Keeping that seam explicit lets the stopping semantics be tested
against scripted loss sequences, without a network in the loop.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import Adam, no_grad, ops
from .errors import ConfigError, DivergenceFault, LengthError
from .model import DenoiseModel

PREDICT_BATCH = 32


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 150
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 5
    seed: int = 111

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class FitResult:
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int
    stop_reason: str = "max_epochs"
    history: list[EpochRow] = field(default_factory=list)


def fit_loop(max_epochs: int, patience: int, train_epoch, val_fn,
             snapshot_fn, restore_fn, on_best=None) -> FitResult:
    """Run epochs until the validation loss stalls.

    Improvement is a strict ``<`` against the best seen value, with no
    tolerance band. After ``patience`` consecutive epochs without
    improvement the loop stops and the best snapshot is restored, so the
    caller always ends up holding the best-epoch weights. The result
    records why the loop ended: ``early_stop``, ``max_epochs``, or
    ``user`` after an interrupt.
    """
    best = math.inf
    best_epoch = 0
    best_snap = None
    stall = 0
    result = FitResult(best_epoch=0, best_val_loss=math.inf, stopped_epoch=0)

    for epoch in range(1, max_epochs + 1):
        t0 = time.perf_counter()
        try:
            train_loss = float(train_epoch(epoch))
            val_loss = float(val_fn())
        except KeyboardInterrupt:
            result.stop_reason = "user"
            break
        seconds = time.perf_counter() - t0
        if not math.isfinite(train_loss) or not math.isfinite(val_loss):
            raise DivergenceFault(
                f"non-finite loss at epoch {epoch} "
                f"(train {train_loss}, val {val_loss})"
            )
        result.history.append(EpochRow(epoch, train_loss, val_loss, seconds))
        result.stopped_epoch = epoch

        if val_loss < best:
            best = val_loss
            best_epoch = epoch
            best_snap = snapshot_fn()
            stall = 0
            if on_best is not None:
                on_best(epoch, val_loss)
        else:
            stall += 1
            if stall >= patience:
                result.stop_reason = "early_stop"
                break

    if best_snap is not None:
        restore_fn(best_snap)
    result.best_epoch = best_epoch
    result.best_val_loss = best
    return result


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Shuffle order as a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def _val_loss(model: DenoiseModel, x: np.ndarray, y: np.ndarray,
              batch_size: int = PREDICT_BATCH) -> float:
    total = 0.0
    for i in range(0, len(x), batch_size):
        pred = model.predict(x[i : i + batch_size])
        d = pred.astype(np.float64) - y[i : i + batch_size]
        total += float((d * d).sum())
    return total / y.size


def train(model: DenoiseModel, x_train: np.ndarray, y_train: np.ndarray,
          x_val: np.ndarray, y_val: np.ndarray, cfg: TrainConfig,
          checkpoint_path: str | None = None,
          log_path: str | None = None,
          progress=None) -> FitResult:
    """Fit ``model`` to (noisy, clean) pairs.

    Arrays are (N, T). Validation runs in inference mode (running-stat
    normalization). When ``checkpoint_path`` is given, the file on disk
    always corresponds to the best epoch seen so far.
    """
    if x_train.shape != y_train.shape or x_val.shape != y_val.shape:
        raise LengthError("noisy/clean pair shapes differ")
    if len(x_train) == 0 or len(x_val) == 0:
        raise LengthError("training and validation splits must be non-empty")

    dt = model.store.dtype
    x_train = np.asarray(x_train, dtype=dt)
    y_train = np.asarray(y_train, dtype=dt)
    x_val = np.asarray(x_val, dtype=dt)
    y_val = np.asarray(y_val, dtype=dt)

    optimizer = Adam(model.store, lr=cfg.lr, beta1=cfg.beta1,
                     beta2=cfg.beta2, eps=cfg.adam_eps)

    def train_epoch(epoch: int) -> float:
        order = _epoch_order(cfg.seed, epoch, len(x_train))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = np.ascontiguousarray(x_train[idx])
            yb = np.ascontiguousarray(y_train[idx])[..., None]
            out = model.forward(xb, training=True)
            loss = ops.mse(out, yb)
            batch_loss = float(loss.data)
            if not math.isfinite(batch_loss):
                raise DivergenceFault(
                    f"non-finite batch loss at epoch {epoch}, "
                    f"batch {start // cfg.batch_size}"
                )
            loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            total += batch_loss * len(idx)
        return total / len(order)

    def val_fn() -> float:
        return _val_loss(model, x_val, y_val)

    def on_best(epoch: int, val_loss: float) -> None:
        if checkpoint_path is not None:
            model.save(checkpoint_path)
        if progress is not None:
            progress(f"epoch {epoch}: val {val_loss:.6g} (best)")

    result = fit_loop(cfg.epochs, cfg.patience, train_epoch, val_fn,
                      model.store.snapshot, model.store.restore, on_best)

    if progress is not None:
        progress(
            f"stopped after epoch {result.stopped_epoch} "
            f"({result.stop_reason}); best epoch {result.best_epoch} "
            f"(val {result.best_val_loss:.6g})"
        )
    if log_path is not None:
        write_runlog(log_path, result.history)
    return result


def denoise_segments(model: DenoiseModel, noisy: np.ndarray,
                     batch_size: int = PREDICT_BATCH) -> np.ndarray:
    """Inference over (N, T) noisy segments; returns (N, T) estimates."""
    noisy = np.atleast_2d(np.asarray(noisy))
    out = np.empty_like(noisy, dtype=np.float64)
    for i in range(0, len(noisy), batch_size):
        out[i : i + batch_size] = model.predict(noisy[i : i + batch_size])
    return out


def write_runlog(path: str, history: list[EpochRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for row in history:
            writer.writerow([row.epoch, f"{row.train_loss:.12g}",
                             f"{row.val_loss:.12g}", f"{row.seconds:.3f}"])
