"""L1 objective, Adam, per-epoch learning-rate decay and early stopping."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from mlpiconv.data import gather, window_starts
from mlpiconv.errors import ConfigError, ShapeError, TrainingError
from mlpiconv.model import IConvConfig, IConvModel, ModelParams

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.001
    patience: int = 3
    batch_size: int = 32
    scheduler_gamma: float = 0.5
    seed: int = 2021
    max_grad_norm: float | None = None
    eval_batch_size: int = 256

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def l1_loss(pred, target):
    """Mean absolute error over every element, plus its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(weights: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, w in weights.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {w.shape}")
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_schedule(epoch, base_lr, gamma=0.5):
    """Exponential decay applied once per epoch; ``epoch`` counts from 1."""
    if epoch < 1:
        raise ValueError("epoch counts from 1")
    return base_lr * gamma ** (epoch - 1)


def _clip(grads, max_norm):
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale


def predict(params: ModelParams, cfg: IConvConfig, values, rng_range, batch_size=256):
    """Eval-mode predictions and targets for every window in ``rng_range``."""
    model = IConvModel(cfg, params)
    starts = window_starts(rng_range, cfg.T, cfg.L)
    preds, ys = [], []
    for i in range(0, len(starts), batch_size):
        x, y = gather(values, starts[i:i + batch_size], cfg.T, cfg.L)
        preds.append(model.forward(x, train=False))
        ys.append(y)
    if not preds:
        return np.zeros((0, cfg.C, cfg.L)), np.zeros((0, cfg.C, cfg.L))
    return np.concatenate(preds), np.concatenate(ys)


def evaluate(params: ModelParams, cfg: IConvConfig, values, rng_range, batch_size=256):
    """(MSE, MAE) over all windows, channels and steps of ``rng_range``."""
    pred, y = predict(params, cfg, values, rng_range, batch_size)
    if pred.size == 0:
        raise ConfigError(f"no evaluation windows in range {rng_range}")
    diff = pred - y
    return float((diff ** 2).mean()), float(np.abs(diff).mean())


@dataclass
class TrainResult:
    params: ModelParams
    history: list
    best_epoch: int
    best_val_mae: float


def train(params: ModelParams, cfg: IConvConfig, values, split, tcfg: TrainConfig,
          history_path=None, progress=None) -> TrainResult:
    """Mini-batch Adam on the L1 loss with validation-MAE model selection.

    ``values`` is the (rows, C) standardized series and ``split`` carries the
    train/val row ranges. ``params`` is updated in place; the returned result
    holds a copy of the best-validation snapshot.
    """
    train_starts = window_starts(split.train, cfg.T, cfg.L)
    val_starts = window_starts(split.val, cfg.T, cfg.L)
    if len(train_starts) == 0 or len(val_starts) == 0:
        raise ConfigError("train and validation splits must each contain at least one window")
    shuffle_rng = np.random.default_rng([tcfg.seed, 1])
    model = IConvModel(cfg, params)
    adam = AdamState()
    best, best_mae, best_epoch, stale = params.copy(), np.inf, 0, 0
    history = []
    sink = open(history_path, "w") if history_path else None
    try:
        for epoch in range(1, tcfg.epochs + 1):
            lr = lr_schedule(epoch, tcfg.lr, tcfg.scheduler_gamma)
            tic = time.perf_counter()
            order = shuffle_rng.permutation(train_starts)
            losses = []
            for i in range(0, len(order), tcfg.batch_size):
                x, y = gather(values, order[i:i + tcfg.batch_size], cfg.T, cfg.L)
                pred = model.forward(x, train=True)
                loss, dpred = l1_loss(pred, y)
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {i // tcfg.batch_size}")
                grads, _ = model.backward(dpred)
                if tcfg.max_grad_norm:
                    _clip(grads, tcfg.max_grad_norm)
                adam_step(params.weights, grads, adam, lr)
                losses.append(loss)
            _, val_mae = evaluate(params, cfg, values, split.val, tcfg.eval_batch_size)
            if not np.isfinite(val_mae):
                raise TrainingError(f"non-finite validation MAE at epoch {epoch}")
            rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mae": val_mae,
                   "lr": lr, "seconds": round(time.perf_counter() - tic, 3)}
            history.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
                sink.flush()
            if progress:
                progress(rec)
            log.info("epoch %d  train %.5f  val MAE %.5f  lr %.2e", epoch, rec["train_loss"], val_mae, lr)
            if val_mae < best_mae:
                best, best_mae, best_epoch, stale = params.copy(), val_mae, epoch, 0
            else:
                stale += 1
                if stale >= tcfg.patience:
                    log.info("early stop after epoch %d (best epoch %d)", epoch, best_epoch)
                    break
    finally:
        if sink:
            sink.close()
    return TrainResult(best, history, best_epoch, float(best_mae))
