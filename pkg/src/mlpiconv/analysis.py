"""Post-hoc analyses: gradient receptive fields, weight export, ICM bench, forecast panels."""
from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from mlpiconv.data import gather
from mlpiconv.errors import ShapeError
from mlpiconv.model import IConvConfig, IConvModel, ModelParams, revin_denormalize

log = logging.getLogger(__name__)


def minmax_scale(v):
    """Scale to [0, 1]; a constant vector maps to all zeros."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


@dataclass
class ReceptiveField:
    gradients: np.ndarray  # scaled to [0, 1], length T
    raw: np.ndarray  # before scaling
    sample_count: int
    target_index: int
    mode: str
    metadata: dict = field(default_factory=dict)

    def to_record(self):
        return {"kind": "receptive_field", "mode": self.mode, "target_index": self.target_index,
                "sample_count": self.sample_count, "gradients": self.gradients.tolist(),
                "raw": self.raw.tolist(), **self.metadata}


def receptive_field(params: ModelParams, cfg: IConvConfig, x, n_samples=50, target_index=None,
                    mode="averaged", rng=None) -> ReceptiveField:
    """Sensitivity of the mid-horizon forecast to each input step.

    ``x`` is a pool of input windows (B, C, T). ``n_samples`` of them are drawn
    (without replacement, via ``rng``); with fewer available, all are used.

    mode="averaged": inputs are averaged over samples and channels first,
    the model is run on that single averaged series (fed to every channel),
    and G = dF/dX_G with F the channel mean of the output at ``target_index``.

    mode="per_sample": F is the sample-and-channel mean of the outputs at
    ``target_index``; its gradient w.r.t. each input is summed over samples
    and channels (the change in F when every input at step t moves together).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (cfg.C, cfg.T):
        raise ShapeError(f"expected windows of shape (B, {cfg.C}, {cfg.T}), got {x.shape}")
    if target_index is None:
        target_index = cfg.L // 2
    if len(x) < n_samples:
        log.warning("only %d windows available for %d requested samples", len(x), n_samples)
        n_samples = len(x)
    if rng is not None and n_samples < len(x):
        x = x[np.sort(rng.choice(len(x), n_samples, replace=False))]
    else:
        x = x[:n_samples]
    model = IConvModel(cfg, params)
    if mode == "averaged":
        xg = x.mean(axis=(0, 1))
        inp = np.broadcast_to(xg, (1, cfg.C, cfg.T)).copy()
        out = model.forward(inp, train=False)
        dout = np.zeros_like(out)
        dout[0, :, target_index] = 1.0 / cfg.C
        _, dx = model.backward(dout)
        raw = dx[0].sum(axis=0)
    elif mode == "per_sample":
        out = model.forward(x, train=False)
        dout = np.zeros_like(out)
        dout[:, :, target_index] = 1.0 / (len(x) * cfg.C)
        _, dx = model.backward(dout)
        raw = dx.sum(axis=(0, 1))
    else:
        raise ValueError(f"unknown receptive-field mode {mode!r}")
    return ReceptiveField(minmax_scale(raw), raw, len(x), target_index, mode)


def export_weight_matrix(params: ModelParams):
    """The T x L trend-regression weights with axis labels for a heatmap."""
    W = params.weights["reg.W"]
    return {"kind": "weight_matrix", "name": "reg.W", "shape": list(W.shape),
            "rows": "input step", "cols": "output step", "values": W.tolist()}


def diagonal_dominance(W):
    """(mean |diagonal|, mean |off-diagonal|) of a square matrix."""
    W = np.abs(np.asarray(W))
    diag = np.diag(W)
    off = (W.sum() - diag.sum()) / (W.size - diag.size)
    return float(diag.mean()), float(off)


# ---------------------------------------------------------------- ICM bench


def icm_matmul(h, W_cr, b_cr, W_ce, b_ce):
    """ICM with its two channel mixers written as matrix products."""
    bar = np.maximum(np.matmul(W_cr, h) + b_cr[:, None], 0.0)
    return np.maximum(np.matmul(W_ce, bar) + b_ce[:, None], 0.0) + h


def conv1d_dense(h, weight, bias):
    """Dense stride-1 valid convolution, weight (out, in, P), looping over taps and inputs."""
    B, cin, N = h.shape
    cout, _, P = weight.shape
    n_out = N - P + 1
    out = np.zeros((B, cout, n_out))
    for p in range(P):
        for k in range(cin):
            out += weight[None, :, k, p, None] * h[:, k, None, p:p + n_out]
    return out + bias[None, :, None]


def icm_conv(h, W_cr, b_cr, W_ce, b_ce):
    """ICM with its mixers written as explicit 1x1 convolutions."""
    bar = np.maximum(conv1d_dense(h, W_cr[:, :, None], b_cr), 0.0)
    return np.maximum(conv1d_dense(bar, W_ce[:, :, None], b_ce), 0.0) + h


def _timeit(fn, repeats):
    if repeats <= 0:
        return []
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        tic = time.perf_counter()
        fn()
        times.append(time.perf_counter() - tic)
    return times


def icm_equivalence_bench(C, M, N, seed=0, repeats=3, batch=1, tol=1e-9):
    """Compare matmul- and 1x1-conv-based ICM on identical N(0, 0.01) weights."""
    if min(C, M, N, batch) < 1:
        raise ValueError(f"dimensions must be positive (C={C}, M={M}, N={N}, batch={batch})")
    rng = np.random.default_rng(seed)
    W_cr = rng.normal(0, 0.01, (C, C * M))
    W_ce = rng.normal(0, 0.01, (C * M, C))
    b_cr = rng.normal(0, 0.01, C)
    b_ce = rng.normal(0, 0.01, C * M)
    h = rng.normal(size=(batch, C * M, N))
    a = icm_matmul(h, W_cr, b_cr, W_ce, b_ce)
    b = icm_conv(h, W_cr, b_cr, W_ce, b_ce)
    diff = float(np.abs(a - b).max())
    t_mm = _timeit(lambda: icm_matmul(h, W_cr, b_cr, W_ce, b_ce), repeats)
    t_cv = _timeit(lambda: icm_conv(h, W_cr, b_cr, W_ce, b_ce), repeats)
    timing = {}
    if repeats > 0:
        timing = {"matmul_median_s": statistics.median(t_mm), "conv_median_s": statistics.median(t_cv)}
    return {"kind": "icm_bench", "C": C, "M": M, "N": N, "batch": batch, "seed": seed, "repeats": repeats,
            "max_abs_diff": diff, "tolerance": tol, "equivalent": diff <= tol, "timing": timing}


# ---------------------------------------------------------------- forecast panel


def export_forecast(params: ModelParams, cfg: IConvConfig, x, y=None):
    """Every intermediate series for one window: trend, per-layer corrections, output.

    Series in ``trend``, ``corrections`` and ``scaled_corrections`` live in
    the RevIN-normalized space; ``trend_denorm`` and ``prediction`` are in data
    units.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.C, cfg.T):
        raise ShapeError(f"expected one window of shape {(cfg.C, cfg.T)}, got {x.shape}")
    model = IConvModel(cfg, params)
    pred = model.forward(x[None], train=False, trace=True)[0]
    tr = model.trace
    model._cache = None
    rstate = tr["revin"]
    layers = tr["layers"]
    trend = (layers[0][0] if layers else tr["y_norm"])[0]
    corrections = [c[4][0] for c in layers]
    scaled = [c[4][0] * c[6][0][:, None] for c in layers]
    return {
        "kind": "forecast",
        "input": x.tolist(),
        "truth": None if y is None else np.asarray(y).tolist(),
        "trend": trend.tolist(),
        "trend_denorm": revin_denormalize(trend[None], rstate)[0].tolist(),
        "corrections": [v.tolist() for v in corrections],
        "scaled_corrections": [v.tolist() for v in scaled],
        "prediction": pred.tolist(),
    }


def forecast_window(values, start, cfg):
    x, y = gather(values, [start], cfg.T, cfg.L)
    return x[0], y[0]
