"""The MLP-IConv forecaster.

Pipeline for an input batch ``x`` of shape (B, C, T)::

    RevIN normalize -> residual MLP encoder -> linear trend head (C x L)
    -> for each kernel size P_i:  CIPC -> ICM -> CIPE -> y += V * Var(y)
    -> RevIN denormalize

Every stage has a hand-written backward pass. Parameters live in a flat,
ordered name -> array mapping so the optimizer and checkpoint code can treat
them uniformly.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from mlpiconv.errors import ConfigError, ShapeError, StateError
from mlpiconv.numerics import kernels as K
from mlpiconv.numerics import ops

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_icm", "no_iconv")
CANONICAL_STRIDES = (3, 4)


@dataclass
class IConvConfig:
    C: int
    T: int = 96
    L: int = 96
    d_model: int = 256
    P: tuple = (12, 8, 4)
    S: int = 4
    M: int = 4
    ablation: str = "full"
    enc_blocks: int = 1
    scale: str = "var"  # multiply the correction by "var" or "std" of the trend
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5
    revin_epsilon: float = 1e-5
    init: str = "normal"  # "normal" or "fan_in_uniform"
    init_std: float = 0.01

    def __post_init__(self):
        self.P = tuple(int(p) for p in self.P)
        self.validate()

    def validate(self):
        for name in ("C", "T", "L", "d_model", "S", "M", "enc_blocks"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.scale not in ("var", "std"):
            raise ConfigError(f"scale must be 'var' or 'std', got {self.scale!r}")
        if self.init not in ("normal", "fan_in_uniform"):
            raise ConfigError(f"unknown init scheme {self.init!r}")
        if not self.P:
            raise ConfigError("at least one kernel size is required")
        if any(a <= b for a, b in zip(self.P, self.P[1:])):
            raise ConfigError(f"kernel sizes must strictly decrease, got P={list(self.P)}")
        for p in self.P:
            K.conv_out_len(self.L, p, self.S)

    @property
    def canonical(self):
        """True when the stride is one of the values used for the published grids."""
        return self.S in CANONICAL_STRIDES

    @property
    def n_layers(self):
        return 0 if self.ablation == "no_iconv" else len(self.P)

    def layer_lengths(self):
        return [K.conv_out_len(self.L, p, self.S) for p in self.P]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["P"] = list(self.P)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    """Learnable weights plus non-learnable buffers (batch-norm running stats)."""

    weights: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.weights.items()},
                           {k: v.copy() for k, v in self.buffers.items()})

    def count(self, prefix=""):
        return int(sum(v.size for k, v in self.weights.items() if k.startswith(prefix)))

    def all_finite(self):
        return all(np.isfinite(v).all() for v in (*self.weights.values(), *self.buffers.values()))


def param_shapes(cfg: IConvConfig):
    """Ordered name -> shape map of learnable parameters for ``cfg``."""
    C, T, L, d, M = cfg.C, cfg.T, cfg.L, cfg.d_model, cfg.M
    shapes = {}
    for j in range(cfg.enc_blocks):
        shapes[f"enc.{j}.W_p"] = (T, d)
        shapes[f"enc.{j}.b_p"] = (d,)
        shapes[f"enc.{j}.W_r"] = (d, T)
        shapes[f"enc.{j}.b_r"] = (T,)
    shapes["reg.W"] = (T, L)
    shapes["reg.b"] = (L,)
    if cfg.ablation == "no_iconv":
        return shapes
    for i, p in enumerate(cfg.P):
        pre = f"iconv.{i}"
        shapes[f"{pre}.bn.gamma"] = (C,)
        shapes[f"{pre}.bn.beta"] = (C,)
        shapes[f"{pre}.cipc.kernel"] = (C, M, p)
        shapes[f"{pre}.cipc.bias"] = (C, M)
        if cfg.ablation == "full":
            shapes[f"{pre}.icm.W_cr"] = (C, C * M)
            shapes[f"{pre}.icm.b_cr"] = (C,)
            shapes[f"{pre}.icm.W_ce"] = (C * M, C)
            shapes[f"{pre}.icm.b_ce"] = (C * M,)
        shapes[f"{pre}.cipe.kernel"] = (C, M, p)
        shapes[f"{pre}.cipe.bias"] = (C,)
    return shapes


def _fan_in(name, shape):
    if name.endswith(("W_p", "W_r", "reg.W")):
        return shape[0]
    if name.endswith(("W_cr", "W_ce")):
        return shape[1]
    if name.endswith("cipc.kernel"):
        return shape[2]
    if name.endswith("cipe.kernel"):
        return shape[1] * shape[2]
    return 1


def init_params(cfg: IConvConfig, rng: np.random.Generator) -> ModelParams:
    """Weights ~ N(0, init_std^2) (or fan-in uniform), biases 0, BN gamma 1 / beta 0."""
    params = ModelParams()
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            params.weights[name] = np.ones(shape)
        elif leaf in ("beta", "bias") or leaf.startswith("b_") or name == "reg.b":
            params.weights[name] = np.zeros(shape)
        elif cfg.init == "normal":
            params.weights[name] = rng.normal(0.0, cfg.init_std, size=shape)
        else:
            bound = 1.0 / np.sqrt(_fan_in(name, shape))
            params.weights[name] = rng.uniform(-bound, bound, size=shape)
    for i in range(cfg.n_layers):
        params.buffers[f"iconv.{i}.bn.running_mean"] = np.zeros(cfg.C)
        params.buffers[f"iconv.{i}.bn.running_var"] = np.ones(cfg.C)
    return params


# ---------------------------------------------------------------- RevIN


@dataclass
class RevinState:
    mean: np.ndarray
    variance: np.ndarray
    epsilon: float

    @property
    def std(self):
        return np.sqrt(self.variance + self.epsilon)


def revin_normalize(x, eps=1e-5):
    """Per-instance, per-channel z-scoring along time. Works on (C, T) or (B, C, T)."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1)
    var = x.var(axis=-1)
    state = RevinState(mean, var, eps)
    return (x - mean[..., None]) / state.std[..., None], state


def revin_denormalize(y, state: RevinState):
    y = np.asarray(y, dtype=np.float64)
    if y.shape[:-1] != state.mean.shape:
        raise ShapeError(f"cannot denormalize {y.shape} with statistics of shape {state.mean.shape}")
    return y * state.std[..., None] + state.mean[..., None]


# ---------------------------------------------------------------- layers
# Public layer functions accept (C, T) matrices or (B, C, T) batches.


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    return (x[None], True) if x.ndim == 2 else (x, False)


def mlp_encode(x, params: ModelParams, cfg: IConvConfig):
    x, sq = _batched(x)
    out, _ = _encode(x, params.weights, cfg)
    return out[0] if sq else out


def trend_regress(x_enc, params: ModelParams):
    x_enc, sq = _batched(x_enc)
    out, _ = ops.linear(x_enc, params.weights["reg.W"], params.weights["reg.b"])
    return out[0] if sq else out


def cipc_forward(y, params: ModelParams, cfg: IConvConfig, layer, train=False):
    y, sq = _batched(y)
    out, _ = _cipc(y, params, cfg, layer, train)
    return out[0] if sq else out


def icm_forward(h, params: ModelParams, layer):
    h, sq = _batched(h)
    out, _ = _icm(h, params.weights, layer)
    return out[0] if sq else out


def cipe_forward(h, params: ModelParams, cfg: IConvConfig, layer):
    h, sq = _batched(h)
    out = K.grouped_transposed_conv1d(h, params.weights[f"iconv.{layer}.cipe.kernel"],
                                      params.weights[f"iconv.{layer}.cipe.bias"], cfg.S, target_len=cfg.L)
    return out[0] if sq else out


def apply_correction(y, v, scale="var"):
    """y + V * Var(y), the variance broadcast along time per channel."""
    g = ops.variance_per_channel(y)
    if scale == "std":
        g = np.sqrt(g)
    return y + v * g[..., None]


def iconv_layer(y, params: ModelParams, cfg: IConvConfig, layer, train=False):
    y, sq = _batched(y)
    out, _ = _iconv(y, params, cfg, layer, train)
    return out[0] if sq else out


def model_forward(x, params: ModelParams, cfg: IConvConfig, train=False):
    return IConvModel(cfg, params).forward(x, train=train)


# ---------------------------------------------------------------- internals


def _encode(x, w, cfg):
    caches = []
    h = x
    for j in range(cfg.enc_blocks):
        pre, c1 = ops.linear(h, w[f"enc.{j}.W_p"], w[f"enc.{j}.b_p"])
        act = ops.relu(pre)
        enc, c2 = ops.linear(act, w[f"enc.{j}.W_r"], w[f"enc.{j}.b_r"])
        caches.append((c1, pre, c2))
        h = h + enc
    return h, caches


def _encode_backward(dh, w, cfg, caches, grads):
    for j in reversed(range(cfg.enc_blocks)):
        c1, pre, c2 = caches[j]
        dact, grads[f"enc.{j}.W_r"], grads[f"enc.{j}.b_r"] = ops.linear_backward(dh, c2, w[f"enc.{j}.W_r"])
        dpre = ops.relu_backward(dact, pre)
        dx, grads[f"enc.{j}.W_p"], grads[f"enc.{j}.b_p"] = ops.linear_backward(dpre, c1, w[f"enc.{j}.W_p"])
        dh = dh + dx
    return dh


def _cipc(y, params, cfg, i, train):
    w, buf = params.weights, params.buffers
    pre = f"iconv.{i}"
    z, bn_cache = ops.batch_norm(y, w[f"{pre}.bn.gamma"], w[f"{pre}.bn.beta"],
                                 buf[f"{pre}.bn.running_mean"], buf[f"{pre}.bn.running_var"],
                                 train, cfg.bn_momentum, cfg.bn_epsilon)
    hpre = K.grouped_conv1d(z, w[f"{pre}.cipc.kernel"], w[f"{pre}.cipc.bias"], cfg.S)
    return ops.relu(hpre), (bn_cache, z, hpre)


def _cipc_backward(dh, params, cfg, i, cache, grads):
    w = params.weights
    pre = f"iconv.{i}"
    bn_cache, z, hpre = cache
    dhpre = ops.relu_backward(dh, hpre)
    dz, grads[f"{pre}.cipc.kernel"], grads[f"{pre}.cipc.bias"] = K.grouped_conv1d_backward(
        dhpre, z, w[f"{pre}.cipc.kernel"], cfg.S)
    dy, grads[f"{pre}.bn.gamma"], grads[f"{pre}.bn.beta"] = ops.batch_norm_backward(dz, bn_cache)
    return dy


def _icm(h, w, i):
    pre = f"iconv.{i}.icm"
    W_cr, b_cr, W_ce, b_ce = w[f"{pre}.W_cr"], w[f"{pre}.b_cr"], w[f"{pre}.W_ce"], w[f"{pre}.b_ce"]
    if h.shape[1] != W_cr.shape[1]:
        raise ShapeError(f"ICM input has {h.shape[1]} rows, expected {W_cr.shape[1]}")
    # mixing runs along the channel (row) axis, each time column independently
    bar_pre = np.matmul(W_cr, h) + b_cr[:, None]
    bar = ops.relu(bar_pre)
    exp_pre = np.matmul(W_ce, bar) + b_ce[:, None]
    return ops.relu(exp_pre) + h, (h, bar_pre, bar, exp_pre)


def _icm_backward(dout, w, i, cache, grads):
    pre = f"iconv.{i}.icm"
    h, bar_pre, bar, exp_pre = cache
    dexp = ops.relu_backward(dout, exp_pre)
    grads[f"{pre}.W_ce"] = np.einsum("bkn,brn->kr", dexp, bar)
    grads[f"{pre}.b_ce"] = dexp.sum(axis=(0, 2))
    dbar = ops.relu_backward(np.matmul(w[f"{pre}.W_ce"].T, dexp), bar_pre)
    grads[f"{pre}.W_cr"] = np.einsum("brn,bkn->rk", dbar, h)
    grads[f"{pre}.b_cr"] = dbar.sum(axis=(0, 2))
    return dout + np.matmul(w[f"{pre}.W_cr"].T, dbar)


def _iconv(y, params, cfg, i, train):
    w = params.weights
    h, c_cipc = _cipc(y, params, cfg, i, train)
    if cfg.ablation == "full":
        hh, c_icm = _icm(h, w, i)
    else:
        hh, c_icm = h, None
    v = K.grouped_transposed_conv1d(hh, w[f"iconv.{i}.cipe.kernel"], w[f"iconv.{i}.cipe.bias"],
                                    cfg.S, target_len=cfg.L)
    var = ops.variance_per_channel(y)
    gate = np.sqrt(var) if cfg.scale == "std" else var
    out = y + v * gate[..., None]
    return out, (y, c_cipc, c_icm, hh, v, var, gate)


def _iconv_backward(dout, params, cfg, i, cache, grads):
    w = params.weights
    y, c_cipc, c_icm, hh, v, var, gate = cache
    dv = dout * gate[..., None]
    dgate = (dout * v).sum(axis=-1)
    if cfg.scale == "std":
        dvar = dgate * 0.5 / np.where(gate > 0, gate, np.inf)
    else:
        dvar = dgate
    dy = dout + ops.variance_backward(dvar, y)
    dhh, grads[f"iconv.{i}.cipe.kernel"], grads[f"iconv.{i}.cipe.bias"] = K.grouped_transposed_conv1d_backward(
        dv, hh, w[f"iconv.{i}.cipe.kernel"], cfg.S)
    dh = _icm_backward(dhh, w, i, c_icm, grads) if cfg.ablation == "full" else dhh
    return dy + _cipc_backward(dh, params, cfg, i, c_cipc, grads)


class IConvModel:
    """Stateful forward/backward driver around ``ModelParams``.

    ``forward`` caches activations; ``backward`` consumes them and returns
    parameter gradients plus the gradient w.r.t. the (raw) input. RevIN
    statistics are treated as constants during differentiation.
    """

    def __init__(self, cfg: IConvConfig, params: ModelParams):
        self.cfg = cfg
        self.params = params
        self._cache = None

    def forward(self, x, train=False, trace=False):
        x, sq = _batched(x)
        cfg = self.cfg
        if x.shape[1:] != (cfg.C, cfg.T):
            raise ShapeError(f"input {x.shape[1:]} does not match (C, T) = {(cfg.C, cfg.T)}")
        w = self.params.weights
        xn, rstate = revin_normalize(x, cfg.revin_epsilon)
        henc, enc_caches = _encode(xn, w, cfg)
        y, reg_cache = ops.linear(henc, w["reg.W"], w["reg.b"])
        layer_caches = []
        for i in range(cfg.n_layers):
            y, c = _iconv(y, self.params, cfg, i, train)
            layer_caches.append(c)
        out = revin_denormalize(y, rstate)
        self._cache = (sq, rstate, enc_caches, reg_cache, layer_caches)
        if trace:
            self.trace = {"revin": rstate, "x_enc": henc, "layers": layer_caches, "y_norm": y}
        return out[0] if sq else out

    def backward(self, dout):
        if self._cache is None:
            raise StateError("backward called before forward")
        sq, rstate, enc_caches, reg_cache, layer_caches = self._cache
        self._cache = None
        dout = np.asarray(dout, dtype=np.float64)
        if sq:
            dout = dout[None]
        cfg, w = self.cfg, self.params.weights
        grads = {}
        dy = dout * rstate.std[..., None]
        for i in reversed(range(cfg.n_layers)):
            dy = _iconv_backward(dy, self.params, cfg, i, layer_caches[i], grads)
        dh, grads["reg.W"], grads["reg.b"] = ops.linear_backward(dy, reg_cache, w["reg.W"])
        dxn = _encode_backward(dh, w, cfg, enc_caches, grads)
        dx = dxn / rstate.std[..., None]
        grads = {k: grads[k] for k in w}
        return grads, (dx[0] if sq else dx)
