"""Grouped 1-D convolution and its transpose, with backend selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback is used. Set ``MLPICONV_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from mlpiconv.errors import ConfigError, ShapeError
from mlpiconv.numerics import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("MLPICONV_PURE_PYTHON", "") in ("", "0"):
    try:
        from mlpiconv.numerics import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass

_BACKENDS = {"python": _pykernels}
if BACKEND == "cython":
    _BACKENDS["cython"] = _impl


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active one)."""
    if name is None:
        return _impl
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}") from None


def conv_out_len(L, P, S):
    """Output length of a valid strided convolution, N = (L - P)/S + 1."""
    if P < 1 or S < 1:
        raise ConfigError(f"kernel size and stride must be positive (P={P}, S={S})")
    if P > L:
        raise ConfigError(f"kernel size exceeds sequence length (L={L}, P={P}, S={S})")
    if (L - P) % S:
        raise ConfigError(f"(L - P) must be divisible by the stride (L={L}, P={P}, S={S})")
    return (L - P) // S + 1


def tconv_out_len(N, P, S):
    """Output length of a transposed convolution, L = (N - 1)*S + P."""
    if N < 1 or P < 1 or S < 1:
        raise ConfigError(f"invalid transposed-conv geometry (N={N}, P={P}, S={S})")
    return (N - 1) * S + P


def _as3d(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 2:
        return a[None], True
    if a.ndim != 3:
        raise ShapeError(f"expected a 2-D or 3-D array, got shape {a.shape}")
    return a, False


def grouped_conv1d(x, kernel, bias=None, stride=1, backend=None):
    """Channel-independent strided cross-correlation.

    ``x`` is (C, L) or (B, C, L); ``kernel`` is (C, M, P). Returns rows
    ordered channel-major, shape (..., C*M, N).
    """
    x, squeeze = _as3d(x)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if kernel.ndim != 3 or kernel.shape[0] != x.shape[1]:
        raise ShapeError(f"kernel {kernel.shape} does not match input {x.shape}")
    C, M, P = kernel.shape
    conv_out_len(x.shape[2], P, stride)
    if bias is None:
        bias = np.zeros((C, M))
    bias = np.ascontiguousarray(bias, dtype=np.float64).reshape(C, M)
    out = get_backend(backend).conv_forward(x, kernel, bias, stride)
    return out[0] if squeeze else out


def grouped_conv1d_backward(dout, x, kernel, stride=1, backend=None):
    """Gradients (dx, dkernel, dbias) of ``grouped_conv1d``."""
    x, squeeze = _as3d(x)
    dout, _ = _as3d(dout)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    C, M, P = kernel.shape
    N = conv_out_len(x.shape[2], P, stride)
    if dout.shape != (x.shape[0], C * M, N):
        raise ShapeError(f"upstream gradient {dout.shape} does not match output {(x.shape[0], C * M, N)}")
    dx, dk, db = get_backend(backend).conv_backward(dout, x, kernel, stride)
    return (dx[0] if squeeze else dx), dk, db


def grouped_transposed_conv1d(h, kernel, bias=None, stride=1, target_len=None, backend=None):
    """Per-channel transposed convolution that merges each channel's M rows.

    ``h`` is (C*M, N) or (B, C*M, N); ``kernel`` is (C, M, P). Output is
    (..., C, (N-1)*S + P). If ``target_len`` is given, the geometry must
    reproduce it exactly.
    """
    h, squeeze = _as3d(h)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if kernel.ndim != 3:
        raise ShapeError(f"kernel must be (C, M, P), got {kernel.shape}")
    C, M, P = kernel.shape
    if h.shape[1] != C * M:
        raise ShapeError(f"input rows {h.shape[1]} != C*M = {C * M} for kernel {kernel.shape}")
    L = tconv_out_len(h.shape[2], P, stride)
    if target_len is not None and L != target_len:
        raise ConfigError(
            f"transposed conv yields length {L}, expected {target_len} (N={h.shape[2]}, P={P}, S={stride})")
    if bias is None:
        bias = np.zeros(C)
    bias = np.ascontiguousarray(bias, dtype=np.float64).reshape(C)
    out = get_backend(backend).tconv_forward(h, kernel, bias, stride)
    return out[0] if squeeze else out


def grouped_transposed_conv1d_backward(dout, h, kernel, stride=1, backend=None):
    """Gradients (dh, dkernel, dbias) of ``grouped_transposed_conv1d``."""
    h, squeeze = _as3d(h)
    dout, _ = _as3d(dout)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    C, M, P = kernel.shape
    L = tconv_out_len(h.shape[2], P, stride)
    if dout.shape != (h.shape[0], C, L):
        raise ShapeError(f"upstream gradient {dout.shape} does not match output {(h.shape[0], C, L)}")
    dh, dk, db = get_backend(backend).tconv_backward(dout, h, kernel, stride)
    return (dh[0] if squeeze else dh), dk, db
