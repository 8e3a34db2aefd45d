"""Pure numpy implementations of the grouped convolution kernels.

These mirror ``_ckernels.pyx`` operation for operation. Forward passes
accumulate in the same order as the compiled loops (kernel tap outer,
filter inner, bias last) so both backends agree to the last bit.

Layouts
-------
x      : (B, C, L)        input rows, one per channel
kernel : (C, M, P)        M filters of width P per channel
h      : (B, C*M, N)      channel-major feature rows, row c*M+m
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_forward(x, kernel, bias, stride):
    B, C, L = x.shape
    _, M, P = kernel.shape
    N = (L - P) // stride + 1
    span = (N - 1) * stride + 1
    acc = np.zeros((B, C, M, N))
    for p in range(P):
        xs = x[:, :, p:p + span:stride]
        acc += kernel[None, :, :, p, None] * xs[:, :, None, :]
    acc += bias[None, :, :, None]
    return acc.reshape(B, C * M, N)


def conv_backward(dout, x, kernel, stride):
    B, C, L = x.shape
    _, M, P = kernel.shape
    N = dout.shape[-1]
    g = dout.reshape(B, C, M, N)
    # windows[b, c, n, p] = x[b, c, n*stride + p]
    windows = sliding_window_view(x, P, axis=-1)[:, :, ::stride][:, :, :N]
    dkernel = np.einsum("bcmn,bcnp->cmp", g, windows)
    dbias = g.sum(axis=(0, 3))
    dx = np.zeros_like(x)
    span = (N - 1) * stride + 1
    contrib = np.einsum("cmp,bcmn->bcpn", kernel, g)
    for p in range(P):
        dx[:, :, p:p + span:stride] += contrib[:, :, p]
    return dx, dkernel, dbias


def tconv_forward(h, kernel, bias, stride):
    B, CM, N = h.shape
    C, M, P = kernel.shape
    L = (N - 1) * stride + P
    span = (N - 1) * stride + 1
    hr = h.reshape(B, C, M, N)
    out = np.zeros((B, C, L))
    for p in range(P):
        s = np.zeros((B, C, N))
        for m in range(M):
            s += kernel[None, :, m, p, None] * hr[:, :, m, :]
        out[:, :, p:p + span:stride] += s
    out += bias[None, :, None]
    return out


def tconv_backward(dout, h, kernel, stride):
    B, CM, N = h.shape
    C, M, P = kernel.shape
    hr = h.reshape(B, C, M, N)
    windows = sliding_window_view(dout, P, axis=-1)[:, :, ::stride][:, :, :N]
    dh = np.einsum("cmp,bcnp->bcmn", kernel, windows).reshape(B, CM, N)
    dkernel = np.einsum("bcmn,bcnp->cmp", hr, windows)
    dbias = dout.sum(axis=(0, 2))
    return dh, dkernel, dbias
