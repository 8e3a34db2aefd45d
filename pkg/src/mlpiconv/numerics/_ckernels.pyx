# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled grouped convolution kernels (see _pykernels for the layouts)."""
import numpy as np


def conv_forward(const double[:, :, ::1] x, const double[:, :, ::1] kernel,
                 const double[:, ::1] bias, Py_ssize_t stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t M = kernel.shape[1], P = kernel.shape[2]
    cdef Py_ssize_t N = (L - P) // stride + 1
    out_arr = np.empty((B, C * M, N))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, m, n, p, base
    cdef double acc
    with nogil:
        for b in range(B):
            for c in range(C):
                for m in range(M):
                    for n in range(N):
                        base = n * stride
                        acc = 0.0
                        for p in range(P):
                            acc = acc + kernel[c, m, p] * x[b, c, base + p]
                        out[b, c * M + m, n] = acc + bias[c, m]
    return out_arr


def conv_backward(const double[:, :, ::1] dout, const double[:, :, ::1] x,
                  const double[:, :, ::1] kernel, Py_ssize_t stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t M = kernel.shape[1], P = kernel.shape[2]
    cdef Py_ssize_t N = dout.shape[2]
    dx_arr = np.zeros((B, C, L))
    dk_arr = np.zeros((C, M, P))
    db_arr = np.zeros((C, M))
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dk = dk_arr
    cdef double[:, ::1] db = db_arr
    cdef Py_ssize_t b, c, m, n, p, base
    cdef double g
    with nogil:
        for b in range(B):
            for c in range(C):
                for m in range(M):
                    for n in range(N):
                        g = dout[b, c * M + m, n]
                        db[c, m] += g
                        base = n * stride
                        for p in range(P):
                            dk[c, m, p] += g * x[b, c, base + p]
                            dx[b, c, base + p] += g * kernel[c, m, p]
    return dx_arr, dk_arr, db_arr


def tconv_forward(const double[:, :, ::1] h, const double[:, :, ::1] kernel,
                  const double[::1] bias, Py_ssize_t stride):
    cdef Py_ssize_t B = h.shape[0], N = h.shape[2]
    cdef Py_ssize_t C = kernel.shape[0], M = kernel.shape[1], P = kernel.shape[2]
    cdef Py_ssize_t L = (N - 1) * stride + P
    out_arr = np.zeros((B, C, L))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, m, n, p, t
    cdef double s
    with nogil:
        for b in range(B):
            for c in range(C):
                for p in range(P):
                    for n in range(N):
                        s = 0.0
                        for m in range(M):
                            s = s + kernel[c, m, p] * h[b, c * M + m, n]
                        out[b, c, n * stride + p] += s
                for t in range(L):
                    out[b, c, t] += bias[c]
    return out_arr


def tconv_backward(const double[:, :, ::1] dout, const double[:, :, ::1] h,
                   const double[:, :, ::1] kernel, Py_ssize_t stride):
    cdef Py_ssize_t B = h.shape[0], N = h.shape[2]
    cdef Py_ssize_t C = kernel.shape[0], M = kernel.shape[1], P = kernel.shape[2]
    cdef Py_ssize_t L = dout.shape[2]
    dh_arr = np.zeros((B, C * M, N))
    dk_arr = np.zeros((C, M, P))
    db_arr = np.zeros(C)
    cdef double[:, :, ::1] dh = dh_arr
    cdef double[:, :, ::1] dk = dk_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t b, c, m, n, p, t, base
    cdef double acc, hv
    with nogil:
        for b in range(B):
            for c in range(C):
                for t in range(L):
                    db[c] += dout[b, c, t]
                for m in range(M):
                    for n in range(N):
                        base = n * stride
                        hv = h[b, c * M + m, n]
                        acc = 0.0
                        for p in range(P):
                            acc = acc + kernel[c, m, p] * dout[b, c, base + p]
                            dk[c, m, p] += hv * dout[b, c, base + p]
                        dh[b, c * M + m, n] = acc
    return dh_arr, dk_arr, db_arr
