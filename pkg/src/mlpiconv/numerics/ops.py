"""Dense differentiable primitives: matmul, linear, relu, batch norm, variance.

Every forward function that has a backward returns ``(out, cache)``; the
matching ``*_backward`` takes the upstream gradient and that cache.
"""
import numpy as np

from mlpiconv.errors import ShapeError


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def linear(x, W, b):
    """Affine map along the last axis: x @ W + b."""
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: input {x.shape}, weight {W.shape}, bias {b.shape}")
    return x @ W + b, x


def linear_backward(dout, cache, W):
    x = cache
    din, dout_dim = W.shape
    dW = x.reshape(-1, din).T @ dout.reshape(-1, dout_dim)
    db = dout.reshape(-1, dout_dim).sum(axis=0)
    dx = dout @ W.T
    return dx, dW, db


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def variance_per_channel(x):
    """Population variance along the last (time) axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 1:
        raise ShapeError("variance needs at least one time step")
    return x.var(axis=-1)


def variance_backward(dvar, x):
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    return dvar[..., None] * (2.0 / n) * centered


def batch_norm(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Normalize (B, C, L) per channel over batch and time.

    In train mode batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used.
    """
    if x.ndim != 3 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm: input {x.shape} vs {gamma.shape[0]} channels")
    if train:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    return out, (xhat, inv_std, gamma, train)


def batch_norm_backward(dout, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv_std, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 2))
    dbeta = dout.sum(axis=(0, 2))
    dxhat = dout * gamma[None, :, None]
    if not train:
        return dxhat * inv_std[None, :, None], dgamma, dbeta
    n = xhat.shape[0] * xhat.shape[2]
    dx = (inv_std[None, :, None] / n) * (
        n * dxhat
        - dxhat.sum(axis=(0, 2), keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
    )
    return dx, dgamma, dbeta


def finite_diff_gradient(f, theta, eps=1e-5):
    """Central-difference gradient of scalar ``f`` at ``theta`` (any shape)."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(theta)
        flat[i] = orig - eps
        fm = f(theta)
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * eps)
    return grad
