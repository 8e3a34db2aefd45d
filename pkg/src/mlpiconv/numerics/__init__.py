"""Numeric core: dense primitives, grouped convolution kernels, gradient oracle."""
from mlpiconv.numerics.kernels import (
    BACKEND,
    conv_out_len,
    grouped_conv1d,
    grouped_conv1d_backward,
    grouped_transposed_conv1d,
    grouped_transposed_conv1d_backward,
    tconv_out_len,
)
from mlpiconv.numerics.ops import (
    batch_norm,
    batch_norm_backward,
    finite_diff_gradient,
    linear,
    linear_backward,
    matmul,
    relu,
    relu_backward,
    variance_backward,
    variance_per_channel,
)
