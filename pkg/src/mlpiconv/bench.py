"""Timing of the compiled conv kernels against the numpy fallback."""
import statistics
import time

import numpy as np

from mlpiconv.numerics import kernels as K

# (name, B, C, L, M, P, S): CIPC/CIPE shapes at ETT scale and a wider case
CASES = [
    ("ett_P24_S4", 32, 7, 96, 4, 24, 4),
    ("ett_P8_S4", 32, 7, 96, 4, 8, 4),
    ("weather_P36_S3", 32, 21, 96, 6, 36, 3),
    ("ecl_P12_S4", 32, 321, 96, 4, 12, 4),
]


def _median_time(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        tic = time.perf_counter()
        fn()
        times.append(time.perf_counter() - tic)
    return statistics.median(times)


def _step(backend, x, k, b, S):
    """One forward + backward through CIPC and CIPE kernels."""
    h = K.grouped_conv1d(x, k, b, S, backend=backend)
    v = K.grouped_transposed_conv1d(h, k, b[:, 0], S, backend=backend)
    K.grouped_transposed_conv1d_backward(v, h, k, S, backend=backend)
    K.grouped_conv1d_backward(h, x, k, S, backend=backend)


def compare_backends(repeats=5, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for name, B, C, L, M, P, S in CASES:
        x = rng.normal(size=(B, C, L))
        k = rng.normal(size=(C, M, P))
        b = rng.normal(size=(C, M))
        row = {"kind": "kernel_bench", "case": name, "shape": [B, C, L, M, P, S]}
        for backend in K.available_backends():
            row[f"{backend}_s"] = _median_time(lambda: _step(backend, x, k, b, S), repeats)
        if "cython_s" in row:
            row["speedup"] = row["python_s"] / row["cython_s"]
        rows.append(row)
    return rows
