"""Compiled vs numpy conv kernels, then a short end-to-end training-step timing.

    python benchmarks/bench_kernels.py [--repeats 10]
"""
import argparse
import time

import numpy as np

from mlpiconv.bench import compare_backends
from mlpiconv.model import IConvConfig, IConvModel, init_params
from mlpiconv.numerics import kernels as K


def train_step_time(backend, repeats):
    cfg = IConvConfig(C=7, T=96, L=96, d_model=256, P=(24, 16, 8), S=4, M=4)
    params = init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(32, 7, 96))
    saved = K._impl
    K._impl = K.get_backend(backend)
    try:
        model = IConvModel(cfg, params)
        times = []
        for _ in range(repeats + 1):
            tic = time.perf_counter()
            out = model.forward(x, train=True)
            model.backward(np.sign(out) / out.size)
            times.append(time.perf_counter() - tic)
    finally:
        K._impl = saved
    return float(np.median(times[1:]))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=10)
    args = ap.parse_args()
    print(f"backends: {K.available_backends()} (active: {K.BACKEND})")
    for r in compare_backends(args.repeats):
        line = f"{r['case']:>16s}  python {r['python_s'] * 1e3:8.3f} ms"
        if "cython_s" in r:
            line += f"  cython {r['cython_s'] * 1e3:8.3f} ms  speedup x{r['speedup']:.1f}"
        print(line)
    print("full training step, ETTh1 shapes, batch 32:")
    for b in K.available_backends():
        print(f"  {b:>7s} {train_step_time(b, args.repeats) * 1e3:8.3f} ms")


if __name__ == "__main__":
    main()
