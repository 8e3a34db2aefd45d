import os
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE_LINES = []


def naive_conv(x, kernel, bias, S):
    """Triple-loop strided cross-correlation over a single (C, L) input."""
    C, L = x.shape
    _, M, P = kernel.shape
    N = (L - P) // S + 1
    out = np.zeros((C * M, N))
    for c in range(C):
        for m in range(M):
            for n in range(N):
                acc = 0.0
                for p in range(P):
                    acc = acc + kernel[c, m, p] * x[c, n * S + p]
                out[c * M + m, n] = acc + bias[c, m]
    return out


def naive_tconv(h, kernel, bias, S):
    """Scatter-add transposed convolution over a single (C*M, N) input."""
    C, M, P = kernel.shape
    N = h.shape[1]
    L = (N - 1) * S + P
    out = np.zeros((C, L))
    for c in range(C):
        for p in range(P):
            for n in range(N):
                s = 0.0
                for m in range(M):
                    s = s + kernel[c, m, p] * h[c * M + m, n]
                out[c, n * S + p] += s
        for t in range(L):
            out[c, t] += bias[c]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _data_dir():
    return Path(os.environ.get("MLPICONV_DATA_DIR", ROOT / "data"))


@pytest.fixture(scope="session")
def etth1_path():
    path = _data_dir() / "ETTh1.csv"
    if not path.is_file():
        sys.path.insert(0, str(ROOT / "scripts"))
        from fetch_data import fetch

        try:
            path = fetch("ETTh1", _data_dir())
        except Exception as exc:  # network or mirror failure
            pytest.fail(f"ETTh1.csv unavailable and could not be fetched: {exc}")
    return path


def report(name, passed, detail=""):
    """Record one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
