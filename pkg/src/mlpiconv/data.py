"""Dataset loading, chronological splits, standardization, windows, synthetic series."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path

import numpy as np

from mlpiconv.errors import ConfigError, DataError

log = logging.getLogger(__name__)

DATA_DIR_ENV = "MLPICONV_DATA_DIR"

# Benchmark split conventions. ETT files hold ~24 months but the benchmark
# lineage only uses the first 20 (12 train / 4 val / 4 test), i.e. 6:2:2 of
# the leading ``max_rows``.
PRESETS = {
    "ETTh1": {"ratios": (0.6, 0.2, 0.2), "freq": "hourly", "max_rows": 12 * 30 * 24 + 8 * 30 * 24},
    "ETTh2": {"ratios": (0.6, 0.2, 0.2), "freq": "hourly", "max_rows": 12 * 30 * 24 + 8 * 30 * 24},
    "ETTm1": {"ratios": (0.6, 0.2, 0.2), "freq": "15min", "max_rows": (12 * 30 * 24 + 8 * 30 * 24) * 4},
    "ETTm2": {"ratios": (0.6, 0.2, 0.2), "freq": "15min", "max_rows": (12 * 30 * 24 + 8 * 30 * 24) * 4},
    "electricity": {"ratios": (0.7, 0.1, 0.2), "freq": "hourly", "max_rows": None},
    "traffic": {"ratios": (0.7, 0.1, 0.2), "freq": "hourly", "max_rows": None},
    "weather": {"ratios": (0.7, 0.1, 0.2), "freq": "10min", "max_rows": None},
    "solar_AL": {"ratios": (0.7, 0.1, 0.2), "freq": "10min", "max_rows": None},
}
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


@dataclass
class Dataset:
    name: str
    values: np.ndarray  # (rows, C)
    columns: list
    timestamps: list = field(default_factory=list)
    freq: str = "unknown"

    @property
    def C(self):
        return self.values.shape[1]

    @property
    def rows(self):
        return self.values.shape[0]


def _infer_freq(timestamps):
    if len(timestamps) < 2:
        return "unknown"
    try:
        t0 = datetime.fromisoformat(timestamps[0])
        t1 = datetime.fromisoformat(timestamps[1])
    except ValueError:
        return "unknown"
    minutes = (t1 - t0).total_seconds() / 60
    return {60: "hourly", 15: "15min", 10: "10min"}.get(minutes, f"{minutes:g}min")


def load_csv(path, name=None) -> Dataset:
    """Read a header + (timestamp, channel...) table. Missing/non-finite cells are rejected."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a timestamp column and at least one channel")
        stamps, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for col, cell in enumerate(row[1:], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {header[col]!r} is not numeric: {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: column {header[col]!r} is not finite: {cell!r}")
                vals.append(v)
            stamps.append(row[0])
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.array(rows, dtype=np.float64)
    return Dataset(name or path.stem, values, header[1:], stamps, _infer_freq(stamps))


def write_csv(ds: Dataset, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *ds.columns])
        stamps = ds.timestamps or [str(i) for i in range(ds.rows)]
        for stamp, row in zip(stamps, ds.values):
            w.writerow([stamp, *(repr(float(v)) for v in row)])


def resolve_dataset(name, data_dir=None):
    """Path to a dataset given a path or a bare name looked up in the data directory."""
    p = Path(name)
    if p.is_file():
        return p
    base = Path(data_dir or os.environ.get(DATA_DIR_ENV, "data"))
    for cand in (base / name, base / f"{name}.csv"):
        if cand.is_file():
            return cand
    raise FileNotFoundError(f"dataset {name!r} not found (looked for {p} and in {base})")


def manifest():
    """Name -> {url, sha256, ...} for the public benchmark files."""
    text = resources.files("mlpiconv").joinpath("datasets.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class Split:
    """Half-open row ranges. ``val``/``test`` start ``T`` rows early for left context."""

    train: tuple
    val: tuple
    test: tuple

    def as_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


def chronological_split(n_rows, ratios=DEFAULT_RATIOS, T=96, L=0, max_rows=None) -> Split:
    """Contiguous train/val/test ranges over the first ``max_rows`` rows.

    Sizes follow int(n*r_train), int(n*r_test) and the remainder for
    validation; val/test ranges are extended ``T`` rows to the left so the
    first target step of each nominal range is predictable.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = min(n_rows, max_rows) if max_rows else n_rows
    n_train = int(n * ratios[0] + 1e-9)
    n_test = int(n * ratios[2] + 1e-9)
    n_val = n - n_train - n_test
    split = Split((0, n_train), (n_train - T, n_train + n_val), (n - n_test - T, n))
    for part, (a, b) in split.as_dict().items():
        if a < 0 or b - a < T + L:
            raise ConfigError(f"{part} split has {b - max(a, 0)} rows, fewer than T+L = {T + L}")
    return split


def split_for(ds: Dataset, T, L, ratios=None) -> Split:
    preset = PRESETS.get(ds.name, {})
    return chronological_split(ds.rows, ratios or preset.get("ratios", DEFAULT_RATIOS), T, L,
                               preset.get("max_rows"))


def sample_counts(split: Split, T, L=0):
    """Per-split window counts, range length - T - L + 1.

    With the default L=0 the horizon is excluded and this counts input windows only.
    """
    return tuple(b - a - T - L + 1 for a, b in (split.train, split.val, split.test))


# ---------------------------------------------------------------- scaling


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, values):
        return (values - self.mean) / self.std

    def inverse(self, values):
        return values * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def fit_standardizer(values, train_range) -> Standardizer:
    a, b = train_range
    if b <= a:
        raise ConfigError("train split is empty")
    seg = values[a:b]
    mean = seg.mean(axis=0)
    std = seg.std(axis=0)
    constant = std <= 0
    if constant.any():
        log.warning("constant channels %s: std set to 1", np.flatnonzero(constant).tolist())
        std = np.where(constant, 1.0, std)
    return Standardizer(mean, std)


def standardize(ds: Dataset, split: Split):
    """Z-score every row with train-split statistics; returns (new dataset, scaler)."""
    scaler = fit_standardizer(ds.values, split.train)
    out = Dataset(ds.name, scaler.transform(ds.values), list(ds.columns), list(ds.timestamps), ds.freq)
    return out, scaler


# ---------------------------------------------------------------- windows


def window_starts(rng_range, T, L):
    a, b = rng_range
    n = b - a - T - L + 1
    if n <= 0:
        warnings.warn(f"range {rng_range} is shorter than T+L = {T + L}; no windows")
        return np.arange(0)
    return a + np.arange(n)


def gather(values, starts, T, L):
    """Batch of windows: x (B, C, T) and y (B, C, L), channel-major."""
    starts = np.asarray(starts)
    xi = starts[:, None] + np.arange(T)
    yi = starts[:, None] + T + np.arange(L)
    return values[xi].transpose(0, 2, 1).copy(), values[yi].transpose(0, 2, 1).copy()


def windows(values, rng_range, T, L):
    """Yield (x (C, T), y (C, L)) for every start offset in the range, stride 1."""
    for s in window_starts(rng_range, T, L):
        yield values[s:s + T].T.copy(), values[s + T:s + T + L].T.copy()


# ---------------------------------------------------------------- synthetic


@dataclass
class SynthRecipe:
    """Shared trend plus per-channel seasonal terms and noise.

    ``periods``/``amplitudes`` are per-channel lists of seasonal components;
    they are cycled when there are more channels than entries.
    """

    trend: str = "linear"  # linear | quadratic | sine | none
    trend_scale: float = 1.0
    trend_period: float = 2000.0
    periods: list = field(default_factory=lambda: [[24.0], [12.0], [7.0], [48.0], [16.0, 5.0]])
    amplitudes: list = field(default_factory=lambda: [[1.0], [0.8], [0.6], [1.2], [0.7, 0.4]])
    noise: float = 0.1

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _trend(t, n, recipe):
    u = t / max(n - 1, 1)
    kind = recipe.trend
    if kind == "linear":
        return recipe.trend_scale * 4.0 * u
    if kind == "quadratic":
        return recipe.trend_scale * 4.0 * (u - 0.5) ** 2
    if kind == "sine":
        return recipe.trend_scale * np.sin(2 * np.pi * t / recipe.trend_period)
    if kind == "none":
        return np.zeros_like(t)
    raise ConfigError(f"unknown trend kind {kind!r}")


def synth_generate(channels, length, seed=0, recipe: SynthRecipe | None = None) -> Dataset:
    recipe = recipe or SynthRecipe()
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    base = _trend(t, length, recipe)
    values = np.empty((length, channels))
    for c in range(channels):
        periods = recipe.periods[c % len(recipe.periods)] if recipe.periods else []
        amps = recipe.amplitudes[c % len(recipe.amplitudes)] if recipe.amplitudes else []
        series = base.copy()
        for p, a in zip(periods, amps):
            series += a * np.sin(2 * np.pi * t / p + rng.uniform(0, 2 * np.pi))
        if recipe.noise:
            series += recipe.noise * rng.standard_normal(length)
        values[:, c] = series
    start = datetime(2020, 1, 1)
    stamps = [(start + timedelta(hours=i)).isoformat(sep=" ") for i in range(length)]
    return Dataset("synthetic", values, [f"ch{c}" for c in range(channels)], stamps, "hourly")
