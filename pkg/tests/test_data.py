import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlpiconv.data import (Dataset, SynthRecipe, chronological_split, fit_standardizer, load_csv, sample_counts,
                           standardize, synth_generate, window_starts, windows, write_csv)
from mlpiconv.errors import ConfigError, DataError


def _write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_load_small_file(tmp_path):
    ds = load_csv(_write(tmp_path, "date,a,b\n2020-01-01 00:00:00,1,2\n2020-01-01 01:00:00,3,4\n"
                                   "2020-01-01 02:00:00,5,6\n"))
    assert ds.rows == 3 and ds.C == 2
    assert ds.columns == ["a", "b"] and ds.freq == "hourly"
    np.testing.assert_array_equal(ds.values[:, 1], [2, 4, 6])


def test_load_rejects_nan(tmp_path):
    with pytest.raises(DataError, match=r":3: column 'b'"):
        load_csv(_write(tmp_path, "date,a,b\nt0,1,2\nt1,3,NaN\n"))


def test_load_rejects_text_cell(tmp_path):
    with pytest.raises(DataError, match="not numeric"):
        load_csv(_write(tmp_path, "date,a\nt0,x\n"))


def test_load_rejects_ragged_rows(tmp_path):
    with pytest.raises(DataError, match="expected 3 fields"):
        load_csv(_write(tmp_path, "date,a,b\nt0,1\n"))


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_csv(tmp_path / "nope.csv")


def test_etth1_has_seven_channels(etth1_path):
    ds = load_csv(etth1_path)
    assert ds.C == 7 and ds.rows == 17420 and ds.freq == "hourly"


def test_write_round_trip(tmp_path, rng):
    ds = Dataset("x", rng.normal(size=(5, 3)), ["a", "b", "c"], [f"t{i}" for i in range(5)])
    write_csv(ds, tmp_path / "o.csv")
    back = load_csv(tmp_path / "o.csv")
    np.testing.assert_array_equal(back.values, ds.values)


# ---------------------------------------------------------------- splits


def test_split_exact_division():
    sp = chronological_split(10, (0.7, 0.1, 0.2), T=0)
    assert [b - a for a, b in (sp.train, sp.val, sp.test)] == [7, 1, 2]
    assert sp.test[1] == 10


def test_split_table_counts_ett():
    sp = chronological_split(17420, (0.6, 0.2, 0.2), T=96, L=96, max_rows=14400)
    assert sample_counts(sp, 96) == (8545, 2881, 2881)


@pytest.mark.parametrize("rows, counts", [(26304, (18317, 2633, 5261)), (17544, (12185, 1757, 3509)),
                                          (52696, (36792, 5271, 10540))])
def test_split_table_counts_seven_one_two(rows, counts):
    # row totals of the public ECL / Traffic / Weather files
    assert sample_counts(chronological_split(rows, (0.7, 0.1, 0.2), T=96), 96) == counts


def test_split_counts_with_horizon():
    # the Solar file (52560 rows) is tabulated with the 96-step horizon included
    assert sample_counts(chronological_split(52560, (0.7, 0.1, 0.2), T=96), 96, 96) == (36601, 5161, 10417)


def test_split_too_small():
    with pytest.raises(ConfigError, match="fewer than T\\+L"):
        chronological_split(300, (0.7, 0.1, 0.2), T=96, L=96)


def test_split_bad_ratios():
    with pytest.raises(ConfigError):
        chronological_split(1000, (0.5, 0.1, 0.1))


@settings(max_examples=50, deadline=None)
@given(st.integers(600, 5000), st.sampled_from([(0.6, 0.2, 0.2), (0.7, 0.1, 0.2)]), st.integers(1, 48),
       st.integers(1, 48))
def test_split_targets_disjoint(n, ratios, T, L):
    sp = chronological_split(n, ratios, T, L)
    # target rows of each split start T rows after the range start
    targets = [set(range(a + T, b)) for a, b in (sp.train, sp.val, sp.test)]
    assert not targets[0] & targets[1] and not targets[1] & targets[2] and not targets[0] & targets[2]
    assert sp.train[0] == 0 and sp.test[1] == n


# ---------------------------------------------------------------- standardization


def test_standardize_train_stats(rng):
    ds = Dataset("x", rng.normal(5, 3, size=(400, 3)), ["a", "b", "c"])
    sp = chronological_split(400, (0.7, 0.1, 0.2), T=10, L=5)
    out, sc = standardize(ds, sp)
    tr = out.values[sp.train[0]:sp.train[1]]
    np.testing.assert_allclose(tr.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(tr.std(0), 1, atol=1e-12)
    np.testing.assert_allclose(sc.inverse(out.values), ds.values, atol=1e-10)


def test_standardize_constant_channel():
    values = np.column_stack([np.full(50, 4.0), np.arange(50.0)])
    sc = fit_standardizer(values, (0, 30))
    assert sc.std[0] == 1.0
    np.testing.assert_array_equal(sc.transform(values)[:, 0], np.zeros(50))


# ---------------------------------------------------------------- windows


def test_window_count():
    assert len(window_starts((0, 200), 96, 96)) == 9
    assert len(window_starts((10, 202), 96, 96)) == 1


def test_window_alignment(rng):
    values = rng.normal(size=(200, 2))
    ws = list(windows(values, (0, 200), 96, 96))
    x, y = ws[-1]
    assert x.shape == (2, 96) and y.shape == (2, 96)
    np.testing.assert_array_equal(y[:, -1], values[199])
    np.testing.assert_array_equal(x[:, -1], values[103])


def test_window_short_range_warns():
    with pytest.warns(UserWarning):
        assert list(windows(np.zeros((50, 1)), (0, 50), 40, 20)) == []


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 300), st.integers(1, 50), st.integers(1, 50))
def test_window_formula_and_no_leakage(n, T, L):
    starts = window_starts((0, n), T, L) if n >= T + L else None
    if starts is None:
        return
    assert len(starts) == n - (T + L) + 1
    assert all(s + T - 1 < s + T for s in starts)
    assert starts[-1] + T + L == n


# ---------------------------------------------------------------- synthetic


def test_synth_trend_only_channels_identical():
    ds = synth_generate(4, 300, seed=1, recipe=SynthRecipe(amplitudes=[[0.0]], noise=0.0))
    for c in range(1, 4):
        np.testing.assert_array_equal(ds.values[:, c], ds.values[:, 0])


def test_synth_deterministic():
    a = synth_generate(3, 500, seed=9)
    b = synth_generate(3, 500, seed=9)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, synth_generate(3, 500, seed=10).values)


def test_synth_distinct_dominant_periods():
    recipe = SynthRecipe(trend="linear", periods=[[24.0], [12.0], [48.0]], amplitudes=[[1.0]], noise=0.05)
    n = 96 * 40
    ds = synth_generate(3, n, seed=3, recipe=recipe)
    trend = synth_generate(3, n, seed=3, recipe=SynthRecipe(trend="linear", amplitudes=[[0.0]], noise=0.0))
    freqs = np.fft.rfftfreq(n)
    peaks = []
    for c in range(3):
        power = np.abs(np.fft.rfft(ds.values[:, c] - trend.values[:, c]))
        peaks.append(round(1 / freqs[1:][np.argmax(power[1:])]))
    assert peaks == [24, 12, 48]
