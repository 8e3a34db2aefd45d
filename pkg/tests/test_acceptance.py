"""End-to-end acceptance checks; each prints a PASS/FAIL line in the terminal summary."""
import copy
import json
import time

import numpy as np
import pytest

from conftest import naive_conv, naive_tconv, report
from mlpiconv import checkpoint
from mlpiconv.analysis import icm_equivalence_bench, receptive_field
from mlpiconv.cli import DEFAULTS, run_experiment
from mlpiconv.data import SynthRecipe, chronological_split, gather, split_for, standardize, synth_generate, \
    load_csv, window_starts
from mlpiconv.errors import ConfigError
from mlpiconv.model import IConvConfig, IConvModel, init_params, revin_denormalize, revin_normalize
from mlpiconv.numerics import (batch_norm, batch_norm_backward, finite_diff_gradient,
                               grouped_conv1d, grouped_conv1d_backward, grouped_transposed_conv1d,
                               grouped_transposed_conv1d_backward, linear, linear_backward, relu, relu_backward,
                               variance_backward, variance_per_channel)
from mlpiconv.numerics.kernels import available_backends, conv_out_len
from mlpiconv.training import TrainConfig, evaluate, l1_loss, train

GRAD_TOL = 1e-4
GRAD_FLOOR = 1e-7


def rel_err(analytic, numeric):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), GRAD_FLOOR)).max())


# ---------------------------------------------------------------- gradient suite


def _layer_checks(rng):
    """Per-layer (name, worst relative error) pairs against central differences."""
    out = []
    # linear
    x, W, b = rng.normal(size=(3, 5)), rng.normal(size=(5, 4)), rng.normal(size=4)
    R = rng.normal(size=(3, 4))
    y, cache = linear(x, W, b)
    dx, dW, db = linear_backward(R, cache, W)
    out.append(("linear", max(rel_err(dx, finite_diff_gradient(lambda v: (linear(v, W, b)[0] * R).sum(), x)),
                              rel_err(dW, finite_diff_gradient(lambda v: (linear(x, v, b)[0] * R).sum(), W)),
                              rel_err(db, finite_diff_gradient(lambda v: (linear(x, W, v)[0] * R).sum(), b)))))
    # relu (inputs kept away from the kink)
    x = rng.uniform(0.1, 1.0, size=(4, 6)) * rng.choice([-1, 1], size=(4, 6))
    R = rng.normal(size=(4, 6))
    out.append(("relu", rel_err(relu_backward(R, x), finite_diff_gradient(lambda v: (relu(v) * R).sum(), x))))
    # per-channel variance
    x = rng.normal(size=(2, 3, 7))
    R = rng.normal(size=(2, 3))
    out.append(("variance", rel_err(variance_backward(R, x),
                                    finite_diff_gradient(lambda v: (variance_per_channel(v) * R).sum(), x))))
    # batch norm, train mode
    x = rng.normal(size=(4, 3, 5))
    g, be = rng.normal(size=3), rng.normal(size=3)
    R = rng.normal(size=x.shape)

    def bn(v, gg=g, bb=be):
        return (batch_norm(v, gg, bb, np.zeros(3), np.ones(3), True)[0] * R).sum()

    _, cache = batch_norm(x, g, be, np.zeros(3), np.ones(3), True)
    dx, dg, db = batch_norm_backward(R, cache)
    out.append(("batch_norm", max(rel_err(dx, finite_diff_gradient(bn, x)),
                                  rel_err(dg, finite_diff_gradient(lambda v: bn(x, gg=v), g)),
                                  rel_err(db, finite_diff_gradient(lambda v: bn(x, bb=v), be)))))
    # grouped conv and transposed conv
    C, M, P, S, L = 2, 3, 4, 2, 12
    x, k, kb = rng.normal(size=(2, C, L)), rng.normal(size=(C, M, P)), rng.normal(size=(C, M))
    N = conv_out_len(L, P, S)
    R = rng.normal(size=(2, C * M, N))
    dx, dk, db = grouped_conv1d_backward(R, x, k, S)
    out.append(("grouped_conv1d", max(
        rel_err(dx, finite_diff_gradient(lambda v: (grouped_conv1d(v, k, kb, S) * R).sum(), x)),
        rel_err(dk, finite_diff_gradient(lambda v: (grouped_conv1d(x, v, kb, S) * R).sum(), k)),
        rel_err(db, finite_diff_gradient(lambda v: (grouped_conv1d(x, k, v, S) * R).sum(), kb)))))
    h, tb = rng.normal(size=(2, C * M, N)), rng.normal(size=C)
    R = rng.normal(size=(2, C, L))
    dh, dk, db = grouped_transposed_conv1d_backward(R, h, k, S)
    out.append(("grouped_transposed_conv1d", max(
        rel_err(dh, finite_diff_gradient(lambda v: (grouped_transposed_conv1d(v, k, tb, S) * R).sum(), h)),
        rel_err(dk, finite_diff_gradient(lambda v: (grouped_transposed_conv1d(h, v, tb, S) * R).sum(), k)),
        rel_err(db, finite_diff_gradient(lambda v: (grouped_transposed_conv1d(h, k, v, S) * R).sum(), tb)))))
    return out


def _end_to_end_checks(rng):
    """Every parameter of a full model under the L1 training loss (train-mode batch norm)."""
    cfg = IConvConfig(C=2, T=24, L=12, d_model=32, P=(6, 4, 2), S=2, M=2)
    params = init_params(cfg, rng)
    for k in params.weights:  # enlarge weights so every IConv branch carries signal
        params.weights[k] = params.weights[k] * 20 + (rng.normal(0, 0.1, params.weights[k].shape)
                                                      if k.endswith(("bias", "b_cr", "b_ce", "b_p", "b_r")) else 0)
    model = IConvModel(cfg, params)
    x = rng.normal(size=(4, 2, 24)) + np.linspace(0, 3, 24)
    y = rng.normal(size=(4, 2, 12))

    def loss():
        return l1_loss(model.forward(x, train=True), y)[0]

    _, g = l1_loss(model.forward(x, train=True), y)
    grads, _ = model.backward(g)
    worst = {}
    for name, w in params.weights.items():
        def f(v, name=name):
            old = params.weights[name]
            params.weights[name] = v
            try:
                return loss()
            finally:
                params.weights[name] = old
        group = name.split(".")[0] if not name.startswith("iconv.") else ".".join(name.split(".")[:3])
        worst[group] = max(worst.get(group, 0.0), rel_err(grads[name], finite_diff_gradient(f, w)))
    return worst


def test_gradient_suite():
    tic = time.perf_counter()
    rng = np.random.default_rng(2021)
    layer = dict(_layer_checks(rng))
    e2e = _end_to_end_checks(rng)
    elapsed = time.perf_counter() - tic
    worst = max(*layer.values(), *e2e.values())
    ok = worst <= GRAD_TOL and elapsed < 60
    report("gradient suite", ok, f"worst rel err {worst:.2e} over {len(layer)} layers + {len(e2e)} model groups, "
                                 f"{elapsed:.1f}s")
    assert worst <= GRAD_TOL, {**layer, **e2e}
    assert elapsed < 60


# ---------------------------------------------------------------- shape laws


GRIDS = {4: [(12, 8, 4), (24, 16, 8), (36, 24, 12)], 3: [(12, 6, 3), (18, 12, 6), (36, 24, 12)]}


def test_shape_laws():
    checked, broken = 0, []
    for S, sets in GRIDS.items():
        for P in sets:
            for L in (96, 192, 336, 720):
                cfg = IConvConfig(C=1, T=96, L=L, d_model=4, P=P, S=S, M=1)
                for p, N in zip(P, cfg.layer_lengths()):
                    checked += 1
                    if not (N == (L - p) / S + 1 and (N - 1) * S + p == L):
                        broken.append((L, p, S))
    invalid = [(96, (10, 8, 4), 4), (96, (24, 16, 8), 5), (96, (100, 8, 4), 4), (192, (13, 6, 3), 3)]
    accepted = []
    for L, P, S in invalid:
        try:
            IConvConfig(C=1, T=96, L=L, d_model=4, P=P, S=S, M=1)
            accepted.append((L, P, S))
        except ConfigError:
            pass
    ok = not broken and not accepted
    report("shape laws", ok, f"{checked} (L,P,S) triples checked, {len(broken)} violate a law; "
                             f"{len(invalid) - len(accepted)}/{len(invalid)} invalid combos rejected")
    assert ok, (broken, accepted)


# ---------------------------------------------------------------- convolution oracle


def test_convolution_oracle():
    rng = np.random.default_rng(7)
    backends = available_backends()
    mismatches, worst_adj = 0, 0.0
    for _ in range(200):
        C, M, P, S = (int(v) for v in rng.integers(1, [4, 4, 6, 4], endpoint=True))
        N = int(rng.integers(1, 8))
        L = (N - 1) * S + P
        x, k = rng.normal(size=(C, L)), rng.normal(size=(C, M, P))
        cb, tb = rng.normal(size=(C, M)), rng.normal(size=C)
        h = rng.normal(size=(C * M, N))
        ref_c, ref_t = naive_conv(x, k, cb, S), naive_tconv(h, k, tb, S)
        for be in backends:
            mismatches += not np.array_equal(grouped_conv1d(x, k, cb, S, backend=be), ref_c)
            mismatches += not np.array_equal(grouped_transposed_conv1d(h, k, tb, S, backend=be), ref_t)
            lhs = float((grouped_conv1d(x, k, None, S, backend=be) * h).sum())
            rhs = float((x * grouped_transposed_conv1d(h, k, None, S, backend=be)).sum())
            worst_adj = max(worst_adj, abs(lhs - rhs) / max(1.0, abs(lhs)))
    ok = mismatches == 0 and worst_adj <= 1e-10
    report("convolution oracle", ok, f"200 instances x backends {backends}: {mismatches} inexact, "
                                     f"adjointness gap {worst_adj:.1e}")
    assert mismatches == 0 and worst_adj <= 1e-10


# ---------------------------------------------------------------- RevIN


def test_revin_round_trip():
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(100):
        B, C, T = (int(v) for v in rng.integers(1, [4, 6, 40], endpoint=True))
        x = rng.normal(rng.normal(0, 10), rng.uniform(0.01, 5), size=(B, C, T))
        x[:, rng.integers(C)] = rng.normal()  # a zero-variance channel in every matrix
        xn, st = revin_normalize(x)
        worst = max(worst, float(np.abs(revin_denormalize(xn, st) - x).max()))
    report("RevIN round trip", worst <= 1e-10, f"max abs err {worst:.1e} over 100 matrices")
    assert worst <= 1e-10


# ---------------------------------------------------------------- ICM equivalence


def test_icm_equivalence():
    rng = np.random.default_rng(11)
    diffs = []
    for i in range(100):
        C, M, N = int(rng.integers(1, 65)), int(rng.integers(1, 9)), int(rng.integers(1, 50))
        diffs.append(icm_equivalence_bench(C, M, N, seed=i, repeats=0, batch=int(rng.integers(1, 4)))["max_abs_diff"])
    big = icm_equivalence_bench(862, 4, 22, seed=0, repeats=0, batch=1)["max_abs_diff"]
    worst = max(*diffs, big)
    report("ICM equivalence", worst <= 1e-9, f"max |diff| {worst:.1e} over 100 configs + C=862")
    assert worst <= 1e-9


# ---------------------------------------------------------------- ETTh1 runs


@pytest.fixture(scope="module")
def etth1_run(etth1_path, tmp_path_factory):
    """Memoized ETTh1 L=96 experiments keyed by (seed, ablation, tag)."""
    root = tmp_path_factory.mktemp("etth1")
    cache = {}

    def run(seed, ablation="full", tag=""):
        key = (seed, ablation, tag)
        if key not in cache:
            conf = copy.deepcopy(DEFAULTS)
            conf["data"]["dataset"] = str(etth1_path)
            conf["train"]["seed"] = seed
            out = root / f"s{seed}_{ablation}{tag}"
            metrics, _ = run_experiment(conf, out, ablation=ablation)
            cache[key] = (metrics, out)
        return cache[key]

    return run


def test_etth1_reproduction(etth1_run):
    m, _ = etth1_run(2021)
    ok_mse = abs(m["mse"] - 0.377) <= 0.1 * 0.377
    ok_mae = abs(m["mae"] - 0.384) <= 0.1 * 0.384
    report("ETTh1 reproduction", ok_mse and ok_mae,
           f"test MSE {m['mse']:.4f} (target 0.377 +-10%), MAE {m['mae']:.4f} (target 0.384 +-10%)")
    assert ok_mse and ok_mae


def _ordering_votes(maes):
    """maes: list over seeds of dict variant -> MAE. Returns per-comparison vote counts."""
    a = sum(m["full"] <= 1.02 * m["no_icm"] for m in maes)
    b = sum(m["no_icm"] <= 1.02 * m["no_iconv"] for m in maes)
    return a, b


def _synthetic_ablation(seed):
    ds = synth_generate(5, 4000, seed=0, recipe=SynthRecipe(noise=0.1))
    sp = chronological_split(ds.rows, (0.7, 0.1, 0.2), 96, 96)
    values = standardize(ds, sp)[0].values
    out = {}
    for abl in ("full", "no_icm", "no_iconv"):
        cfg = IConvConfig(C=5, T=96, L=96, d_model=128, P=(24, 16, 8), S=4, M=4, ablation=abl)
        res = train(init_params(cfg, np.random.default_rng(seed)), cfg, values, sp, TrainConfig(seed=seed))
        out[abl] = evaluate(res.params, cfg, values, sp.test)[1]
    return out


def test_ablation_ordering(etth1_run):
    seeds = (1, 2, 3)
    synth = [_synthetic_ablation(s) for s in seeds]
    real = [{v: etth1_run(s, v)[0]["mae"] for v in ("full", "no_icm", "no_iconv")} for s in seeds]
    results = {}
    for name, maes in (("synthetic", synth), ("ETTh1", real)):
        a, b = _ordering_votes(maes)
        results[name] = (a >= 2 and b >= 2, a, b, maes)
    ok = all(r[0] for r in results.values())
    detail = "; ".join(
        f"{name}: full<=no_icm {a}/3, no_icm<=no_iconv {b}/3, mean MAE "
        + "/".join(f"{np.mean([m[v] for m in maes]):.4f}" for v in ("full", "no_icm", "no_iconv"))
        for name, (_, a, b, maes) in results.items())
    report("ablation ordering", ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- receptive field


def _linear_case(rng):
    cfg = IConvConfig(C=3, T=96, L=96, d_model=16, P=(24, 16, 8), S=4, M=2, ablation="no_iconv")
    p = init_params(cfg, rng)
    for k in p.weights:
        if k.startswith("enc."):
            p.weights[k][...] = 0.0
    p.weights["reg.W"] = rng.normal(size=(96, 96))
    p.weights["reg.b"] = rng.normal(size=96)
    return cfg, p


def test_receptive_field(etth1_run):
    rng = np.random.default_rng(5)
    cfg, p = _linear_case(rng)
    x = rng.normal(size=(60, 3, 96)) * 3 + 1
    # closed form: with identity encoder and detached RevIN statistics,
    # d y[c, l] / d x[c', t] = W_reg[t, l] * [c == c'], so the averaged row is W_reg[:, L/2]
    closed = p.weights["reg.W"][:, cfg.L // 2]
    lin_err = max(float(np.abs(receptive_field(p, cfg, x, 50, mode=m, rng=np.random.default_rng(0)).raw
                               - closed).max()) for m in ("averaged", "per_sample"))

    _, out = etth1_run(2021)
    tcfg, params, header = checkpoint.load(out / "checkpoint.ckpt")
    ds = load_csv(header["metadata"]["dataset"])
    split = split_for(ds, tcfg.T, tcfg.L)
    values = standardize(ds, split)[0].values
    xs, _ = gather(values, window_starts(split.val, tcfg.T, tcfg.L), tcfg.T, tcfg.L)
    rf = receptive_field(params, tcfg, xs, 50, rng=np.random.default_rng(2021))
    spread = float(np.ptp(rf.gradients))
    ok = lin_err <= 1e-8 and spread > 0 and len(np.unique(rf.gradients)) > 2
    report("receptive field", ok, f"linear case max err {lin_err:.1e}; trained ETTh1 heatmap range {spread:.2f}, "
                                  f"{len(np.unique(rf.gradients))} distinct values")
    assert ok


# ---------------------------------------------------------------- determinism


def test_determinism(etth1_run):
    _, a = etth1_run(2021)
    _, b = etth1_run(2021, tag="_repeat")
    same_ckpt = (a / "checkpoint.ckpt").read_bytes() == (b / "checkpoint.ckpt").read_bytes()
    same_metrics = (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()
    hist = [[{k: r[k] for k in r if k != "seconds"} for r in map(json.loads, (d / "history.jsonl").open())]
            for d in (a, b)]
    ok = same_ckpt and same_metrics and hist[0] == hist[1]
    report("determinism", ok, f"checkpoint identical={same_ckpt}, metrics identical={same_metrics}, "
                              f"history (excluding wall time) identical={hist[0] == hist[1]}")
    assert ok
