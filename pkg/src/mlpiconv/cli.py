"""Command-line entry point: ``mlpiconv {train,eval,grid,ablate,analyze,bench,synth}``.

Configuration precedence (lowest to highest): built-in defaults, the YAML
file given by ``--config``, ``--set section.key=value`` overrides, then the
dedicated flags (``--seed``, ``--out``, ``--dataset``, ``--horizon``).
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from mlpiconv import analysis, checkpoint
from mlpiconv.data import (SynthRecipe, gather, load_csv, resolve_dataset, split_for, standardize,
                           synth_generate, window_starts, write_csv)
from mlpiconv.errors import ConfigError, DataError, ShapeError, TrainingError
from mlpiconv.model import IConvConfig, init_params
from mlpiconv.numerics import kernels
from mlpiconv.training import TrainConfig, evaluate, train

log = logging.getLogger("mlpiconv")

DEFAULTS = {
    "data": {"dataset": None, "ratios": None, "T": 96, "L": 96},
    "model": {"d_model": 256, "P": [24, 16, 8], "S": 4, "M": 4, "ablation": "full", "enc_blocks": 1,
              "scale": "var", "bn_momentum": 0.1, "bn_epsilon": 1e-5, "revin_epsilon": 1e-5,
              "init": "normal", "init_std": 0.01},
    "train": TrainConfig().to_dict(),
    "out": None,
    "grid": {"P": [[36, 24, 12], [24, 16, 8], [12, 8, 4]], "M": [3, 4, 6, 8], "L": [96]},
    "ablate": {"variants": ["full", "no_icm", "no_iconv"], "L": [96]},
    "analyze": {"mode": "rf", "rf_mode": "averaged", "samples": 50, "target_index": None, "window": 0},
    "bench": {"C": 7, "M": 4, "N": 22, "batch": 32, "repeats": 5, "kernels": False},
    "synth": {"channels": 5, "length": 4000, "seed": 0, "recipe": SynthRecipe().__dict__},
}


# ---------------------------------------------------------------- config


def deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_set(conf, assignment):
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    node = conf
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = yaml.safe_load(raw)


def resolve_config(args, command):
    conf = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        conf = deep_merge(conf, yaml.safe_load(path.read_text()) or {})
    for s in args.set or []:
        apply_set(conf, s)
    if args.seed is not None:
        conf["train"]["seed"] = args.seed
        conf["synth"]["seed"] = args.seed
    if args.dataset is not None:
        conf["data"]["dataset"] = args.dataset
    if args.horizon is not None:
        conf["data"]["L"] = args.horizon
    if args.out is not None:
        conf["out"] = args.out
    if conf["out"] is None:
        conf["out"] = f"runs/{command}"
    return conf


def write_config(conf, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(yaml.safe_dump(conf, sort_keys=True))


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# ---------------------------------------------------------------- experiment plumbing


def prepare_data(conf, L=None):
    d = conf["data"]
    if not d.get("dataset"):
        raise ConfigError("no dataset given (use --dataset or data.dataset)")
    path = resolve_dataset(d["dataset"])
    ds = load_csv(path)
    T = int(d["T"])
    L = int(L if L is not None else d["L"])
    ratios = tuple(d["ratios"]) if d.get("ratios") else None
    split = split_for(ds, T, L, ratios)
    std_ds, scaler = standardize(ds, split)
    return path, std_ds, split, scaler


def model_config(conf, C, L=None, **overrides):
    m = dict(conf["model"], **overrides)
    return IConvConfig(C=C, T=int(conf["data"]["T"]), L=int(L if L is not None else conf["data"]["L"]), **m)


def run_experiment(conf, out_dir, L=None, **model_overrides):
    """split -> standardize -> train -> test metrics; writes a complete run directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path, ds, split, scaler = prepare_data(conf, L)
    cfg = model_config(conf, ds.C, L, **model_overrides)
    tcfg = TrainConfig.from_dict(conf["train"])
    params = init_params(cfg, np.random.default_rng(tcfg.seed))
    result = train(params, cfg, ds.values, split, tcfg, history_path=out_dir / "history.jsonl")
    mse, mae = evaluate(result.params, cfg, ds.values, split.test, tcfg.eval_batch_size)
    meta = {
        "dataset": str(path), "dataset_name": ds.name, "split": split.as_dict(),
        "standardizer": scaler.to_dict(), "train": tcfg.to_dict(), "best_epoch": result.best_epoch,
        "best_val_mae": result.best_val_mae, "kernel_backend": kernels.BACKEND,
        "canonical_stride": cfg.canonical, "n_params": result.params.count(),
        "iconv_params": result.params.count("iconv."),
    }
    checkpoint.save(out_dir / "checkpoint.ckpt", cfg, result.params, tcfg.seed, meta)
    metrics = {"split": "test", "mse": mse, "mae": mae, "horizon": cfg.L, "ablation": cfg.ablation,
               "windows": int(len(window_starts(split.test, cfg.T, cfg.L)))}
    write_jsonl(out_dir / "metrics.jsonl", [metrics])
    return metrics, meta


# ---------------------------------------------------------------- commands


def cmd_train(conf):
    write_config(conf, conf["out"])
    metrics, _ = run_experiment(conf, conf["out"])
    log.info("test MSE %.4f  MAE %.4f", metrics["mse"], metrics["mae"])
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _load_ckpt(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    return checkpoint.load(ckpt)


def _checkpoint_data(conf, cfg, header):
    """Standardized values and split for a checkpoint, using its stored scaler."""
    meta = header.get("metadata", {})
    dataset = conf["data"].get("dataset") or meta.get("dataset")
    if not dataset:
        raise ConfigError("no dataset given and none recorded in the checkpoint")
    ds = load_csv(resolve_dataset(dataset))
    if ds.C != cfg.C:
        raise ShapeError(f"dataset has {ds.C} channels, checkpoint expects {cfg.C}")
    ratios = tuple(conf["data"]["ratios"]) if conf["data"].get("ratios") else None
    split = split_for(ds, cfg.T, cfg.L, ratios)
    if "standardizer" in meta:
        mean = np.asarray(meta["standardizer"]["mean"])
        std = np.asarray(meta["standardizer"]["std"])
        values = (ds.values - mean) / std
    else:
        values = standardize(ds, split)[0].values
    return values, split


def cmd_eval(conf, args):
    cfg, params, header = _load_ckpt(args)
    if args.horizon is not None and args.horizon != cfg.L:
        raise ConfigError(f"horizon {args.horizon} does not match checkpoint horizon {cfg.L}")
    write_config(conf, conf["out"])
    values, split = _checkpoint_data(conf, cfg, header)
    mse, mae = evaluate(params, cfg, values, split.test)
    rec = {"split": "test", "mse": mse, "mae": mae, "horizon": cfg.L, "ablation": cfg.ablation,
           "windows": int(len(window_starts(split.test, cfg.T, cfg.L)))}
    write_jsonl(Path(conf["out"]) / "metrics.jsonl", [rec])
    print(json.dumps(rec, sort_keys=True))
    return 0


def cmd_grid(conf):
    out = Path(conf["out"])
    write_config(conf, out)
    g = conf["grid"]
    rows = []
    for L in sorted(int(x) for x in g["L"]):
        for P in sorted((tuple(int(p) for p in ps) for ps in g["P"]), reverse=True):
            for M in sorted(int(m) for m in g["M"]):
                cell = out / f"L{L}_P{'-'.join(map(str, P))}_M{M}"
                row = {"horizon": L, "kernel_set": list(P), "multiplier": M}
                try:
                    metrics, _ = run_experiment(conf, cell, L=L, P=P, M=M)
                    row.update(status="ok", mse=metrics["mse"], mae=metrics["mae"])
                except (ConfigError, TrainingError, ShapeError) as exc:
                    log.error("grid cell %s failed: %s", cell.name, exc)
                    row.update(status="failed", error=str(exc))
                rows.append(row)
    write_jsonl(out / "grid.jsonl", rows)
    _print_table(rows, ("horizon", "kernel_set", "multiplier", "mse", "mae", "status"))
    return 0


def cmd_ablate(conf):
    out = Path(conf["out"])
    write_config(conf, out)
    rows = []
    for L in sorted(int(x) for x in conf["ablate"]["L"]):
        for variant in conf["ablate"]["variants"]:
            metrics, meta = run_experiment(conf, out / f"L{L}_{variant}", L=L, ablation=variant)
            rows.append({"horizon": L, "variant": variant, "mse": metrics["mse"], "mae": metrics["mae"],
                         "iconv_params": meta["iconv_params"]})
    write_jsonl(out / "ablation.jsonl", rows)
    _print_table(rows, ("horizon", "variant", "mse", "mae", "iconv_params"))
    return 0


def cmd_analyze(conf, args):
    cfg, params, header = _load_ckpt(args)
    a = conf["analyze"]
    mode = args.mode or a["mode"]
    out = Path(conf["out"])
    write_config(conf, out)
    if mode == "weights":
        write_jsonl(out / "weights.jsonl", [analysis.export_weight_matrix(params)])
        return 0
    values, split = _checkpoint_data(conf, cfg, header)
    if mode == "rf":
        starts = window_starts(split.val, cfg.T, cfg.L)
        x, _ = gather(values, starts, cfg.T, cfg.L)
        rng = np.random.default_rng(int(conf["train"]["seed"]))
        rf = analysis.receptive_field(params, cfg, x, int(a["samples"]), a.get("target_index"),
                                      mode=a["rf_mode"], rng=rng)
        write_jsonl(out / "rf.jsonl", [rf.to_record()])
    elif mode == "forecast":
        starts = window_starts(split.test, cfg.T, cfg.L)
        idx = int(a["window"])
        if not 0 <= idx < len(starts):
            raise ConfigError(f"window index {idx} outside test range (0..{len(starts) - 1})")
        x, y = analysis.forecast_window(values, starts[idx], cfg)
        rec = analysis.export_forecast(params, cfg, x, y)
        rec["window_start"] = int(starts[idx])
        write_jsonl(out / "forecast.jsonl", [rec])
    else:
        raise ConfigError(f"unknown analysis mode {mode!r} (choose rf, weights or forecast)")
    return 0


def cmd_bench(conf):
    b = conf["bench"]
    out = Path(conf["out"])
    write_config(conf, out)
    rep = analysis.icm_equivalence_bench(int(b["C"]), int(b["M"]), int(b["N"]), seed=int(conf["train"]["seed"]),
                                         repeats=int(b["repeats"]), batch=int(b["batch"]))
    records = [rep]
    verdict = "equivalent" if rep["equivalent"] else "NOT equivalent"
    print(f"ICM matmul vs 1x1 conv: {verdict} (max |diff| = {rep['max_abs_diff']:.3e})")
    if rep["timing"]:
        t = rep["timing"]
        print(f"median time  matmul {t['matmul_median_s'] * 1e3:.3f} ms   conv {t['conv_median_s'] * 1e3:.3f} ms")
    if b.get("kernels"):
        from mlpiconv.bench import compare_backends
        for r in compare_backends(repeats=max(int(b["repeats"]), 1)):
            records.append(r)
            print(f"kernels {r['case']:>22s}  python {r['python_s'] * 1e3:8.3f} ms"
                  + (f"   cython {r['cython_s'] * 1e3:8.3f} ms  x{r['speedup']:.1f}" if "cython_s" in r else ""))
    write_jsonl(out / "bench.jsonl", records)
    return 0 if rep["equivalent"] else 1


def cmd_synth(conf):
    s = conf["synth"]
    if not conf.get("out") or conf["out"] == "runs/synth":
        conf["out"] = "runs/synth/synthetic.csv"
    target = Path(conf["out"])
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {target.parent}: {exc}") from None
    recipe = SynthRecipe.from_dict(s["recipe"])
    ds = synth_generate(int(s["channels"]), int(s["length"]), int(s["seed"]), recipe)
    try:
        write_csv(ds, target)
    except OSError as exc:
        raise ConfigError(f"cannot write {target}: {exc}") from None
    target.with_suffix(".config.yaml").write_text(yaml.safe_dump(conf, sort_keys=True))
    print(target)
    return 0


def _print_table(rows, cols):
    if not rows:
        return
    fmt = lambda v: f"{v:.4f}" if isinstance(v, float) else str(v)  # noqa: E731
    widths = [max(len(c), *(len(fmt(r.get(c, ""))) for r in rows)) for c in cols]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for r in rows:
        print("  ".join(fmt(r.get(c, "")).ljust(w) for c, w in zip(cols, widths)))


# ---------------------------------------------------------------- entry point


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (synth: output CSV path)")
    common.add_argument("--dataset", help="CSV path or dataset name in $MLPICONV_DATA_DIR")
    common.add_argument("--horizon", type=int, help="forecast horizon L")
    common.add_argument("--quiet", action="store_true")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set model.M=8 (repeatable)")
    p = argparse.ArgumentParser(prog="mlpiconv", description="MLP + IConv multivariate forecaster")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one model and report test metrics")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    ev.add_argument("--checkpoint", required=True)
    sub.add_parser("grid", parents=[common], help="kernel-set x multiplier sweep")
    sub.add_parser("ablate", parents=[common], help="full / no_icm / no_iconv comparison")
    an = sub.add_parser("analyze", parents=[common], help="receptive field, weights or forecast export")
    an.add_argument("--checkpoint", required=True)
    an.add_argument("--mode", choices=["rf", "weights", "forecast"])
    be = sub.add_parser("bench", parents=[common], help="ICM matmul vs 1x1-conv equivalence and timing")
    be.add_argument("--C", type=_positive_int)
    be.add_argument("--M", type=_positive_int)
    be.add_argument("--N", type=_positive_int)
    be.add_argument("--batch", type=_positive_int)
    be.add_argument("--repeats", type=int)
    be.add_argument("--kernels", action="store_true", help="also time compiled vs numpy conv kernels")
    sy = sub.add_parser("synth", parents=[common], help="write a synthetic shared-trend dataset")
    sy.add_argument("--recipe", help="YAML file with synth.recipe fields")
    sy.add_argument("--channels", type=_positive_int)
    sy.add_argument("--length", type=_positive_int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        conf = resolve_config(args, args.command)
        if args.command == "bench":
            for k in ("C", "M", "N", "batch", "repeats"):
                if getattr(args, k) is not None:
                    conf["bench"][k] = getattr(args, k)
            if args.kernels:
                conf["bench"]["kernels"] = True
            if any(int(conf["bench"][k]) < 1 for k in ("C", "M", "N", "batch")):
                print("mlpiconv bench: error: dimensions must be positive", file=sys.stderr)
                return 2
        if args.command == "synth":
            if args.recipe:
                conf["synth"]["recipe"] = deep_merge(conf["synth"]["recipe"],
                                                     yaml.safe_load(Path(args.recipe).read_text()) or {})
            for k in ("channels", "length"):
                if getattr(args, k) is not None:
                    conf["synth"][k] = getattr(args, k)
        dispatch = {
            "train": lambda: cmd_train(conf),
            "eval": lambda: cmd_eval(conf, args),
            "grid": lambda: cmd_grid(conf),
            "ablate": lambda: cmd_ablate(conf),
            "analyze": lambda: cmd_analyze(conf, args),
            "bench": lambda: cmd_bench(conf),
            "synth": lambda: cmd_synth(conf),
        }
        return dispatch[args.command]()
    except (ConfigError, DataError, ShapeError, TrainingError, FileNotFoundError) as exc:
        print(f"mlpiconv {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
