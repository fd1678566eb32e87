"""Command-line front end.

Exit codes: 0 success, 1 I/O failure, 2 usage or config error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .attention import export_attention
from .config import ConfigError, RunConfig, build_run_config, format_config, load_config
from .data import (
    DEFAULT_LAGS,
    format_lags,
    gen_synthetic,
    load_csv,
    make_windows,
    parse_lags,
    resample_half,
    write_csv,
)
from .errors import ContractError, EtnodeError, IoError, NumericError, ParseError, SchemaError
from .odenet import TimeGrid
from .training import (
    Checkpoint,
    evaluate,
    load_checkpoint,
    persistence_baseline,
    predict_windows,
    save_checkpoint,
    train,
    write_history,
)

log = logging.getLogger("etnode")

EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 1, 2, 3


class UsageError(EtnodeError):
    pass


def _setup_logging():
    level = os.environ.get("ETNODE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def resolve_config(args) -> RunConfig:
    values = dict(load_config(args.config)) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    for flag in ("data", "out", "checkpoint", "offsets", "variant"):
        value = getattr(args, flag, None)
        if value is not None:
            values[flag] = value
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    return build_run_config(values)


def load_dataset(rc: RunConfig, data_path=None, stats=None, names=None):
    """Read the CSV named by the run config and window it like training did."""
    path = data_path or rc.data
    if not path:
        raise UsageError("no data file given (use --data or the 'data' config key)")
    if names is not None:
        exo, target = list(names[:-1]), names[-1]
    else:
        target = rc.target
        exo = list(rc.exogenous)
        if not exo:
            with open(path, newline="", encoding="utf-8") as fh:
                header = [h.strip() for h in next(csv.reader(fh), [])]
            exo = [h for h in header if h != target]
    m = rc.model
    series = load_csv(path, target, exo, min_rows=m.window + m.horizon + 2)
    original = None
    if rc.resample_half:
        original = series.target.copy()
        series = resample_half(series).kept
    ds = make_windows(series, m.window, m.horizon, m.train_split, m.val_fraction, original_target=original)
    if stats is not None:
        # evaluation always uses the statistics the model was trained with
        ds.stats = stats
        ds.normalized = stats.apply(series.values)
    return ds


def _run_config_from_checkpoint(ck: Checkpoint, args) -> RunConfig:
    rc = RunConfig(model=ck.config, target=ck.feature_names[-1], exogenous=tuple(ck.feature_names[:-1]),
                   resample_half=bool(ck.extra.get("resample_half", False)))
    rc.data = args.data or ck.extra.get("data")
    return rc


def _parse_offsets(text, default_K) -> TimeGrid:
    if not text:
        return TimeGrid.integers(default_K)
    return TimeGrid.parse(text)


def _out_dir(args, rc=None) -> Path:
    out = Path(args.out or (rc.out if rc else "."))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    return out


# ----------------------------------------------------------------- commands


def cmd_train(args) -> int:
    rc = resolve_config(args)
    ds = load_dataset(rc)
    extra = {"data": rc.data, "resample_half": rc.resample_half}
    ck = train(rc.model, ds, extra)
    out = _out_dir(args, rc)
    save_checkpoint(ck, out / "checkpoint.json")
    write_history(ck.history, out / "metrics.csv")
    (out / "manifest.cfg").write_text(format_config(rc), encoding="utf-8")
    print(f"best epoch {ck.epoch}; wrote {out / 'checkpoint.json'}")
    return 0


SOLVER_KEYS = ("solver", "step", "rtol", "atol", "max_steps")


def _solver_overrides(ck: Checkpoint, items) -> Checkpoint:
    """Apply ``--set`` solver overrides to a loaded checkpoint; other keys are refused."""
    if not items:
        return ck
    values = {k: v for k, v in ck.config.to_dict().items()}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = (p.strip() for p in item.split("=", 1))
        if key not in SOLVER_KEYS:
            raise ConfigError(f"only solver keys {SOLVER_KEYS} can change after training, got {key!r}", key)
        values[key] = raw
    ck.config = build_run_config(values).model
    return ck


def _load_for_eval(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    ck = _solver_overrides(load_checkpoint(args.checkpoint), getattr(args, "set", None))
    rc = _run_config_from_checkpoint(ck, args)
    ds = load_dataset(rc, stats=ck.stats, names=ck.feature_names)
    return ck, ds


def cmd_predict(args) -> int:
    ck, ds = _load_for_eval(args)
    grid = _parse_offsets(args.offsets, ck.config.horizon)
    idx = ds.splits["test"]
    if len(idx) == 0:
        raise UsageError("the test split is empty")
    pred = predict_windows(ck, ds, grid, idx)
    out = _out_dir(args)
    path = out / "predictions.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["window_end_index", "offset", "prediction"])
        for end, row in zip(ds.ends(idx), pred):
            for m, v in zip(grid.offsets, row):
                w.writerow([int(end), repr(m), repr(float(v))])
    print(f"wrote {len(idx)} windows x {len(grid)} offsets to {path}")
    return 0


def cmd_eval(args) -> int:
    ck, ds = _load_for_eval(args)
    grid = _parse_offsets(args.offsets, ck.config.horizon)
    if len(ds.splits["test"]) == 0:
        raise UsageError("the test split is empty; nothing to evaluate")
    scores = evaluate(ck, ds, grid)
    base = persistence_baseline(ds, grid)
    out = _out_dir(args)
    header = ["offset", "rmse", "mae", "baseline_rmse", "baseline_mae"]
    rows = [[m, scores[m]["rmse"], scores[m]["mae"], base[m]["rmse"], base[m]["mae"]] for m in grid.offsets]
    with open(out / "eval.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) for v in r])
    print(f"{'offset':>8} {'rmse':>10} {'mae':>10} {'base_rmse':>10} {'base_mae':>10}")
    for r in rows:
        print(f"{r[0]:>8g} {r[1]:>10.5f} {r[2]:>10.5f} {r[3]:>10.5f} {r[4]:>10.5f}")
    return 0


def cmd_export_attention(args) -> int:
    ck, ds = _load_for_eval(args)
    if ck.config.variant == "no_att":
        raise UsageError("checkpoint variant no_att has no attention to export")
    idx = ds.splits["test"]
    if len(idx) == 0:
        raise UsageError("the test split is empty")
    alpha, beta = ck.model().attention(ds.inputs(idx))
    out = _out_dir(args)
    export_attention(alpha, beta, ck.feature_names, out)
    print(f"wrote attention averaged over {len(idx)} test windows to {out}")
    return 0


def cmd_gen_synthetic(args) -> int:
    drivers = parse_lags(args.lags, args.n_exo) if args.lags else DEFAULT_LAGS
    series = gen_synthetic(
        args.seed if args.seed is not None else 0,
        args.length,
        args.n_exo,
        drivers,
        noise=args.noise,
        ar=0.0 if args.no_ar else args.ar,
    )
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        raise IoError(f"directory {out.parent} does not exist")
    write_csv(series, out)
    print(f"lags: {format_lags(drivers)}; ar: {0.0 if args.no_ar else args.ar:g}; noise: {args.noise:g}")
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etnode", description="Continuous-time multivariate forecasting")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, offsets=False):
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--data")
        sp.add_argument("--checkpoint")
        sp.add_argument("--variant", choices=("full", "no_ode", "no_att"))
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        if offsets:
            sp.add_argument("--offsets", help="comma-separated positive offsets, e.g. 1,1.5,2")

    common(sub.add_parser("train", help="train a model and write checkpoint + metrics"))
    common(sub.add_parser("predict", help="predict test windows at arbitrary offsets"), offsets=True)
    common(sub.add_parser("eval", help="per-offset RMSE/MAE against persistence"), offsets=True)
    common(sub.add_parser("export-attention", help="write batch-averaged attention CSVs"))
    g = sub.add_parser("gen-synthetic", help="write a synthetic lagged-driver dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--length", type=int, default=2000)
    g.add_argument("--n-exo", type=int, default=5)
    g.add_argument("--lags", help='drivers as "x1:3:0.6,x2:6:0.3"')
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--ar", type=float, default=0.3)
    g.add_argument("--no-ar", action="store_true")
    return p


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "export-attention": cmd_export_attention,
    "gen-synthetic": cmd_gen_synthetic,
}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        key = f" (key: {exc.key})" if exc.key else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ContractError, SchemaError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IoError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
