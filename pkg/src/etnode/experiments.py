"""Synthetic experiments shared by the scripts and the acceptance suite.

Each runner trains one model on freshly generated data and returns plain
dicts so results can be printed, aggregated across seeds or dumped to CSV.
"""
from __future__ import annotations

import dataclasses
import time
from typing import Optional, Sequence

import numpy as np

from .config import ModelConfig
from .data import DEFAULT_LAGS, gen_synthetic, make_windows, resample_half
from .odenet import TimeGrid
from .training import evaluate, persistence_baseline, train

# desk budget: smaller batches and a coarser solver step than the defaults so
# five seeds of every variant finish in minutes on one core
DESK = dict(batch_size=32, step=0.25, epochs=40)


def desk_config(seed: int, variant: str = "full", **overrides) -> ModelConfig:
    return ModelConfig(**{**DESK, "seed": seed, "variant": variant, **overrides})


def _rmse(scores: dict) -> list:
    return [scores[m]["rmse"] for m in sorted(scores)]


def run_lag_task(seed: int, variant: str = "full", length: int = 2000, cfg: Optional[ModelConfig] = None) -> dict:
    """Train on the default lag task and score the test split at offsets 1..K."""
    cfg = cfg or desk_config(seed, variant)
    series = gen_synthetic(seed, length)
    ds = make_windows(series, cfg.window, cfg.horizon, cfg.train_split, cfg.val_fraction)
    start = time.perf_counter()
    ck = train(cfg, ds)
    elapsed = time.perf_counter() - start
    grid = TimeGrid.integers(cfg.horizon)
    out = {
        "seed": seed,
        "variant": cfg.variant,
        "seconds": elapsed,
        "best_epoch": ck.epoch,
        "offsets": list(grid.offsets),
        "rmse": _rmse(evaluate(ck, ds, grid)),
        "persistence": _rmse(persistence_baseline(ds, grid)),
    }
    if cfg.variant != "no_att":
        _, beta = ck.model().attention(ds.inputs(ds.splits["test"]))
        out["beta"] = dict(zip(ds.feature_names, beta.mean(axis=0).tolist()))
    return out


def run_arbitrary_step(
    seed: int,
    offsets: Sequence[float] = (1.0, 1.5, 2.0, 2.5, 3.0),
    length: int = 2000,
    cfg: Optional[ModelConfig] = None,
) -> dict:
    """Train on the half-rate series, then score fractional offsets against dropped samples."""
    cfg = cfg or desk_config(seed)
    series = gen_synthetic(seed, length)
    half = resample_half(series)
    ds = make_windows(half.kept, cfg.window, cfg.horizon, cfg.train_split, cfg.val_fraction,
                      original_target=series.target)
    start = time.perf_counter()
    ck = train(cfg, ds)
    elapsed = time.perf_counter() - start
    grid = TimeGrid(tuple(offsets))
    return {
        "seed": seed,
        "seconds": elapsed,
        "offsets": list(grid.offsets),
        "rmse": _rmse(evaluate(ck, ds, grid)),
        "persistence": _rmse(persistence_baseline(ds, grid)),
    }


def driver_names(drivers=DEFAULT_LAGS) -> set:
    return {f"x{d.column + 1}" for d in drivers}


def top_k(beta: dict, k: int) -> list:
    return [name for name, _ in sorted(beta.items(), key=lambda kv: -kv[1])[:k]]


def median_rmse(runs: Sequence[dict]) -> np.ndarray:
    """Per-offset median over seeds."""
    return np.median(np.array([r["rmse"] for r in runs]), axis=0)


def config_summary(cfg: ModelConfig) -> str:
    d = dataclasses.asdict(cfg)
    return " ".join(f"{k}={d[k]}" for k in ("window", "horizon", "hidden", "latent", "batch_size", "epochs", "solver", "step"))
