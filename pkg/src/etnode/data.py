"""CSV ingestion, z-score normalization, sliding windows, half-rate resampling and synthetic data.

Columns are always ordered ``[exogenous..., target]``. Normalization uses the
population standard deviation of the training split.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, IoError, ParseError, SchemaError


@dataclass(frozen=True)
class MultivariateSeries:
    names: tuple         # exogenous names then the target name
    values: np.ndarray   # (len, N + 1)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.names):
            raise ContractError(f"{len(self.names)} names for values of shape {values.shape}")
        if values.shape[1] < 2:
            raise ContractError("need at least one exogenous series and a target")
        if not np.all(np.isfinite(values)):
            raise ContractError("series contains missing or non-finite values")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)

    @property
    def target_name(self) -> str:
        return self.names[-1]

    @property
    def exogenous_names(self) -> tuple:
        return self.names[:-1]

    @property
    def target(self) -> np.ndarray:
        return self.values[:, -1]

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values):
        return (values - self.mean) / self.std

    def invert(self, values):
        return values * self.std + self.mean

    def invert_target(self, y):
        return y * self.std[-1] + self.mean[-1]


def load_csv(path, target_col: str, exo_cols: Sequence[str], min_rows: Optional[int] = None) -> MultivariateSeries:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if header is None:
        raise SchemaError(f"{path} is empty")
    header = [h.strip() for h in header]
    wanted = list(exo_cols) + [target_col]
    for name in wanted:
        if name not in header:
            raise SchemaError(f"column {name!r} not in {path}; available: {', '.join(header)}")
    idx = [header.index(name) for name in wanted]
    values = np.empty((len(rows), len(idx)))
    for r, row in enumerate(rows):
        # row numbers count the header as line 1
        for c, j in enumerate(idx):
            cell = row[j].strip() if j < len(row) else ""
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"row {r + 2}, column {wanted[c]!r}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"row {r + 2}, column {wanted[c]!r}: non-finite value {cell!r}")
            values[r, c] = v
    if min_rows is not None and len(rows) < min_rows:
        raise ContractError(f"{path} has {len(rows)} rows, need at least {min_rows}")
    return MultivariateSeries(tuple(wanted), values)


def write_csv(series: MultivariateSeries, path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(series.names)
            for row in series.values:
                w.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def fit_stats(values: np.ndarray, names: Sequence[str]) -> NormStats:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    for name, s in zip(names, std):
        if not s > 0:
            raise ContractError(f"column {name!r} has zero variance on the training split")
    return NormStats(mean, std)


def normalize(series: MultivariateSeries, train_end: int) -> tuple[np.ndarray, NormStats]:
    """Z-score every column with statistics from rows ``[0, train_end)``."""
    stats = fit_stats(series.values[:train_end], series.names)
    return stats.apply(series.values), stats


def window_count(length: int, T: int, K: int) -> int:
    return length - T - K + 1


@dataclass
class WindowedDataset:
    """All sliding windows over one series plus chronological split membership.

    Window ``i`` reads inputs ``i .. i+T-1`` and targets ``i+T .. i+T+K-1``.
    ``original_target`` is set for half-resampled data and holds the
    full-rate target so fractional offsets have ground truth.
    """

    series: MultivariateSeries
    T: int
    K: int
    stats: NormStats
    normalized: np.ndarray
    splits: dict = field(default_factory=dict)
    original_target: Optional[np.ndarray] = None

    @property
    def n_windows(self) -> int:
        return window_count(len(self.series), self.T, self.K)

    @property
    def feature_names(self) -> tuple:
        return self.series.names

    def ends(self, idx) -> np.ndarray:
        """Series index of the last input step of each window."""
        return np.asarray(idx) + self.T - 1

    def inputs(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        steps = idx[:, None] + np.arange(self.T)[None, :]
        return self.normalized[steps]

    def targets(self, idx) -> np.ndarray:
        """Normalized targets at integer offsets 1..K, shape (len(idx), K)."""
        idx = np.asarray(idx)
        steps = idx[:, None] + self.T + np.arange(self.K)[None, :]
        return self.normalized[steps, -1]

    def last_target(self, idx) -> np.ndarray:
        """Raw target at the final input step (the persistence forecast)."""
        return self.series.target[self.ends(idx)]

    def truth_index(self, idx, offsets) -> tuple[np.ndarray, np.ndarray]:
        """Positions of raw ground truth for each (window, offset) and a validity mask.

        For resampled data positions index ``original_target``; otherwise the
        series target, and only integer offsets are addressable.
        """
        ends = self.ends(idx)[:, None]
        offs = np.asarray(offsets, dtype=float)[None, :]
        if self.original_target is not None:
            pos = 2.0 * (ends + offs)
            n = len(self.original_target)
        else:
            pos = ends + offs
            n = len(self.series)
        if not np.allclose(pos, np.round(pos)):
            raise ContractError(f"offsets {tuple(offsets)} have no ground truth in this dataset")
        pos = np.round(pos).astype(int)
        return pos, pos < n

    def truth(self, idx, offsets) -> np.ndarray:
        pos, ok = self.truth_index(idx, offsets)
        if not ok.all():
            raise ContractError("some windows have no ground truth at the requested offsets")
        source = self.original_target if self.original_target is not None else self.series.target
        return source[pos]


def make_windows(
    series: MultivariateSeries,
    T: int,
    K: int,
    train_frac: float = 0.9,
    val_frac: float = 0.1,
    original_target: Optional[np.ndarray] = None,
) -> WindowedDataset:
    """Window the series and split chronologically.

    ``train_end = floor(train_frac * len)``; statistics come from rows before
    it. Fit windows have every target before ``val_start`` (the last
    ``val_frac`` of the training rows), validation windows have all targets in
    ``[val_start, train_end)``, and test windows have their first target at or
    after ``train_end``. Windows straddling a boundary belong to no split.
    """
    if T < 1 or K < 1:
        raise ContractError("T and K must be positive")
    n = len(series)
    if n < T + K:
        raise ContractError(f"series of length {n} is too short; need at least T + K = {T + K}")
    train_end = int(math.floor(train_frac * n))
    val_start = train_end - int(math.floor(val_frac * train_end))
    normalized, stats = normalize(series, max(train_end, 2))
    starts = np.arange(window_count(n, T, K))
    first = starts + T
    last = first + K - 1
    splits = {
        "train": starts[last < val_start],
        "val": starts[(first >= val_start) & (last < train_end)],
        "test": starts[first >= train_end],
    }
    return WindowedDataset(series, T, K, stats, normalized, splits, original_target)


@dataclass(frozen=True)
class Resampled:
    kept: MultivariateSeries      # rows 0, 2, 4, ...
    held_out: MultivariateSeries  # rows 1, 3, 5, ...
    original: MultivariateSeries

    @staticmethod
    def original_index(end: int, offset: float) -> float:
        """Full-rate row addressed by ``offset`` (resampled units) past kept row ``end``."""
        return 2.0 * (end + offset)


def resample_half(series: MultivariateSeries) -> Resampled:
    if len(series) < 2:
        raise ContractError("need at least two rows to resample")
    v = series.values
    return Resampled(
        MultivariateSeries(series.names, v[0::2]),
        MultivariateSeries(series.names, v[1::2]),
        series,
    )


# ----------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class Driver:
    column: int   # 0-based exogenous index
    lag: int
    coeff: float


DEFAULT_LAGS = (Driver(0, 3, 0.6), Driver(1, 6, 0.3))


def parse_lags(text: str, n_exo: int) -> tuple:
    """``"x1:3:0.6,x2:6:0.3"`` -> drivers (names are 1-based ``x<k>``)."""
    drivers = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            name, lag, coeff = part.split(":")
            col = int(name.strip().lstrip("x")) - 1
            drivers.append(Driver(col, int(lag), float(coeff)))
        except ValueError:
            raise ContractError(f"bad lag term {part!r}; expected x<k>:<lag>:<coeff>") from None
        if not 0 <= col < n_exo:
            raise ContractError(f"driver {name!r} outside x1..x{n_exo}")
    return tuple(drivers)


def format_lags(drivers) -> str:
    return ",".join(f"x{d.column + 1}:{d.lag}:{d.coeff:g}" for d in drivers)


def gen_synthetic(
    seed: int,
    length: int = 2000,
    n_exo: int = 5,
    drivers=DEFAULT_LAGS,
    noise: float = 0.05,
    ar: float = 0.3,
    n_waves: int = 3,
    periods=(15.0, 60.0),
    exo_noise: float = 0.05,
) -> MultivariateSeries:
    """Exogenous sums of sinusoids (random period, phase, amplitude) plus noise.

    Target: ``y_t = sum_j coeff_j * x^{c_j}_{t-lag_j} + ar * y_{t-1} + eps``.
    A burn-in of ``max lag + 50`` rows is generated and discarded so every
    lagged term is defined.
    """
    if length < 1 or n_exo < 1:
        raise ContractError("length and n_exo must be positive")
    if len(drivers) > n_exo:
        raise ContractError(f"{len(drivers)} drivers but only {n_exo} exogenous series")
    for d in drivers:
        if d.lag < 0 or d.lag >= length:
            raise ContractError(f"lag {d.lag} must lie in [0, {length})")
        if not 0 <= d.column < n_exo:
            raise ContractError(f"driver column {d.column} out of range")
    rng = np.random.default_rng(seed)
    burn = max((d.lag for d in drivers), default=0) + 50
    total = length + burn
    t = np.arange(total, dtype=float)
    X = np.zeros((total, n_exo))
    for k in range(n_exo):
        period = rng.uniform(periods[0], periods[1], n_waves)
        phase = rng.uniform(0.0, 2 * np.pi, n_waves)
        amp = rng.uniform(0.5, 1.0, n_waves)
        X[:, k] = (amp[:, None] * np.sin(2 * np.pi * t[None, :] / period[:, None] + phase[:, None])).sum(axis=0)
        X[:, k] += exo_noise * rng.standard_normal(total)
    eps = noise * rng.standard_normal(total)
    y = np.zeros(total)
    for i in range(total):
        acc = eps[i] + (ar * y[i - 1] if i > 0 else 0.0)
        for d in drivers:
            if i >= d.lag:
                acc += d.coeff * X[i - d.lag, d.column]
        y[i] = acc
    names = tuple(f"x{k + 1}" for k in range(n_exo)) + ("y",)
    return MultivariateSeries(names, np.column_stack([X[burn:], y[burn:]]))
