"""Losses, Adam, the mini-batch loop, metrics and checkpoint I/O."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .config import ModelConfig
from .data import NormStats, WindowedDataset
from .errors import ContractError, IoError, NumericError, ShapeError
from .latent import PosteriorParams, kl_divergence
from .model import ETNODE
from .odenet import TimeGrid

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "etnode-checkpoint"
CHECKPOINT_VERSION = 1
HISTORY_FIELDS = ("epoch", "split", "rmse", "mae", "loss", "kl", "nll", "mse")


class DivergenceError(NumericError):
    pass


# ----------------------------------------------------------------- losses


def _check_pair(yhat: Node, y: np.ndarray):
    if yhat.shape != np.shape(y):
        raise ShapeError(f"predictions {yhat.shape} vs targets {np.shape(y)}")


def loss_mse(yhat, y) -> Node:
    yhat = ad._lift(yhat)
    _check_pair(yhat, y)
    return ad.mean(ad.square(ad.sub(yhat, y)))


def loss_nll(yhat, y, s: float) -> Node:
    """Gaussian NLL with fixed std ``s``: summed over outputs, averaged over samples."""
    if not s > 0:
        raise ContractError(f"noise std must be positive, got {s}")
    yhat = ad._lift(yhat)
    _check_pair(yhat, y)
    L, K = yhat.shape
    quad = ad.scalar_mul(ad.sum(ad.square(ad.sub(yhat, y))), 1.0 / (2.0 * s * s * L))
    return ad.add(quad, 0.5 * K * math.log(2.0 * math.pi * s * s))


def l2_penalty(params, coeff: float) -> Node:
    total = None
    for p in params:
        term = ad.sum(ad.square(p))
        total = term if total is None else ad.add(total, term)
    return ad.scalar_mul(total, coeff)


@dataclass
class LossParts:
    total: Node
    mse: Node
    kl: Node
    nll: Node


def loss_total(yhat, y, posterior: PosteriorParams, s: float, params=(), l2: float = 0.0) -> LossParts:
    mse = loss_mse(yhat, y)
    kl = kl_divergence(posterior)
    nll = loss_nll(yhat, y, s)
    total = ad.add(ad.add(mse, kl), nll)
    if l2 > 0 and params:
        total = ad.add(total, l2_penalty(params, l2))
    return LossParts(total, mse, kl, nll)


# ----------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params: dict[str, Node], lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self, grads: dict[Node, np.ndarray]) -> None:
        """Apply one update. Missing gradients count as zero."""
        for name, p in self.params.items():
            g = grads.get(p)
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.value)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(opt: Adam, grads) -> None:
    opt.step(grads)


# ----------------------------------------------------------------- metrics


def metrics(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column RMSE and MAE."""
    r = np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float)
    return np.sqrt(np.mean(r * r, axis=0)), np.mean(np.abs(r), axis=0)


# ----------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    config: ModelConfig
    feature_names: tuple
    params: dict
    stats: NormStats
    epoch: int = 0
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def model(self) -> ETNODE:
        m = ETNODE(self.config, len(self.feature_names), np.random.default_rng(0))
        m.load_values(self.params)
        return m


def checkpoint_to_json(ck: Checkpoint) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": ck.config.to_dict(),
        "feature_names": list(ck.feature_names),
        "normalization": {"mean": ck.stats.mean.tolist(), "std": ck.stats.std.tolist()},
        "epoch": ck.epoch,
        "extra": ck.extra,
        "params": [
            {"name": name, "shape": list(arr.shape), "values": np.asarray(arr).reshape(-1).tolist()}
            for name, arr in ck.params.items()
        ],
        "history": ck.history,
    }
    return json.dumps(doc, indent=1) + "\n"


def checkpoint_from_json(text: str) -> Checkpoint:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ContractError("not an etnode checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {doc.get('version')}")
    params = {
        p["name"]: np.array(p["values"], dtype=float).reshape(p["shape"]) for p in doc["params"]
    }
    norm = doc["normalization"]
    return Checkpoint(
        ModelConfig(**doc["config"]),
        tuple(doc["feature_names"]),
        params,
        NormStats(np.array(norm["mean"]), np.array(norm["std"])),
        doc["epoch"],
        doc["history"],
        doc.get("extra", {}),
    )


def save_checkpoint(ck: Checkpoint, path) -> None:
    try:
        Path(path).write_text(checkpoint_to_json(ck), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    return checkpoint_from_json(text)


def write_history(history: list, path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
            w.writeheader()
            for row in history:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    except OSError as exc:
        raise IoError(f"cannot write metrics history {path}: {exc}") from exc


# ----------------------------------------------------------------- training


def _batches(idx: np.ndarray, size: int):
    for s in range(0, len(idx), size):
        yield idx[s:s + size]


def _score_split(model: ETNODE, ds: WindowedDataset, idx, grid, cfg) -> dict:
    """Deterministic losses and raw-unit metrics over one split."""
    sums = {"loss": 0.0, "kl": 0.0, "nll": 0.0, "mse": 0.0}
    preds = []
    with ad.no_grad():
        for batch in _batches(idx, 512):
            out = model.forward(ds.inputs(batch), grid)
            parts = loss_total(out.yhat, ds.targets(batch), out.posterior, cfg.noise_std)
            for key, node in (("loss", parts.total), ("kl", parts.kl), ("nll", parts.nll), ("mse", parts.mse)):
                sums[key] += float(node.value) * len(batch)
            preds.append(out.yhat.value)
    pred = ds.stats.invert_target(np.concatenate(preds))
    truth = ds.stats.invert_target(ds.targets(idx))
    r = pred - truth
    row = {k: v / len(idx) for k, v in sums.items()}
    row["rmse"] = float(np.sqrt(np.mean(r * r)))
    row["mae"] = float(np.mean(np.abs(r)))
    return row


def train(cfg: ModelConfig, ds: WindowedDataset, extra: Optional[dict] = None) -> Checkpoint:
    """Shuffled mini-batch Adam; returns the best-validation checkpoint.

    Training-split metrics in the history come from the stochastic forward
    passes of each epoch; validation metrics are deterministic (``z = mu``).
    """
    if ds.K != cfg.horizon or ds.T != cfg.window:
        raise ContractError(f"dataset windows (T={ds.T}, K={ds.K}) do not match config")
    train_idx = ds.splits["train"]
    val_idx = ds.splits["val"]
    if len(train_idx) == 0:
        raise ContractError("no training windows")
    rng = np.random.default_rng(cfg.seed)
    model = ETNODE(cfg, len(ds.feature_names), rng)
    params = model.parameters()
    plist = list(params.values())
    opt = Adam(params, cfg.learning_rate)
    grid = TimeGrid.integers(cfg.horizon)
    history = []
    best = (math.inf, 0, {k: p.value.copy() for k, p in params.items()})
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_idx)
        sums = {"loss": 0.0, "kl": 0.0, "nll": 0.0, "mse": 0.0}
        sq_err = abs_err = 0.0
        seen = 0
        for batch in _batches(order, cfg.batch_size):
            noise = rng.standard_normal((len(batch), cfg.latent))
            y = ds.targets(batch)
            with ad.Tape() as tape:
                out = model.forward(ds.inputs(batch), grid, noise)
                parts = loss_total(out.yhat, y, out.posterior, cfg.noise_std, plist, cfg.l2)
            total = float(parts.total.value)
            if not math.isfinite(total):
                raise DivergenceError(f"loss became non-finite at epoch {epoch}")
            grads = ad.backward(tape, parts.total)
            try:
                opt.step(grads)
            except NumericError as exc:
                log.warning("skipping batch at epoch %d: %s", epoch, exc)
                continue
            for key, node in (("loss", parts.total), ("kl", parts.kl), ("nll", parts.nll), ("mse", parts.mse)):
                sums[key] += float(node.value) * len(batch)
            r = ds.stats.invert_target(out.yhat.value) - ds.stats.invert_target(y)
            sq_err += float(np.sum(r * r))
            abs_err += float(np.sum(np.abs(r)))
            seen += len(batch)
        if seen == 0:
            raise DivergenceError(f"every batch of epoch {epoch} had non-finite gradients")
        cells = seen * cfg.horizon
        row = {"epoch": epoch, "split": "train", "rmse": math.sqrt(sq_err / cells), "mae": abs_err / cells}
        row.update({k: v / seen for k, v in sums.items()})
        history.append(row)
        if len(val_idx):
            vrow = {"epoch": epoch, "split": "val"}
            vrow.update(_score_split(model, ds, val_idx, grid, cfg))
            history.append(vrow)
            score = vrow["rmse"]
        else:
            score = row["rmse"]
        log.info("epoch %d train_rmse=%.5f score=%.5f loss=%.5f", epoch, row["rmse"], score, row["loss"])
        if score < best[0]:
            best = (score, epoch, {k: p.value.copy() for k, p in params.items()})
    history = [{k: r[k] for k in HISTORY_FIELDS} for r in history]
    return Checkpoint(cfg, tuple(ds.feature_names), best[2], ds.stats, best[1], history, dict(extra or {}))


# ----------------------------------------------------------------- evaluation


def predict_windows(ck: Checkpoint, ds: WindowedDataset, grid: TimeGrid, idx) -> np.ndarray:
    """Raw-unit predictions (len(idx), K); inputs normalized with the checkpoint's statistics."""
    idx = np.asarray(idx, dtype=int)
    if len(idx) == 0:
        return np.zeros((0, len(grid)))
    values = ck.stats.apply(ds.series.values)
    X = values[idx[:, None] + np.arange(ds.T)[None, :]]
    return ck.stats.invert_target(ck.model().predict(X, grid))


def predict(ck: Checkpoint, ds: WindowedDataset, grid: TimeGrid, split: str = "test") -> tuple[np.ndarray, np.ndarray]:
    """``(window_idx, raw predictions)`` for the split's windows that have ground truth."""
    idx = usable_windows(ds, grid, split)
    return idx, predict_windows(ck, ds, grid, idx)


def usable_windows(ds: WindowedDataset, grid: TimeGrid, split: str = "test") -> np.ndarray:
    idx = ds.splits[split]
    if len(idx) == 0:
        return idx
    _, ok = ds.truth_index(idx, grid.offsets)
    return idx[ok.all(axis=1)]


def evaluate(ck: Checkpoint, ds: WindowedDataset, grid, split: str = "test") -> dict:
    """Per-offset ``{"rmse", "mae"}`` in raw target units, ``z = mu``."""
    grid = grid if isinstance(grid, TimeGrid) else TimeGrid(tuple(grid))
    idx, pred = predict(ck, ds, grid, split)
    if len(idx) == 0:
        raise ContractError(f"the {split} split has no windows to evaluate")
    rmse, mae = metrics(pred, ds.truth(idx, grid.offsets))
    return {m: {"rmse": float(r), "mae": float(a)} for m, r, a in zip(grid.offsets, rmse, mae)}


def persistence_baseline(ds: WindowedDataset, grid, split: str = "test") -> dict:
    """Repeat the last observed target at every offset."""
    grid = grid if isinstance(grid, TimeGrid) else TimeGrid(tuple(grid))
    idx = usable_windows(ds, grid, split)
    if len(idx) == 0:
        raise ContractError(f"the {split} split has no windows to evaluate")
    last = ds.last_target(idx)
    pred = np.repeat(last[:, None], len(grid), axis=1)
    rmse, mae = metrics(pred, ds.truth(idx, grid.offsets))
    return {m: {"rmse": float(r), "mae": float(a)} for m, r, a in zip(grid.offsets, rmse, mae)}
