"""Tandem attention over TGRU states and the context vector fed to the latent encoder.

``H_seq`` is either a list of ``(B, n, d)`` hidden matrices or one stacked
``(B, T, n, d)`` node. ``alpha`` has shape ``(B, T, n)`` and sums to one over
``T`` for every variable; ``beta`` has shape ``(B, n)`` and sums to one over
the variables.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import IoError, ShapeError


@dataclass
class TemporalScorerParams:
    """Per-variable affine score ``f_n(h) = w[n] . h + c[n]``."""

    w: Node  # (n, d)
    c: Node  # (n,)


@dataclass
class VariableScorerParams:
    """One affine score ``f(p) = v . p + c`` shared by all variables."""

    v: Node  # (d,)
    c: Node  # ()


def init_scorers(n_vars: int, d: int, rng: np.random.Generator):
    bound = 1.0 / np.sqrt(d)
    temporal = TemporalScorerParams(
        ad.param(rng.uniform(-bound, bound, (n_vars, d)), "w"),
        ad.param(np.zeros(n_vars), "c"),
    )
    variable = VariableScorerParams(
        ad.param(rng.uniform(-bound, bound, (d,)), "v"),
        ad.param(np.zeros(()), "c"),
    )
    return temporal, variable


def stack_states(H_seq) -> Node:
    if isinstance(H_seq, Node):
        if H_seq.value.ndim != 4:
            raise ShapeError(f"stacked states must be (B, T, n, d), got {H_seq.shape}")
        return H_seq
    return ad.stack(list(H_seq), axis=1)


def temporal_attention(scorers: TemporalScorerParams, H_seq) -> Node:
    H = stack_states(H_seq)
    if H.shape[2:] != scorers.w.shape:
        raise ShapeError(f"states {H.shape} do not match scorer {scorers.w.shape}")
    scores = ad.add(ad.einsum("btni,ni->btn", H, scorers.w), scorers.c)
    return ad.softmax(scores, axis=1)


def pooled_states(alpha, H_seq) -> Node:
    """``sum_t alpha_t * H_t`` with alpha broadcast along the hidden axis; (B, n, d)."""
    return ad.einsum("btn,btni->bni", alpha, stack_states(H_seq))


def variable_attention(scorer: VariableScorerParams, alpha, H_seq) -> Node:
    P = pooled_states(alpha, H_seq)
    if P.shape[-1] != scorer.v.shape[0]:
        raise ShapeError(f"pooled rows have width {P.shape[-1]}, scorer expects {scorer.v.shape[0]}")
    scores = ad.add(ad.einsum("bni,i->bn", P, scorer.v), scorer.c)
    return ad.softmax(scores, axis=1)


def context_vector(alpha, beta, H_seq) -> Node:
    """``C[n] = beta[n] * sum_t alpha[t, n] * sum_i H_t[n, i]``; shape (B, n)."""
    H = stack_states(H_seq)
    row_sums = ad.sum(H, axis=3)                       # (B, T, n)
    weighted = ad.sum(ad.mul(alpha, row_sums), axis=1)  # (B, n)
    return ad.mul(beta, weighted)


def mean_pool_context(H_seq) -> Node:
    """Attention-free context: uniform weights over time and over variables."""
    H = stack_states(H_seq)
    _, T, n, _ = H.shape
    return ad.scalar_mul(ad.sum(ad.sum(H, axis=3), axis=1), 1.0 / (T * n))


def export_attention(alpha, beta, feature_names: Sequence[str], path) -> tuple[Path, Path]:
    """Write batch-averaged ``variable_attention.csv`` and ``temporal_attention.csv`` into ``path``.

    ``alpha`` is (B, T, n) or (T, n); ``beta`` is (B, n) or (n,). Time steps are
    numbered 1..T, oldest first.
    """
    alpha = np.asarray(getattr(alpha, "value", alpha), dtype=float)
    beta = np.asarray(getattr(beta, "value", beta), dtype=float)
    if alpha.ndim == 3:
        alpha = alpha.mean(axis=0)
    if beta.ndim == 2:
        beta = beta.mean(axis=0)
    names = list(feature_names)
    if len(names) != beta.shape[0] or alpha.shape[1] != len(names):
        raise ShapeError(f"{len(names)} names for attention over {beta.shape[0]} variables")
    out = Path(path)
    try:
        os.makedirs(out, exist_ok=True)
        var_path = out / "variable_attention.csv"
        with open(var_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "weight"])
            for name, b in zip(names, beta):
                w.writerow([name, repr(float(b))])
        tmp_path = out / "temporal_attention.csv"
        with open(tmp_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "feature", "weight"])
            for t in range(alpha.shape[0]):
                for name, a in zip(names, alpha[t]):
                    w.writerow([t + 1, name, repr(float(a))])
    except OSError as exc:
        raise IoError(f"cannot write attention export to {out}: {exc}") from exc
    return var_path, tmp_path


def load_attention(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read an export directory back into ``(alpha (T, n), beta (n,), names)``."""
    path = Path(path)
    with open(path / "variable_attention.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    names = [r["feature"] for r in rows]
    beta = np.array([float(r["weight"]) for r in rows])
    with open(path / "temporal_attention.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    T = max(int(r["t"]) for r in rows)
    alpha = np.zeros((T, len(names)))
    col = {name: k for k, name in enumerate(names)}
    for r in rows:
        alpha[int(r["t"]) - 1, col[r["feature"]]] = float(r["weight"])
    return alpha, beta, names
