"""Tensorized GRU: one GRU per input variable, each with its own ``d``-dim row.

Shapes carry a leading batch axis ``B``: hidden matrices are ``(B, n, d)`` and
inputs ``(B, n)`` with ``n = N + 1`` variables ordered exogenous-then-target.
Variable ``k`` only ever sees ``x[:, k]`` and row ``k`` of the state.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError, ShapeError


@dataclass
class TgruParams:
    W_r: Node  # (n, d, d) hidden-to-hidden
    W_z: Node
    W_h: Node
    V_r: Node  # (n, d, 1) input-to-hidden
    V_z: Node
    V_h: Node
    b_r: Node  # (n, d)
    b_z: Node
    b_h: Node

    def __post_init__(self):
        n, d = self.b_r.shape
        for f in fields(self):
            shape = getattr(self, f.name).shape
            want = {"W": (n, d, d), "V": (n, d, 1), "b": (n, d)}[f.name[0]]
            if shape != want:
                raise ShapeError(f"{f.name}: expected {want}, got {shape}")

    @property
    def n_vars(self) -> int:
        return self.b_r.shape[0]

    @property
    def hidden(self) -> int:
        return self.b_r.shape[1]

    def named(self) -> dict[str, Node]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def init_tgru(n_vars: int, d: int, rng: np.random.Generator) -> TgruParams:
    bound = 1.0 / np.sqrt(d)
    kw = {}
    for gate in "rzh":
        kw[f"W_{gate}"] = ad.param(rng.uniform(-bound, bound, (n_vars, d, d)), f"W_{gate}")
        kw[f"V_{gate}"] = ad.param(rng.uniform(-bound, bound, (n_vars, d, 1)), f"V_{gate}")
        kw[f"b_{gate}"] = ad.param(np.zeros((n_vars, d)), f"b_{gate}")
    return TgruParams(**kw)


def _cell(WT, H, in_r, in_z, in_h):
    # variable-major layout: H is (n, B, d); WT holds W^n transposed per variable
    W_r, W_z, W_h = WT
    R = ad.sigmoid(ad.add(ad.matmul(H, W_r), in_r))
    U = ad.sigmoid(ad.add(ad.matmul(H, W_z), in_z))
    H_cand = ad.tanh(ad.add(ad.matmul(ad.mul(R, H), W_h), in_h))
    # (1 - U) * H + U * H_cand
    return ad.add(H, ad.mul(U, ad.sub(H_cand, H)))


def _transposed(p: TgruParams):
    return tuple(ad.transpose(W, (0, 2, 1)) for W in (p.W_r, p.W_z, p.W_h))


def _input_terms(p: TgruParams, X, spec):
    # V^n x^n + b^n for each gate; b is (n, d) and broadcasts over the batch axis
    return [
        ad.add(ad.einsum(spec, V, X), ad.reshape(b, (b.shape[0], 1, b.shape[1])))
        for V, b in ((p.V_r, p.b_r), (p.V_z, p.b_z), (p.V_h, p.b_h))
    ]


def tgru_step(p: TgruParams, H_prev, x) -> Node:
    """One cell update. ``H_prev``: (B, n, d); ``x``: (B, n)."""
    H_prev, x = ad._lift(H_prev), ad._lift(x)
    n, d = p.n_vars, p.hidden
    if H_prev.value.ndim != 3 or H_prev.shape[1:] != (n, d):
        raise ShapeError(f"hidden matrix must be (B, {n}, {d}), got {H_prev.shape}")
    if x.shape != (H_prev.shape[0], n):
        raise ShapeError(f"input must be ({H_prev.shape[0]}, {n}), got {x.shape}")
    x3 = ad.reshape(x, x.shape + (1,))
    terms = _input_terms(p, x3, "nik,bnk->nbi")
    H = _cell(_transposed(p), ad.transpose(H_prev, (1, 0, 2)), *terms)
    return ad.transpose(H, (1, 0, 2))


def tgru_unroll(p: TgruParams, X, H0=None, stacked: bool = False):
    """Encode windows ``X`` of shape (B, T, n).

    Returns ``[H_1, ..., H_T]`` (each (B, n, d)), or with ``stacked=True`` a
    single (B, T, n, d) node.
    """
    X = ad._lift(X)
    if X.value.ndim != 3 or X.shape[1] == 0:
        raise ContractError(f"window must be (B, T>=1, n), got {X.shape}")
    B, T, n = X.shape
    if n != p.n_vars:
        raise ShapeError(f"window has {n} variables, cell expects {p.n_vars}")
    if H0 is None:
        H = ad.constant(np.zeros((n, B, p.hidden)))
    else:
        H = ad.transpose(ad._lift(H0), (1, 0, 2))
    WT = _transposed(p)
    # input projections for all steps at once, time-major so per-step slices are views
    terms = _input_terms(p, ad.reshape(X, (B, T, n, 1)), "nik,btnk->tnbi")
    states = []
    for t in range(T):
        H = _cell(WT, H, terms[0][t], terms[1][t], terms[2][t])
        states.append(H)
    seq = ad.transpose(ad.stack(states, axis=0), (2, 0, 1, 3))
    if stacked:
        return seq
    return [seq[:, t] for t in range(T)]
