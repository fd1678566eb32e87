"""GRU-form vector field, taped ODE integrators, and the per-time-point readout.

Every solver step is built from autodiff ops, so gradients reach the initial
state and the field parameters by differentiating the discretization itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError, NumericError, ShapeError, SolverError

METHODS = ("euler", "rk4", "rk45")


@dataclass
class FieldParams:
    W_u: Node  # (q, q)
    b_u: Node  # (q,)
    W_h: Node
    b_h: Node
    W_r: Optional[Node] = None
    b_r: Optional[Node] = None

    @property
    def reset_gate(self) -> bool:
        return self.W_r is not None


@dataclass
class ReadoutParams:
    weight: Node  # (1, q)
    bias: Node    # (1,)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing positive offsets past the end of the input window."""

    offsets: tuple

    def __post_init__(self):
        offs = tuple(float(m) for m in self.offsets)
        if not offs:
            raise ContractError("time grid needs at least one offset")
        if not all(math.isfinite(m) for m in offs):
            raise ContractError(f"non-finite offset in {offs}")
        if offs[0] <= 0:
            raise ContractError(f"offsets must be positive, got {offs[0]}")
        if any(b <= a for a, b in zip(offs, offs[1:])):
            raise ContractError(f"offsets must be strictly increasing: {offs}")
        object.__setattr__(self, "offsets", offs)

    @classmethod
    def parse(cls, text: str) -> "TimeGrid":
        try:
            return cls(tuple(float(p) for p in text.split(",") if p.strip()))
        except ValueError:
            raise ContractError(f"cannot parse offsets {text!r}") from None

    @classmethod
    def integers(cls, K: int) -> "TimeGrid":
        return cls(tuple(range(1, K + 1)))

    def __len__(self):
        return len(self.offsets)

    def __iter__(self):
        return iter(self.offsets)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rk4"
    step: float = 0.1
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 10_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown solver {self.method!r}; choose from {METHODS}")
        if not (self.step > 0 and self.rtol > 0 and self.atol > 0 and self.max_steps > 0):
            raise ContractError("solver step, tolerances and max_steps must be positive")


def init_field(q: int, rng: np.random.Generator, reset_gate: bool = True) -> FieldParams:
    bound = 1.0 / np.sqrt(q)

    def w(name):
        return ad.param(rng.uniform(-bound, bound, (q, q)), name)

    def b(name):
        return ad.param(np.zeros(q), name)

    p = FieldParams(w("W_u"), b("b_u"), w("W_h"), b("b_h"))
    if reset_gate:
        p.W_r, p.b_r = w("W_r"), b("b_r")
    return p


def init_readout(q: int, rng: np.random.Generator) -> ReadoutParams:
    bound = 1.0 / np.sqrt(q)
    return ReadoutParams(ad.param(rng.uniform(-bound, bound, (1, q)), "weight"), ad.param(np.zeros(1), "bias"))


def vector_field(theta: FieldParams, z) -> Node:
    """``u * (h_cand - z)`` with GRU update/reset gates; autonomous in time."""
    z = ad._lift(z)
    if z.shape[-1] != theta.W_u.shape[0]:
        raise ShapeError(f"state width {z.shape[-1]} != field width {theta.W_u.shape[0]}")
    u = ad.sigmoid(ad.affine(theta.W_u, z, theta.b_u))
    gated = z
    if theta.reset_gate:
        gated = ad.mul(ad.sigmoid(ad.affine(theta.W_r, z, theta.b_r)), z)
    h_cand = ad.tanh(ad.affine(theta.W_h, gated, theta.b_h))
    return ad.mul(u, ad.sub(h_cand, z))


# ----------------------------------------------------------------- integrators

_RK4_A = ((), (0.5,), (0.0, 0.5), (0.0, 0.0, 1.0))
_RK4_B = (1 / 6, 1 / 3, 1 / 3, 1 / 6)

_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_DP_E = tuple(b5 - b4 for b5, b4 in zip(_DP_B5, _DP_B4))


def _combine(z, h, coeffs, ks):
    acc = None
    for c, k in zip(coeffs, ks):
        if c == 0.0:
            continue
        term = ad.scalar_mul(k, h * c)
        acc = term if acc is None else ad.add(acc, term)
    return z if acc is None else ad.add(z, acc)


def _rk_stages(f, z, h, A):
    ks = []
    for row in A:
        ks.append(f(_combine(z, h, row, ks)))
    return ks


def _fixed_steps(gap: float, h: float) -> list[float]:
    n = max(1, math.ceil(gap / h - 1e-9))
    return [h] * (n - 1) + [gap - (n - 1) * h]


def _check_finite(z: Node, t: float):
    if not np.all(np.isfinite(z.value)):
        raise NumericError(f"non-finite ODE state at t={t:.6g}")


def ode_solve(field: Callable[[Node], Node], z0, grid, cfg: SolverConfig = SolverConfig()) -> list[Node]:
    """Integrate ``dz/dt = field(z)`` from offset 0 and return the state at every grid offset.

    Fixed-step methods take steps of ``cfg.step`` and shorten the last one to
    land on each grid point. ``rk45`` is Dormand-Prince 5(4) with local
    extrapolation; step acceptance requires ``|err| <= atol + rtol * |z|``
    entrywise.
    """
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(tuple(grid))
    z = ad._lift(z0)
    t = 0.0
    taken = 0
    out = []
    if cfg.method == "rk45":
        return _solve_dopri(field, z, grid, cfg)
    for target in grid.offsets:
        for h in _fixed_steps(target - t, cfg.step):
            taken += 1
            if taken > cfg.max_steps:
                raise SolverError(f"exceeded max_steps={cfg.max_steps}")
            if cfg.method == "euler":
                z = ad.add(z, ad.scalar_mul(field(z), h))
            else:
                ks = _rk_stages(field, z, h, _RK4_A)
                z = _combine(z, h, _RK4_B, ks)
            _check_finite(z, t + h)
        t = target
        out.append(z)
    return out


def _solve_dopri(field, z, grid: TimeGrid, cfg: SolverConfig) -> list[Node]:
    gaps = np.diff((0.0,) + grid.offsets)
    h = min(max(cfg.step, 1e-4), float(gaps.max()))
    t = 0.0
    out = []
    k1 = field(z)
    attempts = 0
    for target in grid.offsets:
        while target - t > 1e-12 * max(1.0, abs(target)):
            attempts += 1
            if attempts > cfg.max_steps:
                raise SolverError(f"exceeded max_steps={cfg.max_steps}")
            h_try = min(h, target - t)
            ks = [k1]
            for row in _DP_A[1:]:
                z_new = _combine(z, h_try, row, ks)
                ks.append(field(z_new))
            # the last stage is evaluated at the 5th-order solution (FSAL)
            err = h_try * sum(c * k.value for c, k in zip(_DP_E, ks) if c != 0.0)
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(z.value), np.abs(z_new.value))
            ratio = float(np.max(np.abs(err) / scale))
            if not math.isfinite(ratio):
                raise NumericError(f"non-finite error estimate at t={t:.6g}")
            if ratio <= 1.0:
                landed = h_try == target - t
                t = target if landed else t + h_try
                z, k1 = z_new, ks[6]
                _check_finite(z, t)
            factor = 5.0 if ratio == 0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
            if ratio > 1.0:
                factor = min(factor, 1.0)
            h = max(h_try * factor, 1e-12)
        t = target
        out.append(z)
    return out


def readout(ro: ReadoutParams, z_points: Sequence) -> Node:
    """Apply one affine map to every latent point; returns (B, K)."""
    if not z_points:
        raise ContractError("readout needs at least one time point")
    cols = [ad.affine(ro.weight, z, ro.bias) for z in z_points]
    return cols[0] if len(cols) == 1 else ad.concat(cols, axis=-1)
