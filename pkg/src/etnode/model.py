"""The ETN-ODE forecaster: TGRU encoder -> tandem attention -> latent Gaussian -> ODE decoder."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from . import autodiff as ad
from .attention import (
    context_vector,
    init_scorers,
    mean_pool_context,
    stack_states,
    temporal_attention,
    variable_attention,
)
from .autodiff import Node
from .config import ModelConfig
from .errors import ContractError, ShapeError
from .latent import PosteriorParams, encode_posterior, init_encoder, sample_latent
from .odenet import TimeGrid, init_field, init_readout, ode_solve, readout, vector_field
from .tgru import init_tgru, tgru_unroll


@dataclass
class Forward:
    yhat: Node                 # (B, K) normalized target
    posterior: PosteriorParams
    z0: Node
    alpha: Optional[Node] = None
    beta: Optional[Node] = None


def _group(prefix, params) -> dict[str, Node]:
    return {
        f"{prefix}.{f.name}": getattr(params, f.name)
        for f in fields(params)
        if getattr(params, f.name) is not None
    }


class ETNODE:
    """Parameter container plus forward pass for one model variant.

    ``variant='no_att'`` swaps tandem attention for uniform mean pooling;
    ``variant='no_ode'`` swaps the ODE solve and readout for one affine map
    from the context vector to the K integer-offset outputs. The posterior is
    still formed so the loss keeps its KL term.
    """

    def __init__(self, cfg: ModelConfig, n_vars: int, rng: Optional[np.random.Generator] = None):
        if n_vars < 2:
            raise ContractError("need at least one exogenous variable plus the target")
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.cfg = cfg
        self.n_vars = n_vars
        d, q = cfg.hidden, cfg.latent
        self.tgru = init_tgru(n_vars, d, rng)
        self.temporal = self.variable = None
        if cfg.variant != "no_att":
            self.temporal, self.variable = init_scorers(n_vars, d, rng)
        self.encoder = init_encoder(n_vars, q, rng)
        self.field = self.readout = self.head = None
        if cfg.variant == "no_ode":
            bound = 1.0 / np.sqrt(n_vars)
            self.head = (
                ad.param(rng.uniform(-bound, bound, (cfg.horizon, n_vars)), "weight"),
                ad.param(np.zeros(cfg.horizon), "bias"),
            )
        else:
            self.field = init_field(q, rng, cfg.reset_gate)
            self.readout = init_readout(q, rng)
        self.solver = cfg.solver_config()

    def parameters(self) -> dict[str, Node]:
        out = _group("tgru", self.tgru)
        if self.temporal is not None:
            out.update(_group("attn.temporal", self.temporal))
            out.update(_group("attn.variable", self.variable))
        out.update(_group("encoder", self.encoder))
        if self.head is not None:
            out["head.weight"], out["head.bias"] = self.head
        else:
            out.update(_group("field", self.field))
            out.update(_group("readout", self.readout))
        return out

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(values) != set(params):
            missing = sorted(set(params) - set(values))
            extra = sorted(set(values) - set(params))
            raise ShapeError(f"parameter mismatch: missing {missing}, unexpected {extra}")
        for name, node in params.items():
            arr = np.asarray(values[name], dtype=float)
            if arr.shape != node.shape:
                raise ShapeError(f"{name}: expected {node.shape}, got {arr.shape}")
            node.value = arr.copy()

    def encode(self, X):
        """Context vector and attention weights for windows ``X`` of shape (B, T, n)."""
        states = tgru_unroll(self.tgru, X, stacked=True)
        if self.temporal is None:
            return mean_pool_context(states), None, None
        alpha = temporal_attention(self.temporal, states)
        beta = variable_attention(self.variable, alpha, states)
        return context_vector(alpha, beta, states), alpha, beta

    def decode(self, z0, grid: TimeGrid, c=None) -> Node:
        if self.head is not None:
            cols = []
            for m in grid.offsets:
                k = int(round(m))
                if k != m or not 1 <= k <= self.cfg.horizon:
                    raise ContractError(f"no_ode variant only predicts integer offsets 1..{self.cfg.horizon}, got {m}")
                cols.append(k - 1)
            out = ad.affine(self.head[0], c, self.head[1])
            return out if cols == list(range(self.cfg.horizon)) else ad.take(out, (slice(None), cols))

        def field(z):
            return vector_field(self.field, z)

        return readout(self.readout, ode_solve(field, z0, grid, self.solver))

    def forward(self, X, grid: TimeGrid, noise=None) -> Forward:
        """``noise=None`` uses the posterior mean (deterministic prediction)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[2] != self.n_vars:
            raise ShapeError(f"windows must be (B, T, {self.n_vars}), got {X.shape}")
        c, alpha, beta = self.encode(ad.constant(X))
        post = encode_posterior(self.encoder, c)
        z0 = post.mu if noise is None else sample_latent(post, noise)
        return Forward(self.decode(z0, grid, c), post, z0, alpha, beta)

    def predict(self, X, grid: TimeGrid, chunk: int = 512) -> np.ndarray:
        """Deterministic normalized predictions, shape (B, K)."""
        X = np.asarray(X, dtype=float)
        outs = []
        with ad.no_grad():
            for s in range(0, X.shape[0], chunk):
                outs.append(self.forward(X[s:s + chunk], grid).yhat.value)
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, len(grid)))

    def attention(self, X, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
        if self.temporal is None:
            raise ContractError("this model variant has no attention")
        alphas, betas = [], []
        with ad.no_grad():
            for s in range(0, X.shape[0], chunk):
                _, alpha, beta = self.encode(ad.constant(X[s:s + chunk]))
                alphas.append(alpha.value)
                betas.append(beta.value)
        return np.concatenate(alphas), np.concatenate(betas)
