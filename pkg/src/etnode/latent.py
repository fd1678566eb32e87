"""Gaussian posterior over the initial ODE state, reparameterized sampling, KL to N(0, I)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError, ShapeError

SIGMA_FLOOR = 1e-3


@dataclass
class EncoderParams:
    A_mu: Node  # (q, n)
    b_mu: Node  # (q,)
    A_sigma: Node
    b_sigma: Node


@dataclass
class PosteriorParams:
    mu: Node     # (B, q)
    sigma: Node  # (B, q), strictly positive


def init_encoder(n_vars: int, q: int, rng: np.random.Generator) -> EncoderParams:
    bound = 1.0 / np.sqrt(n_vars)
    return EncoderParams(
        ad.param(rng.uniform(-bound, bound, (q, n_vars)), "A_mu"),
        ad.param(np.zeros(q), "b_mu"),
        ad.param(rng.uniform(-bound, bound, (q, n_vars)), "A_sigma"),
        ad.param(np.zeros(q), "b_sigma"),
    )


def encode_posterior(phi: EncoderParams, c, floor: float = SIGMA_FLOOR) -> PosteriorParams:
    c = ad._lift(c)
    if c.shape[-1] != phi.A_mu.shape[1]:
        raise ShapeError(f"context has {c.shape[-1]} entries, encoder expects {phi.A_mu.shape[1]}")
    mu = ad.affine(phi.A_mu, c, phi.b_mu)
    sigma = ad.softplus(ad.affine(phi.A_sigma, c, phi.b_sigma))
    if floor:
        sigma = ad.add(sigma, floor)
    return PosteriorParams(mu, sigma)


def sample_latent(post: PosteriorParams, noise) -> Node:
    """``mu + sigma * noise``; the caller owns the random draw."""
    noise = ad._lift(noise)
    if noise.shape != post.mu.shape:
        raise ShapeError(f"noise {noise.shape} does not match posterior {post.mu.shape}")
    return ad.add(post.mu, ad.mul(post.sigma, noise))


def kl_divergence(post: PosteriorParams) -> Node:
    """KL(q || N(0, I)) summed over latent dims and averaged over the batch."""
    if np.any(post.sigma.value <= 0):
        raise ContractError("posterior sigma must be positive")
    mu, sigma = post.mu, post.sigma
    var = ad.square(sigma)
    per_dim = ad.sub(ad.add(ad.square(mu), var), ad.add(ad.log(var), 1.0))
    total = ad.sum(per_dim)
    batch = mu.shape[0] if mu.value.ndim > 1 else 1
    return ad.scalar_mul(total, 0.5 / batch)
