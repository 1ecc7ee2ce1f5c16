"""Ground-truth generators: Markov regime chains, translation emissions
and noise families, with exact stationary pair-law computation.

All randomness flows through numpy's Philox counter-based generator so
streams are reproducible across platforms and worker pools.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .contrast import NoiseCF, gaussian_cf, laplace_cf
from .ecf import Series

__all__ = [
    "ReducibleChainError",
    "NoiseSpec",
    "gaussian_noise",
    "laplace_noise",
    "gaussian_mixture_noise",
    "HmmSimConfig",
    "stationary_dist",
    "q_star",
    "sample",
    "make_rng",
]


class ReducibleChainError(ValueError):
    """Raised when a transition matrix has no unique stationary law."""


def make_rng(*seed_words: int) -> np.random.Generator:
    """Philox generator keyed on one or more seed words (e.g. a top-level
    seed plus a replicate index)."""
    return np.random.Generator(np.random.Philox(key=None, counter=None,
                                                seed=list(seed_words)))


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family: sampler plus its density and characteristic function."""

    name: str
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    pdf: Callable[[np.ndarray], np.ndarray]
    cf: NoiseCF


def gaussian_noise(sigma: float = 1.0) -> NoiseSpec:
    def pdf(x):
        x = np.asarray(x, dtype=float)
        if sigma == 0.0:
            raise ValueError("degenerate noise has no density")
        return np.exp(-0.5 * (x / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))

    return NoiseSpec(
        name=f"gaussian({sigma})",
        sampler=lambda rng, n: rng.normal(0.0, sigma, size=n) if sigma > 0 else np.zeros(n),
        pdf=pdf,
        cf=gaussian_cf(sigma),
    )


def laplace_noise(b: float = 1.0) -> NoiseSpec:
    return NoiseSpec(
        name=f"laplace({b})",
        sampler=lambda rng, n: rng.laplace(0.0, b, size=n),
        pdf=lambda x: np.exp(-np.abs(np.asarray(x, dtype=float)) / b) / (2 * b),
        cf=laplace_cf(b),
    )


def gaussian_mixture_noise(w1: float, mu1: float, s1: float,
                           mu2: float, s2: float) -> NoiseSpec:
    """Two-component Gaussian mixture noise."""
    w2 = 1.0 - w1

    def sampler(rng, n):
        pick = rng.random(n) < w1
        z = rng.normal(0.0, 1.0, size=n)
        return np.where(pick, mu1 + s1 * z, mu2 + s2 * z)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        g1 = np.exp(-0.5 * ((x - mu1) / s1) ** 2) / (s1 * np.sqrt(2 * np.pi))
        g2 = np.exp(-0.5 * ((x - mu2) / s2) ** 2) / (s2 * np.sqrt(2 * np.pi))
        return w1 * g1 + w2 * g2

    cf = NoiseCF(lambda t: w1 * np.exp(1j * mu1 * t - 0.5 * (s1 * t) ** 2)
                 + w2 * np.exp(1j * mu2 * t - 0.5 * (s2 * t) ** 2))
    return NoiseSpec(name="gaussian_mixture", sampler=sampler, pdf=pdf, cf=cf)


@dataclass(frozen=True)
class HmmSimConfig:
    """Configuration of a hidden-Markov ground truth."""

    P: np.ndarray
    m_true: np.ndarray
    noise: NoiseSpec
    n: int
    seed: int
    init: np.ndarray | None = None  # None = stationary start

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        m = np.asarray(self.m_true, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"P must be square, got shape {P.shape}")
        if m.shape != (P.shape[0],):
            raise ValueError("m_true length must match P")
        if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-10):
            raise ValueError("P rows must be nonnegative and sum to 1")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "m_true", m)


def stationary_dist(P) -> np.ndarray:
    """Unique stationary distribution of an irreducible aperiodic chain."""
    P = np.asarray(P, dtype=float)
    k = P.shape[0]
    if k == 1:
        return np.array([1.0])
    vals, vecs = np.linalg.eig(P.T)
    near_one = np.abs(vals - 1.0) < 1e-9
    if near_one.sum() != 1 or np.sum(np.abs(vals) > 1.0 - 1e-9) != 1:
        raise ReducibleChainError("transition matrix has no unique dominant stationary law")
    v = vecs[:, near_one].ravel().real
    mu = v / v.sum()
    if np.any(mu < -1e-12):
        raise ReducibleChainError("stationary vector has negative entries")
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    if np.max(np.abs(mu @ P - mu)) > 1e-12:
        raise ReducibleChainError("stationary equation residual too large")
    return mu


def q_star(P) -> np.ndarray:
    """Stationary pair law: Q*_{ij} = mu_i P_{ij}."""
    P = np.asarray(P, dtype=float)
    mu = stationary_dist(P)
    return mu[:, None] * P


def sample(cfg: HmmSimConfig) -> tuple[Series, np.ndarray]:
    """Draw a regime path and observations y_i = m[s_i] + eps_i."""
    rng = make_rng(cfg.seed)
    k = cfg.P.shape[0]
    init = stationary_dist(cfg.P) if cfg.init is None else np.asarray(cfg.init, dtype=float)
    cum_init = np.cumsum(init)
    cum_rows = np.cumsum(cfg.P, axis=1)
    u = rng.random(cfg.n)
    s = np.empty(cfg.n, dtype=np.int64)
    s[0] = np.searchsorted(cum_init, u[0], side="right")
    for t in range(1, cfg.n):
        s[t] = np.searchsorted(cum_rows[s[t - 1]], u[t], side="right")
    s = np.minimum(s, k - 1)
    eps = cfg.noise.sampler(rng, cfg.n)
    y = cfg.m_true[s] + eps
    return Series(y=y), s
