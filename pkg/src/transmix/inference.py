"""Sampling variability of the parametric estimator via circular
moving-block bootstrap, and the confidence intervals built from it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .contrast import ContrastConfig, grid_for_config
from .ecf import Series
from .estimate import (CompactSpec, OptimizationFailureError, SelectionConfig,
                       fit_compact, warm_start_x)
from .model import ThetaParams, n_free_params

__all__ = [
    "BootstrapError",
    "CovarianceEstimate",
    "free_coords",
    "block_resample",
    "bootstrap_sigma",
    "confidence_intervals",
    "default_block_len",
]


class BootstrapError(RuntimeError):
    """Raised when too many bootstrap replicates fail to refit."""


@dataclass(frozen=True)
class CovarianceEstimate:
    """Covariance of sqrt(n) * (theta_hat - theta_star) over the free
    coordinates (m[1:], then Q row-major without the last entry)."""

    sigma: np.ndarray
    method: str
    replicates: int
    block_len: int
    n_failed: int = 0


def free_coords(theta: ThetaParams) -> np.ndarray:
    """Free coordinate vector of theta."""
    return np.concatenate([theta.m[1:], theta.Q.ravel()[:-1]])


def default_block_len(n: int) -> int:
    return int(np.ceil(n ** (1.0 / 3.0)))


def block_resample(y: np.ndarray, block_len: int,
                   rng: np.random.Generator) -> np.ndarray:
    """One circular moving-block resample of the same length as y."""
    n = y.shape[0]
    n_blocks = int(np.ceil(n / block_len))
    starts = rng.integers(0, n, size=n_blocks)
    idx = (starts[:, None] + np.arange(block_len)[None, :]) % n
    return y[idx.ravel()[:n]]


def bootstrap_sigma(s: Series, k: int, spec: CompactSpec,
                    ccfg: ContrastConfig, scfg: SelectionConfig,
                    replicates: int = 200, block_len: int | None = None,
                    seed: int = 0, theta_hat: ThetaParams | None = None,
                    return_replicates: bool = False):
    """Circular moving-block bootstrap of the compact-set estimator.

    Each replicate resamples the series, refits on the compact set
    (warm-started at the point estimate when given) and the covariance
    of the replicate estimates is scaled by n.  Replicate seeds derive
    from (seed, replicate index), so results do not depend on scheduling.
    """
    if replicates < 50:
        raise ValueError(f"need at least 50 replicates, got {replicates}")
    n = s.n
    if block_len is None:
        block_len = default_block_len(n)
    if not (1 <= block_len <= n // 2):
        raise ValueError(f"block_len must be in [1, n/2], got {block_len}")
    x0 = warm_start_x(theta_hat) if theta_hat is not None else None
    coords = []
    failed = 0
    for r in range(replicates):
        rng = np.random.Generator(np.random.Philox(seed=[seed, r]))
        yb = block_resample(s.y, block_len, rng)
        try:
            grid_b = grid_for_config(Series(y=yb), ccfg)
            theta_b = fit_compact(k, spec, grid_b, ccfg, scfg, y=yb, x0=x0)
        except (OptimizationFailureError, ValueError):
            failed += 1
            continue
        coords.append(free_coords(theta_b))
    if failed > 0.1 * replicates:
        raise BootstrapError(
            f"{failed}/{replicates} bootstrap replicates failed to refit")
    X = np.asarray(coords)
    if X.shape[0] < 2:
        raise BootstrapError("not enough successful replicates")
    centered = X - X.mean(axis=0)
    sigma = n * (centered.T @ centered) / (X.shape[0] - 1)
    sigma = 0.5 * (sigma + sigma.T)
    est = CovarianceEstimate(sigma=sigma, method="bootstrap",
                             replicates=replicates, block_len=block_len,
                             n_failed=failed)
    if return_replicates:
        return est, X
    return est


def confidence_intervals(theta_hat: ThetaParams, cov: CovarianceEstimate,
                         n: int, level: float = 0.95) -> np.ndarray:
    """Per-free-coordinate normal intervals: center +/- z * sqrt(S_jj/n).

    Returns an array of shape (d, 2) with lower and upper bounds."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    center = free_coords(theta_hat)
    d = n_free_params(theta_hat.k)
    if cov.sigma.shape != (d, d):
        raise ValueError("covariance dimension does not match theta")
    z = norm.ppf(0.5 * (1.0 + level))
    half = z * np.sqrt(np.clip(np.diag(cov.sigma), 0.0, None) / n)
    return np.column_stack([center - half, center + half])
