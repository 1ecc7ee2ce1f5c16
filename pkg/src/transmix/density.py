"""Noise-density estimation by penalized marginal pseudo-likelihood over
Gaussian-mixture sieves.

The marginal density of an observation is sum_j mu(j) f(y - m_j) with
(mu, m) frozen from the parametric fit, so for f a p-component Gaussian
mixture the marginal is a p*k Gaussian mixture amenable to EM.  The
sieve bounds shrink with p: component scales live in [b_p, B] with
b_p = b0 (log p)^2 / p and locations in [-A_p, A_p] with
A_p = a0 |log b_p|.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .ecf import Series
from .model import ThetaParams, marginal_mu

__all__ = [
    "GaussianMixtureDensity",
    "SieveConfig",
    "DensityFit",
    "sieve_bounds",
    "marginal_loglik",
    "em_step",
    "fit_sieve",
    "penalty",
    "select_p",
    "mixture_marginal",
    "hellinger_sq",
    "l1_distance",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianMixtureDensity:
    """Element of the p-component sieve: weights, locations and scales."""

    pi: np.ndarray
    alpha: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if not (pi.shape == alpha.shape == u.shape) or pi.ndim != 1:
            raise ValueError("pi, alpha, u must be 1-D arrays of equal length")
        if np.any(pi < -1e-12) or abs(pi.sum() - 1.0) > 1e-8:
            raise ValueError("pi must be a probability vector")
        if np.any(u <= 0):
            raise ValueError("scales must be positive")
        for arr in (pi, alpha, u):
            arr.flags.writeable = False
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "u", u)

    @property
    def p(self) -> int:
        return self.pi.shape[0]

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = (x[:, None] - self.alpha[None, :]) / self.u[None, :]
        comp = np.exp(-0.5 * z * z) / (self.u[None, :] * np.sqrt(2 * np.pi))
        return comp @ self.pi

    def in_bounds(self, A_p: float, b_p: float, B: float, slack: float = 1e-9) -> bool:
        return (np.all(np.abs(self.alpha) <= A_p + slack)
                and np.all(self.u >= b_p - slack)
                and np.all(self.u <= B + slack))

    def to_json_dict(self) -> dict:
        return {"p": self.p, "pi": self.pi.tolist(),
                "alpha": self.alpha.tolist(), "u": self.u.tolist()}


@dataclass(frozen=True)
class SieveConfig:
    """Sieve geometry and penalty constants."""

    p_max: int = 20
    p_min: int = 2
    b0: float = 1.0
    a0: float = 2.0
    B: float | None = None  # None = 3 * sample standard deviation
    kappa: float = 1.0 / 3.0

    def x_p(self, p: int) -> float:
        """Summable complexity weights: sum_p exp(-x_p) < inf for x_p = p."""
        return float(p)

    def scale_cap(self, y: np.ndarray) -> float:
        return self.B if self.B is not None else 3.0 * float(np.std(y))


def sieve_bounds(p: int, cfg: SieveConfig, y: np.ndarray) -> tuple[float, float, float]:
    """(A_p, b_p, B) for the p-component sieve."""
    if p < 2:
        raise ValueError(f"sieve needs p >= 2, got {p}")
    b_p = cfg.b0 * np.log(p) ** 2 / p
    A_p = cfg.a0 * abs(np.log(b_p))
    return float(A_p), float(b_p), cfg.scale_cap(y)


@dataclass
class DensityFit:
    """Penalized sieve selection result with the full per-p table."""

    p_hat: int
    f_hat: GaussianMixtureDensity
    theta_hat: ThetaParams
    ell_table: dict
    pen_table: dict
    Dn_table: dict
    diagnostics: dict = field(default_factory=dict)


def _component_log_weights(f: GaussianMixtureDensity, theta: ThetaParams):
    """Log weights, means and scales of the p*k Gaussian components of
    the marginal mixture."""
    mu = marginal_mu(theta)
    with np.errstate(divide="ignore"):
        logw = np.log(np.outer(f.pi, mu)).ravel()          # (p*k,)
    means = (f.alpha[:, None] + theta.m[None, :]).ravel()
    scales = np.repeat(f.u, theta.k)
    return logw, means, scales


def _log_marginal_matrix(f, y, theta):
    """log of per-observation, per-component weighted densities (n, p*k)."""
    logw, means, scales = _component_log_weights(f, theta)
    z = (y[:, None] - means[None, :]) / scales[None, :]
    return logw[None, :] - 0.5 * z * z - np.log(scales)[None, :] - 0.5 * _LOG_2PI


def marginal_loglik(f: GaussianMixtureDensity, s: Series,
                    theta_hat: ThetaParams) -> float:
    """(1/n) sum_i log sum_j mu(j) f(Y_i - m_j)."""
    L = _log_marginal_matrix(f, s.y, theta_hat)
    return float(np.mean(logsumexp(L, axis=1)))


def em_step(f: GaussianMixtureDensity, s: Series, theta_hat: ThetaParams,
            bounds: tuple[float, float, float]) -> GaussianMixtureDensity:
    """One EM iteration over the p*k component mixture, with location and
    scale updates truncated into the sieve box.

    The scale update recomputes the second central moment around the
    freshly updated (truncated) location before truncating the standard
    deviation into [b_p, B].
    """
    f_next, _ = _em_step_with_ll(f, s.y, theta_hat, bounds)
    return f_next


def _em_step_with_ll(f, y, theta_hat, bounds):
    """EM iteration returning also the log-likelihood of the INPUT f,
    so the fitting loop evaluates the density matrix once per step."""
    A_p, b_p, B = bounds
    p, k = f.p, theta_hat.k
    L = _log_marginal_matrix(f, y, theta_hat)          # (n, p*k)
    row_lse = logsumexp(L, axis=1, keepdims=True)
    ll_in = float(np.mean(row_lse))
    R = np.exp(L - row_lse)                            # responsibilities
    # collapse the latent-state axis: shape (n, p)
    Rp = R.reshape(y.shape[0], p, k)
    resid = y[:, None, None] - theta_hat.m[None, None, :]   # (n, 1, k)
    w_i = Rp.sum(axis=(0, 2))                          # (p,)
    pi_new = w_i / w_i.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha_raw = (Rp * resid).sum(axis=(0, 2)) / w_i
    alpha_new = np.clip(np.where(w_i > 0, alpha_raw, f.alpha), -A_p, A_p)
    sq = (resid - alpha_new[None, :, None]) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        var_raw = (Rp * sq).sum(axis=(0, 2)) / w_i
    u_new = np.clip(np.sqrt(np.where(w_i > 0, var_raw, f.u ** 2)), b_p, B)
    return GaussianMixtureDensity(pi=pi_new, alpha=alpha_new, u=u_new), ll_in


def _init_density(p, y, bounds, rng=None):
    """Quantile-spread initializer, optionally jittered."""
    A_p, b_p, B = bounds
    centered = y - np.mean(y)
    levels = (np.arange(p) + 0.5) / p
    alpha = np.quantile(centered, levels)
    spread = max(np.std(centered) / p, 1e-3)
    u = np.full(p, spread)
    if rng is not None:
        alpha = alpha + rng.normal(0.0, 0.25 * (np.std(centered) + 1e-12), size=p)
        u = u * np.exp(rng.normal(0.0, 0.5, size=p))
    alpha = np.clip(alpha, -A_p, A_p)
    u = np.clip(u, b_p, B)
    return GaussianMixtureDensity(pi=np.full(p, 1.0 / p), alpha=alpha, u=u)


def fit_sieve(p: int, s: Series, theta_hat: ThetaParams, cfg: SieveConfig,
              restarts: int = 3, seed: int = 0, tol: float = 1e-8,
              max_iter: int = 500, diagnostics: dict | None = None
              ) -> GaussianMixtureDensity:
    """Best-of-restarts EM maximizer of the marginal pseudo-likelihood
    over the p-component sieve."""
    bounds = sieve_bounds(p, cfg, s.y)
    best_f, best_ll = None, -np.inf
    decreases = 0
    for r in range(restarts):
        rng = None if r == 0 else np.random.Generator(
            np.random.Philox(seed=[seed, p, r]))
        f = _init_density(p, s.y, bounds, rng)
        ll = -np.inf
        for _ in range(max_iter):
            f_next, ll_now = _em_step_with_ll(f, s.y, theta_hat, bounds)
            if ll_now < ll - 1e-9:
                decreases += 1
            if ll_now - ll < tol and np.isfinite(ll):
                break
            f = f_next
            ll = ll_now
        ll = marginal_loglik(f, s, theta_hat)
        if ll > best_ll:
            best_ll, best_f = ll, f
    if diagnostics is not None:
        diagnostics.setdefault("em_decreases", 0)
        diagnostics["em_decreases"] += decreases
    return best_f


def penalty(p: int, n: int, cfg: SieveConfig, k_star: int) -> float:
    """(3 kappa / n) * (k* p + x_p) * log n."""
    if p < 2 or n < 2:
        raise ValueError("need p >= 2 and n >= 2")
    return 3.0 * cfg.kappa / n * (k_star * p + cfg.x_p(p)) * np.log(n)


def select_p(s: Series, theta_hat: ThetaParams, cfg: SieveConfig,
             seed: int = 0, restarts: int = 3) -> DensityFit:
    """Minimize D_n(p) = -ell_n(f_p) + pen(p, n) over the sieve grid.

    Ties break toward the smaller p."""
    ell_table, pen_table, dn_table, fits = {}, {}, {}, {}
    diagnostics = {}
    for p in range(cfg.p_min, cfg.p_max + 1):
        f_p = fit_sieve(p, s, theta_hat, cfg, restarts=restarts, seed=seed,
                        diagnostics=diagnostics)
        ell = marginal_loglik(f_p, s, theta_hat)
        pen = penalty(p, s.n, cfg, theta_hat.k)
        ell_table[p] = ell
        pen_table[p] = pen
        dn_table[p] = -ell + pen
        fits[p] = f_p
    p_hat = min(dn_table, key=lambda p: (dn_table[p], p))
    return DensityFit(p_hat=p_hat, f_hat=fits[p_hat], theta_hat=theta_hat,
                      ell_table=ell_table, pen_table=pen_table,
                      Dn_table=dn_table, diagnostics=diagnostics)


def mixture_marginal(f: GaussianMixtureDensity, theta_hat: ThetaParams):
    """Pointwise evaluator of the marginal density
    s(x) = sum_j mu(j) f(x - m_j)."""
    mu = marginal_mu(theta_hat)
    m = theta_hat.m

    def evaluate(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        for j in range(theta_hat.k):
            out += mu[j] * f.pdf(x - m[j])
        return out

    return evaluate


def _integration_grid(lo: float, hi: float, n_points: int) -> np.ndarray:
    return np.linspace(lo, hi, n_points)


def hellinger_sq(s1, s2, lo: float = -30.0, hi: float = 30.0,
                 n_points: int = 20001) -> float:
    """Numeric squared Hellinger distance 0.5 * int (sqrt s1 - sqrt s2)^2."""
    x = _integration_grid(lo, hi, n_points)
    d = (np.sqrt(np.clip(s1(x), 0, None)) - np.sqrt(np.clip(s2(x), 0, None))) ** 2
    return float(0.5 * np.trapezoid(d, x))


def l1_distance(s1, s2, lo: float = -30.0, hi: float = 30.0,
                n_points: int = 20001) -> float:
    x = _integration_grid(lo, hi, n_points)
    return float(np.trapezoid(np.abs(s1(x) - s2(x)), x))
