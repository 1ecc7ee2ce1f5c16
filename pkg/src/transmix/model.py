"""Parameter domain for the latent part of a translation mixture.

A parameter theta consists of the number of populations k, the ordered
translation vector m (with m[0] = 0), and the joint probability mass Q of
two consecutive latent states.  The free coordinates are m[1:] together
with all Q entries except the last one, which is pinned by the simplex
constraint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidParameterError",
    "ThetaParams",
    "CFGradient",
    "canonicalize",
    "marginal_mu",
    "phi_theta",
    "Phi_theta",
    "cf_gradients",
    "penalty_I",
    "n_free_params",
]

# Interior-membership thresholds: make "theta in the interior" a
# deterministic, floating-point-computable predicate.
DET_EPS = 1e-12
GAP_EPS = 1e-9

_VALID_ATOL = 1e-8


class InvalidParameterError(ValueError):
    """Raised when a parameter vector violates the domain constraints."""


@dataclass(frozen=True)
class ThetaParams:
    """Parametric part of a translation mixture: (k, m, Q).

    m is sorted ascending with m[0] = 0; Q is a k x k nonnegative matrix
    summing to 1.
    """

    k: int
    m: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        if self.k < 1:
            raise InvalidParameterError(f"k must be >= 1, got {self.k}")
        if m.shape != (self.k,):
            raise InvalidParameterError(f"m has shape {m.shape}, expected ({self.k},)")
        if Q.shape != (self.k, self.k):
            raise InvalidParameterError(f"Q has shape {Q.shape}, expected ({self.k},{self.k})")
        if abs(m[0]) > _VALID_ATOL:
            raise InvalidParameterError(f"m[0] must be 0, got {m[0]}")
        if np.any(np.diff(m) < -_VALID_ATOL):
            raise InvalidParameterError("m must be sorted ascending")
        if np.any(Q < -_VALID_ATOL):
            raise InvalidParameterError("Q entries must be nonnegative")
        if abs(Q.sum() - 1.0) > 1e-6:
            raise InvalidParameterError(f"Q entries must sum to 1, got {Q.sum()}")
        m = m.copy()
        Q = Q.copy()
        m.flags.writeable = False
        Q.flags.writeable = False
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "Q", Q)

    def is_interior(self) -> bool:
        """Strictly ordered translations and nonsingular Q."""
        if self.k > 1 and np.min(np.diff(self.m)) <= GAP_EPS:
            return False
        return abs(np.linalg.det(self.Q)) > DET_EPS

    # -- JSON round trip ------------------------------------------------

    def to_json_dict(self) -> dict:
        return {"k": self.k, "m": self.m.tolist(), "Q": self.Q.tolist()}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ThetaParams":
        return cls(k=int(d["k"]), m=np.array(d["m"], dtype=float),
                   Q=np.array(d["Q"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, s: str) -> "ThetaParams":
        return cls.from_json_dict(json.loads(s))


def n_free_params(k: int) -> int:
    """Dimension of the free coordinate vector: (k-1) + (k^2 - 1)."""
    return (k - 1) + (k * k - 1)


def canonicalize(m_raw, Q_raw) -> ThetaParams:
    """Bring raw (m, Q) into the canonical form: m sorted with min 0,
    Q permuted consistently and renormalized to sum 1."""
    m_raw = np.asarray(m_raw, dtype=float)
    Q_raw = np.asarray(Q_raw, dtype=float)
    k = m_raw.shape[0]
    if Q_raw.shape != (k, k):
        raise InvalidParameterError(f"Q has shape {Q_raw.shape}, expected ({k},{k})")
    if np.any(Q_raw < 0):
        raise InvalidParameterError("Q entries must be nonnegative")
    total = Q_raw.sum()
    if total <= 0:
        raise InvalidParameterError("Q entries sum to zero")
    perm = np.argsort(m_raw, kind="stable")
    m = m_raw[perm] - m_raw.min()
    m[0] = 0.0
    Q = Q_raw[np.ix_(perm, perm)] / total
    return ThetaParams(k=k, m=m, Q=Q)


def marginal_mu(theta: ThetaParams, axis: int = 1) -> np.ndarray:
    """Marginal law of one latent state: row sums of Q (axis=1) or
    column sums (axis=2)."""
    if axis == 1:
        return theta.Q.sum(axis=1)
    if axis == 2:
        return theta.Q.sum(axis=0)
    raise ValueError(f"axis must be 1 or 2, got {axis}")


def phi_theta(theta: ThetaParams, t: float, axis: int = 1) -> complex:
    """Characteristic function of the first (axis=1) or second (axis=2)
    latent translation."""
    mu = marginal_mu(theta, axis)
    return complex(np.sum(mu * np.exp(1j * t * theta.m)))


def Phi_theta(theta: ThetaParams, t1: float, t2: float) -> complex:
    """Joint characteristic function of two consecutive latent
    translations: V(t1)^T Q V(t2) with V(t) = (exp(i t m_j))_j."""
    v1 = np.exp(1j * t1 * theta.m)
    v2 = np.exp(1j * t2 * theta.m)
    return complex(v1 @ theta.Q @ v2)


@dataclass(frozen=True)
class CFGradient:
    """Partials of phi_1(t1), phi_2(t2) and Phi(t1, t2) with respect to
    the free coordinates (m[1:], then Q row-major without the last entry)."""

    d_phi1: np.ndarray
    d_phi2: np.ndarray
    d_Phi: np.ndarray


def cf_gradients(theta: ThetaParams, t1: float, t2: float) -> CFGradient:
    """Analytic partials of the three characteristic functions.

    The last Q entry is eliminated via Q[k-1,k-1] = 1 - sum(others), so
    each Q-partial carries a compensating term at the (k-1,k-1) corner.
    """
    k = theta.k
    m, Q = theta.m, theta.Q
    d = n_free_params(k)
    d_phi1 = np.zeros(d, dtype=complex)
    d_phi2 = np.zeros(d, dtype=complex)
    d_Phi = np.zeros(d, dtype=complex)
    if d == 0:
        return CFGradient(d_phi1, d_phi2, d_Phi)

    mu1 = Q.sum(axis=1)
    mu2 = Q.sum(axis=0)
    e1 = np.exp(1j * t1 * m)
    e2 = np.exp(1j * t2 * m)

    # translations m[1:]
    for idx, l in enumerate(range(1, k)):
        d_phi1[idx] = 1j * t1 * mu1[l] * e1[l]
        d_phi2[idx] = 1j * t2 * mu2[l] * e2[l]
        d_Phi[idx] = (1j * t1 * e1[l] * (Q[l, :] @ e2)
                      + 1j * t2 * e2[l] * (e1 @ Q[:, l]))

    # Q entries, row-major, excluding (k-1, k-1)
    off = k - 1
    corner1 = e1[k - 1]
    corner2 = e2[k - 1]
    pos = 0
    for i in range(k):
        for j in range(k):
            if i == k - 1 and j == k - 1:
                continue
            d_phi1[off + pos] = e1[i] - corner1
            d_phi2[off + pos] = e2[j] - corner2
            d_Phi[off + pos] = e1[i] * e2[j] - corner1 * corner2
            pos += 1
    return CFGradient(d_phi1, d_phi2, d_Phi)


def penalty_I(theta: ThetaParams) -> float:
    """Boundary penalty: -log det Q - sum_i log(gap_i / (1+||m||_inf)^2).

    Returns +inf on the boundary (nonpositive determinant or a zero gap)
    so that optimizers can probe boundary points and reject them.
    """
    det = np.linalg.det(theta.Q)
    if det <= 0.0:
        return float("inf")
    gaps = np.diff(theta.m)
    if theta.k > 1 and np.min(gaps) <= 0.0:
        return float("inf")
    norm = np.max(np.abs(theta.m)) if theta.k > 0 else 0.0
    out = -np.log(det)
    if theta.k > 1:
        out -= np.sum(np.log(gaps / (1.0 + norm) ** 2))
    return float(out)
