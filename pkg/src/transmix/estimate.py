"""Order selection and parametric estimation by contrast minimization.

Fixed-k fits run a multistart quasi-Newton search in an unconstrained
reparameterization: translation gaps through softplus (so m stays sorted
with m[0] = 0) and Q through a softmax over k^2 logits (so Q stays on
the simplex).  Order selection minimizes the penalized contrast
C_n(k, theta) = M_n(theta) + lambda_n [J(k) + I_k(theta)] over k, then
re-minimizes M_n inside the sublevel set {I <= 2 I(theta_tilde)}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .contrast import ContrastConfig, contrast_Mn, grad_Mn, quad_nodes
from .ecf import EcfGrid
from .model import ThetaParams, n_free_params, penalty_I

__all__ = [
    "OptimizationFailureError",
    "SelectionConfig",
    "CompactSpec",
    "ParamFit",
    "fit_fixed_k",
    "select_order",
    "fit_compact",
    "lambda_n",
]

_DET_FLOOR = 1e-12
_STAGE2_SLACK = 1e-9


class OptimizationFailureError(RuntimeError):
    """Raised when no restart produces a usable minimizer."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs for order selection and the local optimizer."""

    k_max: int = 4
    lambda_coeff: float = 0.5
    multistart: int = 20
    seed: int = 0
    gtol: float = 1e-9
    maxiter: int = 400

    def J(self, k: int) -> float:
        """Order penalty; any increasing unbounded function works."""
        return float(k)


def lambda_n(n: int, coeff: float) -> float:
    """Penalty level c * n^(-1/4): vanishes while sqrt(n)*lambda_n grows."""
    return coeff * n ** (-0.25)


@dataclass(frozen=True)
class CompactSpec:
    """A compact subset of the interior parameter set."""

    m_bound: float = 5.0
    gap_min: float = 0.1
    det_min: float = 0.01
    q_floor: float = 0.0

    def __post_init__(self):
        if self.m_bound <= 0 or self.gap_min <= 0 or self.det_min <= 0 or self.q_floor < 0:
            raise ValueError("compact spec bounds must be positive (q_floor >= 0)")

    def is_feasible_for(self, k: int) -> bool:
        return (self.gap_min * (k - 1) <= self.m_bound
                and self.q_floor * k * k < 1.0)

    def contains(self, theta: ThetaParams, slack: float = 1e-9) -> bool:
        if np.max(theta.m) > self.m_bound + slack:
            return False
        if theta.k > 1 and np.min(np.diff(theta.m)) < self.gap_min - slack:
            return False
        if abs(np.linalg.det(theta.Q)) < self.det_min - slack:
            return False
        return bool(np.min(theta.Q) >= self.q_floor - slack)


@dataclass
class ParamFit:
    """End-to-end parametric fit: order, both estimation stages, and the
    per-order search table."""

    k_hat: int
    theta_tilde: ThetaParams
    theta_hat: ThetaParams
    Mn_value: float
    Cn_value: float
    per_k: dict
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Reparameterization

def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _inv_softplus(y):
    y = np.maximum(y, 1e-10)
    return y + np.log(-np.expm1(-y))


def _softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _theta_from_x(k: int, x: np.ndarray) -> ThetaParams:
    gaps = _softplus(x[:k - 1])
    m = np.concatenate(([0.0], np.cumsum(gaps)))
    Q = _softmax(x[k - 1:]).reshape(k, k)
    return ThetaParams(k=k, m=m, Q=Q)


def _x_from_theta(theta: ThetaParams) -> np.ndarray:
    k = theta.k
    g = _inv_softplus(np.diff(theta.m))
    z = np.log(np.clip(theta.Q.ravel(), 1e-12, None))
    return np.concatenate([g, z])


def _chain_to_x(k: int, x: np.ndarray, g_free: np.ndarray) -> np.ndarray:
    """Pull a free-coordinate gradient (m[1:] then Q minus the corner)
    back through the softplus/softmax reparameterization."""
    gm = g_free[:k - 1]
    gq = np.zeros(k * k)
    gq[:-1] = g_free[k - 1:]
    # corner entry has implicit gradient 0 after elimination; softmax
    # chain is invariant to adding a constant to gq
    out = np.empty_like(x)
    # m part: dm_j/dgap_l = sigmoid(x_l) for j >= l+1
    tail = np.concatenate([np.cumsum(gm[::-1])[::-1], [0.0]])
    out[:k - 1] = _sigmoid(x[:k - 1]) * tail[:k - 1]
    Q = _softmax(x[k - 1:])
    out[k - 1:] = Q * (gq - float(Q @ gq))
    return out


# ---------------------------------------------------------------------------
# Penalty and barrier pieces (value + free-coordinate gradient)

def _penalty_I_grad(theta: ThetaParams):
    """I_k(theta) with its gradient over the free coordinates.

    Below the determinant floor the -log det branch is replaced by a
    linear continuation so the optimizer sees finite values everywhere."""
    k = theta.k
    m, Q = theta.m, theta.Q
    d = n_free_params(k)
    grad = np.zeros(d)
    det = np.linalg.det(Q)
    if det > _DET_FLOOR:
        val = -np.log(det)
        Qinv_T = np.linalg.inv(Q).T
        gq_full = -Qinv_T
    else:
        val = -np.log(_DET_FLOOR) + (_DET_FLOOR - det) / _DET_FLOOR
        # d(det)/dQ = det * inv(Q)^T fails at det ~ 0; use the cofactor
        # matrix computed from the adjugate via SVD-free pinv fallback
        try:
            cof = det * np.linalg.inv(Q).T
        except np.linalg.LinAlgError:
            cof = np.zeros_like(Q)
        gq_full = -cof / _DET_FLOOR
    gaps = np.maximum(np.diff(m), 1e-300)
    mmax = m[-1]
    if k > 1:
        val -= float(np.sum(np.log(gaps))) - 2.0 * (k - 1) * np.log1p(mmax)
        for j in range(1, k):
            g = -1.0 / gaps[j - 1]
            if j < k - 1:
                g += 1.0 / gaps[j]
            if j == k - 1:
                g += 2.0 * (k - 1) / (1.0 + mmax)
            grad[j - 1] = g
    gq_free = (gq_full - gq_full[k - 1, k - 1]).ravel()[:-1]
    grad[k - 1:] = gq_free
    return float(val), grad


def _abs_det_hinge_grad(theta: ThetaParams, det_min: float):
    """max(0, det_min - |det Q|)^2 with free-coordinate gradient."""
    k = theta.k
    Q = theta.Q
    det = np.linalg.det(Q)
    gap = det_min - abs(det)
    d = n_free_params(k)
    if gap <= 0:
        return 0.0, np.zeros(d)
    try:
        cof = det * np.linalg.inv(Q).T
    except np.linalg.LinAlgError:
        cof = np.zeros_like(Q)
    sign = 1.0 if det >= 0 else -1.0
    gq_full = -2.0 * gap * sign * cof
    grad = np.zeros(d)
    grad[k - 1:] = (gq_full - gq_full[k - 1, k - 1]).ravel()[:-1]
    return float(gap * gap), grad


def _compact_barrier_grad(theta: ThetaParams, spec: CompactSpec):
    """Quadratic hinge penalties for the compact-set constraints."""
    k = theta.k
    d = n_free_params(k)
    val = 0.0
    grad = np.zeros(d)
    # translations: ||m||_inf <= m_bound, gaps >= gap_min
    over = theta.m[-1] - spec.m_bound
    if over > 0:
        val += over * over
        # d m_max / d m_j = 1 only for the top translation (free index k-2)
        if k > 1:
            grad[k - 2] += 2.0 * over
    if k > 1:
        gaps = np.diff(theta.m)
        for j in range(1, k):
            short = spec.gap_min - gaps[j - 1]
            if short > 0:
                val += short * short
                grad[j - 1] += -2.0 * short
                if j >= 2:
                    grad[j - 2] += 2.0 * short
    # Q entry floor
    if spec.q_floor > 0:
        low = spec.q_floor - theta.Q
        mask = low > 0
        if np.any(mask):
            val += float(np.sum(low[mask] ** 2))
            gq_full = np.where(mask, -2.0 * low, 0.0)
            grad[k - 1:] += (gq_full - gq_full[k - 1, k - 1]).ravel()[:-1]
    # determinant floor
    v, g = _abs_det_hinge_grad(theta, spec.det_min)
    val += v
    grad += g
    return val, grad


# ---------------------------------------------------------------------------
# Objective assembly

class _Objective:
    """M_n plus optional order penalty, stage-2 cap and compact barrier,
    with the analytic gradient pulled back to the logit coordinates."""

    def __init__(self, k, grid, ccfg, lam=0.0, j_term=0.0, i_cap=None,
                 spec=None, barrier_weight=1e4, cap_weight=1e4):
        self.k = k
        self.grid = grid
        self.ccfg = ccfg
        self.lam = lam
        self.j_term = j_term
        self.i_cap = i_cap
        self.spec = spec
        self.barrier_weight = barrier_weight
        self.cap_weight = cap_weight

    def theta(self, x) -> ThetaParams:
        return _theta_from_x(self.k, x)

    def __call__(self, x):
        k = self.k
        theta = _theta_from_x(k, x)
        val = contrast_Mn(theta, self.grid, self.ccfg)
        g_free = grad_Mn(theta, self.grid, self.ccfg)
        if self.lam > 0.0:
            iv, ig = _penalty_I_grad(theta)
            val += self.lam * (self.j_term + iv)
            g_free = g_free + self.lam * ig
        if self.i_cap is not None:
            iv, ig = _penalty_I_grad(theta)
            over = iv - self.i_cap
            if over > 0:
                val += self.cap_weight * over * over
                g_free = g_free + self.cap_weight * 2.0 * over * ig
        if self.spec is not None:
            bv, bg = _compact_barrier_grad(theta, self.spec)
            val += self.barrier_weight * bv
            g_free = g_free + self.barrier_weight * bg
        return val, _chain_to_x(k, x, g_free)


def _initial_points(k, scfg, y, n_starts, scale_hint):
    """Restart 0 is the deterministic quantile-based start; later restarts
    jitter it.  Seeds derive from (seed, k, restart)."""
    starts = []
    if y is not None and len(y) >= k:
        levels = (np.arange(k) + 0.5) / k
        centers = np.quantile(y, levels)
        base_gaps = np.maximum(np.diff(centers), 0.05)
    else:
        base_gaps = np.full(k - 1, max(scale_hint, 0.1))
    for r in range(n_starts):
        rng = np.random.Generator(np.random.Philox(seed=[scfg.seed, k, r]))
        if r == 0:
            gaps = base_gaps
            z = np.zeros(k * k)
        else:
            gaps = base_gaps * np.exp(rng.normal(0.0, 0.5, size=k - 1))
            z = rng.normal(0.0, 1.0, size=k * k)
        starts.append(np.concatenate([_inv_softplus(gaps), z]))
    return starts


def _run_local(obj, x0, scfg):
    res = minimize(obj, x0, jac=True, method="L-BFGS-B",
                   options={"gtol": scfg.gtol, "maxiter": scfg.maxiter,
                            "ftol": 1e-14})
    return res


def _multistart(obj, starts, scfg):
    best = None
    best_key = None
    failures = []
    for r, x0 in enumerate(starts):
        try:
            res = _run_local(obj, x0, scfg)
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            failures.append((r, str(exc)))
            continue
        if not np.isfinite(res.fun):
            failures.append((r, "non-finite objective"))
            continue
        key = (res.fun, r)
        if best_key is None or key < best_key:
            best_key = key
            best = res
    if best is None:
        raise OptimizationFailureError(
            "all restarts failed", diagnostics={"failures": failures})
    return best, failures


def fit_fixed_k(k: int, grid: EcfGrid, ccfg: ContrastConfig,
                scfg: SelectionConfig, objective: str = "Mn",
                y=None) -> tuple[ThetaParams, float]:
    """Best local minimizer of M_n or C_n(k, .) over multistart restarts."""
    if objective not in ("Mn", "Cn"):
        raise ValueError(f"objective must be 'Mn' or 'Cn', got {objective!r}")
    lam = lambda_n(grid.n, scfg.lambda_coeff) if objective == "Cn" else 0.0
    if k == 1:
        theta = ThetaParams(k=1, m=np.zeros(1), Q=np.ones((1, 1)))
        val = contrast_Mn(theta, grid, ccfg)
        if objective == "Cn":
            val += lam * (scfg.J(1) + penalty_I(theta))
        return theta, float(val)
    obj = _Objective(k, grid, ccfg, lam=lam,
                     j_term=scfg.J(k) if objective == "Cn" else 0.0)
    scale_hint = np.pi / quad_nodes(ccfg)[0].max()
    starts = _initial_points(k, scfg, y, scfg.multistart, scale_hint)
    best, _ = _multistart(obj, starts, scfg)
    return obj.theta(best.x), float(best.fun)


def select_order(grid: EcfGrid, ccfg: ContrastConfig, scfg: SelectionConfig,
                 y=None) -> ParamFit:
    """Two-stage estimator: penalized order selection, then a refit of
    M_n restricted by the boundary penalty of the stage-1 minimizer."""
    per_k = {}
    errors = {}
    for k in range(1, scfg.k_max + 1):
        try:
            theta_k, cn_k = fit_fixed_k(k, grid, ccfg, scfg, objective="Cn", y=y)
        except OptimizationFailureError as exc:
            errors[k] = str(exc)
            continue
        per_k[k] = {"Cn": cn_k, "theta": theta_k,
                    "Mn": contrast_Mn(theta_k, grid, ccfg)}
    if not per_k:
        raise OptimizationFailureError("all candidate orders failed",
                                       diagnostics={"errors": errors})
    k_hat = min(per_k, key=lambda k: (per_k[k]["Cn"], k))
    theta_tilde = per_k[k_hat]["theta"]

    cap = 2.0 * penalty_I(theta_tilde)
    if k_hat == 1:
        theta_hat = theta_tilde
        mn_hat = per_k[1]["Mn"]
    else:
        # Re-minimize M_n over the sublevel set of the boundary penalty.
        # The search restarts from theta_tilde and the stage-1 start
        # points; infeasible or worse local minima fall back to theta_tilde.
        obj = _Objective(k_hat, grid, ccfg, i_cap=cap + _STAGE2_SLACK)
        scale_hint = np.pi / quad_nodes(ccfg)[0].max()
        starts = ([_x_from_theta(theta_tilde)]
                  + _initial_points(k_hat, scfg, y, scfg.multistart, scale_hint))
        theta_hat = theta_tilde
        mn_hat = per_k[k_hat]["Mn"]
        for x0 in starts:
            try:
                res = _run_local(obj, x0, scfg)
            except (FloatingPointError, np.linalg.LinAlgError):
                continue
            cand = obj.theta(res.x)
            cand_mn = contrast_Mn(cand, grid, ccfg)
            if (penalty_I(cand) <= cap + _STAGE2_SLACK
                    and cand_mn < mn_hat - 1e-15):
                theta_hat = cand
                mn_hat = cand_mn
    return ParamFit(
        k_hat=k_hat,
        theta_tilde=theta_tilde,
        theta_hat=theta_hat,
        Mn_value=float(mn_hat),
        Cn_value=float(per_k[k_hat]["Cn"]),
        per_k=per_k,
        diagnostics={"order_errors": errors, "stage2_cap": cap},
    )


def _repair_into(theta: ThetaParams, spec: CompactSpec) -> ThetaParams:
    """Clip small constraint violations back into the compact set."""
    k = theta.k
    m = theta.m.copy()
    if k > 1:
        gaps = np.maximum(np.diff(m), spec.gap_min)
        m = np.concatenate(([0.0], np.cumsum(gaps)))
    if m[-1] > spec.m_bound:
        m *= spec.m_bound / m[-1]
    Q = np.maximum(theta.Q, spec.q_floor)
    Q /= Q.sum()
    return ThetaParams(k=k, m=m, Q=Q)


def fit_compact(k: int, spec: CompactSpec, grid: EcfGrid,
                ccfg: ContrastConfig, scfg: SelectionConfig,
                y=None, x0: np.ndarray | None = None) -> ThetaParams:
    """Minimizer of M_n over the compact set described by spec.

    When x0 is given (e.g. bootstrap warm starts) it is used as the sole
    deterministic restart unless multistart asks for more."""
    if not spec.is_feasible_for(k):
        raise ValueError("compact spec is infeasible for this k")
    if k == 1:
        return ThetaParams(k=1, m=np.zeros(1), Q=np.ones((1, 1)))
    obj = _Objective(k, grid, ccfg, spec=spec)
    scale_hint = np.pi / quad_nodes(ccfg)[0].max()
    if x0 is not None:
        starts = [x0] + _initial_points(k, scfg, y, max(scfg.multistart - 1, 0),
                                        scale_hint)
    else:
        starts = _initial_points(k, scfg, y, scfg.multistart, scale_hint)
    best, failures = _multistart(obj, starts, scfg)
    theta = obj.theta(best.x)
    if not spec.contains(theta):
        theta = _repair_into(theta, spec)
        if not spec.contains(theta, slack=1e-6):
            raise OptimizationFailureError(
                "minimizer could not be repaired into the compact set",
                diagnostics={"failures": failures})
    return theta


def warm_start_x(theta: ThetaParams) -> np.ndarray:
    """Logit coordinates of theta, for warm-started refits."""
    return _x_from_theta(theta)
