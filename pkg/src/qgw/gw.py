"""Gromov-Wasserstein losses and the conditional-gradient solver for small spaces."""

from __future__ import annotations

import math

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, SizeCapError, ValidationError
from .transport import Atoms1D, exact_ot, round_to_marginals, sinkhorn, solve_1d_ot

log = logging.getLogger(__name__)

BRUTE_CAP = 200
# Below this fraction of the constant terms the decomposed loss is dominated
# by cancellation error; the support-pair formula is used instead.
_CANCEL_RTOL = 1e-9
_SUPPORT_PAIR_CAP = 4_000_000


@dataclass
class GwConfig:
    """Settings for :func:`solve_gw` / :func:`solve_fgw`.

    ``inner`` picks the linear subproblem solver: ``"exact"`` (network
    simplex) or ``"entropic"`` (Sinkhorn with weight ``epsilon``; ``None``
    means 1e-2 times the median linearized cost).

    ``init="eccentricity"`` starts from the monotone coupling of the two
    eccentricity distributions (points paired by their RMS distance to the
    rest of their space). It breaks the symmetry of the product start and
    is exact for isometric copies whose eccentricities are distinct.
    """

    inner: str = "exact"
    epsilon: float | None = None
    max_outer_iter: int = 200
    conv_tol: float = 1e-9
    init: str = "product"
    init_plan: np.ndarray | None = field(default=None, repr=False)
    sinkhorn_max_iter: int = 10_000
    sinkhorn_tol: float = 1e-10

    def __post_init__(self):
        if self.inner not in ("exact", "entropic"):
            raise ValidationError(f"unknown inner solver {self.inner!r}")
        if self.init not in ("product", "identity_if_square", "provided", "eccentricity"):
            raise ValidationError(f"unknown init {self.init!r}")
        if self.inner == "entropic" and self.epsilon is not None and not self.epsilon > 0:
            raise ValidationError("epsilon must be positive for the entropic inner solver")
        if self.init == "provided" and self.init_plan is None:
            raise ValidationError("init='provided' needs init_plan")
        if self.max_outer_iter < 1:
            raise ValidationError("max_outer_iter must be at least 1")


@dataclass
class GwResult:
    plan: np.ndarray
    loss: float
    n_iter: int
    converged: bool
    history: list


def _as_square(d, name):
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValidationError(f"{name} must be a square matrix")
    return d


def _support_pair_loss(dX, dY, plan) -> float:
    i, j = np.nonzero(plan)
    w = plan[i, j]
    diff = dX[np.ix_(i, i)] - dY[np.ix_(j, j)]
    return float(w @ (diff * diff) @ w)


def gw_loss(dX, dY, plan) -> float:
    """GW loss of a coupling via the quadratic decomposition.

    ``sum_{ik} dX_ik^2 a_i a_k + sum_{jl} dY_jl^2 b_j b_l - 2 <dX P dY^T, P>``
    with ``a, b`` the marginals of ``P``; O(n^2 k + n k^2) instead of the
    O(n^2 k^2) quadruple sum.
    """
    dX = _as_square(dX, "dX")
    dY = _as_square(dY, "dY")
    plan = np.asarray(plan, dtype=np.float64)
    if plan.shape != (dX.shape[0], dY.shape[0]):
        raise ValidationError(f"coupling shape {plan.shape} does not match ({dX.shape[0]}, {dY.shape[0]})")
    a = plan.sum(axis=1)
    b = plan.sum(axis=0)
    const = float(a @ (dX * dX) @ a + b @ (dY * dY) @ b)
    cross = float(np.sum((dX @ plan @ dY.T) * plan))
    loss = const - 2.0 * cross
    if loss <= _CANCEL_RTOL * const and np.count_nonzero(plan) ** 2 <= _SUPPORT_PAIR_CAP:
        loss = _support_pair_loss(dX, dY, plan)
    return max(loss, 0.0)


def gw_loss_sparse(dX, dY, rows, cols, mass) -> float:
    """GW loss of a sparse coupling given as triplets (dense metrics required)."""
    import scipy.sparse as sp

    dX = _as_square(dX, "dX")
    dY = _as_square(dY, "dY")
    n, k = dX.shape[0], dY.shape[0]
    plan = sp.csr_matrix((mass, (rows, cols)), shape=(n, k))
    a = np.asarray(plan.sum(axis=1)).ravel()
    b = np.asarray(plan.sum(axis=0)).ravel()
    const = float(a @ (dX * dX) @ a + b @ (dY * dY) @ b)
    coo = plan.tocoo()
    # (P dY^T)[:, j] for each support column, then contract with dX rows.
    p_dy = np.asarray(plan @ dY.T)
    cross = 0.0
    chunk = max(1, (1 << 22) // max(n, 1))
    for s in range(0, coo.nnz, chunk):
        r, c, w = coo.row[s:s + chunk], coo.col[s:s + chunk], coo.data[s:s + chunk]
        cross += float(w @ np.einsum("ij,ji->i", dX[r], p_dy[:, c]))
    loss = const - 2.0 * cross
    if loss <= _CANCEL_RTOL * const and coo.nnz ** 2 <= _SUPPORT_PAIR_CAP:
        diff = dX[np.ix_(coo.row, coo.row)] - dY[np.ix_(coo.col, coo.col)]
        loss = float(coo.data @ (diff * diff) @ coo.data)
    return max(loss, 0.0)


def gw_loss_brute(dX, dY, plan) -> float:
    """Literal four-index sum; reference for ``n * k <= 200``."""
    dX = _as_square(dX, "dX")
    dY = _as_square(dY, "dY")
    plan = np.asarray(plan, dtype=np.float64)
    n, k = plan.shape
    if n * k > BRUTE_CAP:
        raise SizeCapError(f"gw_loss_brute is capped at n*k <= {BRUTE_CAP}")
    terms = []
    for i in range(n):
        for j in range(k):
            if plan[i, j] == 0.0:
                continue
            for kk in range(n):
                for ll in range(k):
                    terms.append((dX[i, kk] - dY[j, ll]) ** 2 * plan[i, j] * plan[kk, ll])
    # exact accumulation keeps the reference free of summation drift
    return math.fsum(terms)


def eccentricity_coupling(dX, dY, muX, muY) -> np.ndarray:
    """Monotone coupling of the eccentricity distributions of two spaces."""
    ex = np.sqrt((dX * dX) @ muX)
    ey = np.sqrt((dY * dY) @ muY)
    plan, _ = solve_1d_ot(Atoms1D(ex, muX), Atoms1D(ey, muY))
    out = np.zeros((muX.size, muY.size))
    np.add.at(out, (plan.rows, plan.cols), plan.mass)
    return out


def _initial_plan(dX, dY, muX, muY, config: GwConfig) -> np.ndarray:
    if config.init == "eccentricity":
        return eccentricity_coupling(dX, dY, muX, muY)
    if config.init == "provided":
        plan = np.asarray(config.init_plan, dtype=np.float64)
        if plan.shape != (muX.size, muY.size):
            raise ValidationError("init_plan has the wrong shape")
        return plan.copy()
    if config.init == "identity_if_square" and muX.size == muY.size and np.allclose(muX, muY, atol=1e-15, rtol=0):
        return np.diag(muX)
    return np.outer(muX, muY)


def _linear_solve(cost, muX, muY, config: GwConfig) -> np.ndarray:
    if config.inner == "exact":
        return exact_ot(cost, muX, muY)[0]
    res = sinkhorn(cost, muX, muY, epsilon=config.epsilon,
                   max_iter=config.sinkhorn_max_iter, tol=config.sinkhorn_tol)
    if not res.converged:
        log.warning("sinkhorn did not converge (marginal error %.3g)", res.marginal_error)
    # Keep every iterate an exact coupling even when Sinkhorn stops early.
    return round_to_marginals(res.plan, muX, muY)


def _line_search(quad: float, lin: float) -> float:
    """argmin over t in [0, 1] of ``quad * t^2 + lin * t``."""
    if quad > 0:
        return float(min(1.0, max(0.0, -lin / (2.0 * quad))))
    return 1.0 if quad + lin < 0 else 0.0


def _conditional_gradient(dX, dY, muX, muY, feature_cost, alpha, config: GwConfig) -> GwResult:
    """Frank-Wolfe on ``(1 - alpha) GW(P) + alpha <M, P>`` over couplings.

    With ``alpha == 0`` the feature term is never touched, so the iterates are
    bit-identical to the pure GW solve.
    """
    use_features = feature_cost is not None and alpha > 0
    w_gw = 1.0 - alpha if use_features else 1.0
    plan = _initial_plan(dX, dY, muX, muY, config)
    # Constant row/column terms of the gradient; they do not change the LP
    # optimum but keep the linearized cost meaningful for Sinkhorn.
    const = ((dX * dX) @ muX)[:, None] + ((dY * dY) @ muY)[None, :]
    dpd = dX @ plan @ dY.T

    def objective(p, p_dpd):
        gw = float(np.sum(const * p)) - 2.0 * float(np.sum(p_dpd * p))
        if use_features:
            return w_gw * gw + alpha * float(np.sum(feature_cost * p))
        return gw

    value = objective(plan, dpd)
    history = [value]
    converged = False
    it = 0
    for it in range(1, config.max_outer_iter + 1):
        grad = 2.0 * w_gw * (const - 2.0 * dpd)
        if use_features:
            grad = grad + alpha * feature_cost
        target = _linear_solve(grad, muX, muY, config)
        direction = target - plan
        d_dpd = dX @ direction @ dY.T
        quad = -2.0 * w_gw * float(np.sum(d_dpd * direction))
        lin = w_gw * (float(np.sum(const * direction)) - 4.0 * float(np.sum(dpd * direction)))
        if use_features:
            lin += alpha * float(np.sum(feature_cost * direction))
        step = _line_search(quad, lin)
        if step == 0.0:
            converged = True
            break
        new_plan = plan + step * direction
        new_dpd = dpd + step * d_dpd
        new_value = objective(new_plan, new_dpd)
        if not np.isfinite(new_value):
            raise NumericalError("non-finite GW objective")
        if new_value > value:
            # Round-off made the step non-descending; keep the current iterate.
            converged = True
            break
        change = abs(value - new_value)
        plan, dpd, value = new_plan, new_dpd, new_value
        history.append(value)
        if change <= config.conv_tol * max(abs(value), 1e-300) or change == 0.0:
            converged = True
            break
    return GwResult(plan, value, it, converged, history)


def solve_gw(dX, dY, muX, muY, config: GwConfig | None = None) -> GwResult:
    """Local minimizer of the GW loss by conditional gradient.

    Each outer iteration linearizes the loss at the current coupling, solves
    the linear OT problem, and moves toward its solution with the exact
    (closed-form) line search. The loss never increases.
    """
    config = config or GwConfig()
    dX = _as_square(dX, "dX")
    dY = _as_square(dY, "dY")
    muX = np.asarray(muX, dtype=np.float64)
    muY = np.asarray(muY, dtype=np.float64)
    if muX.size != dX.shape[0] or muY.size != dY.shape[0]:
        raise ValidationError("measure length does not match distance matrix")
    if not (np.all(np.isfinite(dX)) and np.all(np.isfinite(dY))):
        raise NumericalError("non-finite distances")
    res = _conditional_gradient(dX, dY, muX, muY, None, 0.0, config)
    res.loss = gw_loss(dX, dY, res.plan)
    return res


def solve_fgw(dX, dY, feature_cost, muX, muY, alpha: float,
              config: GwConfig | None = None) -> GwResult:
    """Conditional gradient on ``(1 - alpha) GW + alpha W``.

    ``feature_cost[i, j]`` is the squared feature distance. ``alpha = 0`` is
    exactly :func:`solve_gw`; ``alpha = 1`` is a single linear OT solve on the
    feature cost. The returned ``loss`` is the fused objective value.
    """
    config = config or GwConfig()
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must lie in [0, 1]")
    dX = _as_square(dX, "dX")
    dY = _as_square(dY, "dY")
    feature_cost = np.asarray(feature_cost, dtype=np.float64)
    if feature_cost.shape != (dX.shape[0], dY.shape[0]):
        raise ValidationError("feature_cost shape does not match the spaces")
    if alpha == 0.0:
        return solve_gw(dX, dY, muX, muY, config)
    muX = np.asarray(muX, dtype=np.float64)
    muY = np.asarray(muY, dtype=np.float64)
    if alpha == 1.0:
        plan = _linear_solve(feature_cost, muX, muY, config)
        return GwResult(plan, float(np.sum(feature_cost * plan)), 1, True, [])
    res = _conditional_gradient(dX, dY, muX, muY, feature_cost, alpha, config)
    res.loss = fgw_loss(dX, dY, feature_cost, res.plan, alpha)
    return res


def fgw_loss(dX, dY, feature_cost, plan, alpha: float) -> float:
    w = float(np.sum(np.asarray(feature_cost) * plan))
    if alpha == 1.0:
        return w
    return (1.0 - alpha) * gw_loss(dX, dY, plan) + alpha * w
