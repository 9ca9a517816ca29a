"""Optimal transport primitives.

``solve_1d_ot`` is the workhorse of the local matching step: a sort followed
by a northwest-corner sweep over the two cumulative distributions. The other
two solvers work on dense cost matrices: ``exact_ot`` (network simplex, used
inside the global GW iterations) and ``sinkhorn`` (entropic). The small LP
solver ``exact_ot_small`` exists as an independent reference for tests.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, SizeCapError, UnbalancedError, ValidationError

BALANCE_TOL = 1e-9
SMALL_LP_CAP = 10_000

# POT probes every installed array backend at import; only numpy is used here.
for _name in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_name}", "1")


@dataclass(frozen=True)
class Atoms1D:
    """Weighted atoms on the real line."""

    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).ravel()
        mass = np.asarray(self.masses, dtype=np.float64).ravel()
        if pos.shape != mass.shape or pos.size == 0:
            raise ValidationError("positions and masses must be non-empty and equal length")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(mass))):
            raise ValidationError("atoms must be finite")
        if np.any(mass < 0):
            raise ValidationError("atom masses must be nonnegative")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "masses", mass)

    def __len__(self):
        return self.positions.size


@dataclass(frozen=True)
class SparsePlan:
    """Transport plan stored as ``(rows, cols, mass)`` triplets with mass > 0."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    shape: tuple

    def __len__(self):
        return self.mass.size

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.mass, minlength=self.shape[0])

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.mass, minlength=self.shape[1])

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def triplets(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))

    def sorted_by_row(self) -> "SparsePlan":
        order = np.lexsort((self.cols, self.rows))
        return SparsePlan(self.rows[order], self.cols[order], self.mass[order], self.shape)


def northwest_corner(a_mass: np.ndarray, b_mass: np.ndarray):
    """Northwest-corner sweep on two mass vectors already in matching order.

    Returns ``(i, j, mass)`` arrays indexing into the given order. Uses the
    merged cumulative sums, so the cost is one sort of ``k_a + k_b`` values.
    """
    ca = np.cumsum(a_mass)
    cb = np.cumsum(b_mass)
    total = min(ca[-1], cb[-1])
    cuts = np.union1d(ca[:-1], cb[:-1])
    cuts = cuts[(cuts > 0) & (cuts < total)]
    edges = np.concatenate([[0.0], cuts, [total]])
    mass = np.diff(edges)
    left = edges[:-1]
    i = np.minimum(np.searchsorted(ca, left, side="right"), ca.size - 1)
    j = np.minimum(np.searchsorted(cb, left, side="right"), cb.size - 1)
    keep = mass > 0
    return i[keep], j[keep], mass[keep]


def _sort_key(positions: np.ndarray, first: int | None) -> np.ndarray:
    if first is None:
        return np.argsort(positions, kind="stable")
    # Ties on position are broken by putting ``first`` ahead, then by index.
    not_first = np.ones(positions.size, dtype=np.int8)
    not_first[first] = 0
    return np.lexsort((np.arange(positions.size), not_first, positions))


def solve_1d_ot(a: Atoms1D, b: Atoms1D, first_a: int | None = None,
                first_b: int | None = None) -> tuple[SparsePlan, float]:
    """Exact OT between two atomic measures on the line, quadratic cost.

    Both atom lists are stably sorted by position (ties keep original index
    order, except that ``first_a``/``first_b`` are placed first among equal
    positions) and the monotone plan is produced by a northwest-corner sweep.
    The plan has at most ``len(a) + len(b) - 1`` triplets.

    Returns
    -------
    plan : SparsePlan
        Triplets in the original (unsorted) atom indices.
    cost : float
        ``sum (pos_a - pos_b)^2 * mass`` over the plan.
    """
    if abs(a.masses.sum() - b.masses.sum()) > BALANCE_TOL:
        raise UnbalancedError(
            f"unbalanced: source mass {a.masses.sum()!r} vs target mass {b.masses.sum()!r}"
        )
    oa = _sort_key(a.positions, first_a)
    ob = _sort_key(b.positions, first_b)
    i, j, mass = northwest_corner(a.masses[oa], b.masses[ob])
    rows, cols = oa[i], ob[j]
    cost = float(np.sum((a.positions[rows] - b.positions[cols]) ** 2 * mass))
    return SparsePlan(rows, cols, mass, (len(a), len(b))), cost


def _check_marginals(cost, mu, nu):
    cost = np.asarray(cost, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64).ravel()
    nu = np.asarray(nu, dtype=np.float64).ravel()
    if cost.shape != (mu.size, nu.size):
        raise ValidationError(f"cost shape {cost.shape} does not match marginals ({mu.size}, {nu.size})")
    if not np.all(np.isfinite(cost)):
        raise ValidationError("cost matrix must be finite")
    if abs(mu.sum() - nu.sum()) > BALANCE_TOL:
        raise UnbalancedError("unbalanced: marginals have different total mass")
    return cost, mu, nu


def exact_ot(cost, mu, nu, max_iter: int = 10_000_000) -> tuple[np.ndarray, float]:
    """Exact linear OT by network simplex (POT's ``emd``).

    Used for the linear subproblems of the global GW solver, where the
    instances are too large for :func:`exact_ot_small`.
    """
    import ot

    cost, mu, nu = _check_marginals(cost, mu, nu)
    nu = nu * (mu.sum() / nu.sum())
    with warnings.catch_warnings():
        warnings.simplefilter("error", UserWarning)
        try:
            plan = ot.emd(mu, nu, np.ascontiguousarray(cost), numItermax=max_iter)
        except UserWarning as exc:
            raise NumericalError(f"network simplex failed: {exc}") from exc
    plan = np.asarray(plan)
    return plan, float(np.sum(plan * cost))


def exact_ot_small(cost, mu, nu) -> tuple[np.ndarray, float]:
    """Exact linear OT by dual simplex on the transportation LP.

    Reference solver for small instances (``n_a * n_b <= 10^4``); returns a
    basic (vertex) solution with at most ``n_a + n_b - 1`` nonzeros.
    """
    from scipy.optimize import linprog

    cost, mu, nu = _check_marginals(cost, mu, nu)
    na, nb = cost.shape
    if na * nb > SMALL_LP_CAP:
        raise SizeCapError(f"exact_ot_small is capped at {SMALL_LP_CAP} variables, got {na * nb}")
    import scipy.sparse as sp

    row_sel = sp.kron(sp.eye(na), np.ones((1, nb)))
    col_sel = sp.kron(np.ones((1, na)), sp.eye(nb))
    a_eq = sp.vstack([row_sel, col_sel]).tocsr()
    b_eq = np.concatenate([mu, nu * (mu.sum() / nu.sum())])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise NumericalError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(na, nb)
    plan[plan < 1e-300] = 0.0
    return plan, float(np.sum(plan * cost))


@dataclass
class SinkhornResult:
    plan: np.ndarray
    converged: bool
    n_iter: int
    marginal_error: float
    epsilon: float


def default_epsilon(cost: np.ndarray) -> float:
    """``1e-2`` times the median cost (falls back to the mean absolute cost, then 1)."""
    scale = float(np.median(cost))
    if scale <= 0:
        scale = float(np.mean(np.abs(cost)))
    return 1e-2 * (scale if scale > 0 else 1.0)


def sinkhorn(cost, mu, nu, epsilon: float | None = None, max_iter: int = 10_000,
             tol: float = 1e-9) -> SinkhornResult:
    """Entropic OT by alternating scaling.

    Plain scaling is used when ``epsilon`` is at least ``1e-2 * median(cost)``;
    below that the iterations run on log-potentials. Stops once the L1 error
    of the row marginal (columns are exact after each sweep) drops below
    ``tol``. On hitting ``max_iter`` the last iterate is returned with
    ``converged=False``.
    """
    cost, mu, nu = _check_marginals(cost, mu, nu)
    if epsilon is None:
        epsilon = default_epsilon(cost)
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    med = float(np.median(cost))
    if epsilon < 1e-2 * med:
        return _sinkhorn_log(cost, mu, nu, epsilon, max_iter, tol)

    kernel = np.exp(-(cost - cost.min()) / epsilon)
    u = np.ones_like(mu)
    v = np.ones_like(nu)
    err = np.inf
    for it in range(1, max_iter + 1):
        kv = kernel @ v
        if np.any(kv == 0):
            return _sinkhorn_log(cost, mu, nu, epsilon, max_iter, tol)
        u = mu / kv
        ktu = kernel.T @ u
        v = nu / ktu
        if it % 10 == 0 or it == max_iter:
            plan = u[:, None] * kernel * v[None, :]
            err = float(np.abs(plan.sum(axis=1) - mu).sum())
            if not np.isfinite(err):
                return _sinkhorn_log(cost, mu, nu, epsilon, max_iter, tol)
            if err < tol:
                return SinkhornResult(plan, True, it, err, epsilon)
    return SinkhornResult(plan, False, max_iter, err, epsilon)


def round_to_marginals(plan, mu, nu) -> np.ndarray:
    """Nearby coupling with marginals exactly ``mu`` and ``nu``.

    Scales down rows then columns that carry too much mass, and spreads the
    remaining deficit as a rank-one correction. The L1 change is at most
    twice the marginal violation of the input.
    """
    plan = np.asarray(plan, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = plan.sum(axis=1)
        x = np.where(r > mu, mu / r, 1.0)
        plan = plan * x[:, None]
        c = plan.sum(axis=0)
        y = np.where(c > nu, nu / c, 1.0)
        plan = plan * y[None, :]
    err_r = np.maximum(mu - plan.sum(axis=1), 0.0)
    err_c = np.maximum(nu - plan.sum(axis=0), 0.0)
    total = err_r.sum()
    if total > 0:
        plan = plan + np.outer(err_r, err_c) / total
    return plan


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    top = a.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return (top + np.log(np.exp(a - top).sum(axis=axis, keepdims=True))).squeeze(axis)


def _sinkhorn_log(cost, mu, nu, epsilon, max_iter, tol) -> SinkhornResult:
    with np.errstate(divide="ignore"):
        log_mu, log_nu = np.log(mu), np.log(nu)
    scaled = -cost / epsilon
    f = np.zeros_like(mu)
    g = np.zeros_like(nu)
    err = np.inf
    for it in range(1, max_iter + 1):
        f = log_mu - _logsumexp(scaled + g[None, :], axis=1)
        g = log_nu - _logsumexp(scaled + f[:, None], axis=0)
        if it % 10 == 0 or it == max_iter:
            plan = np.exp(scaled + f[:, None] + g[None, :])
            err = float(np.abs(plan.sum(axis=1) - mu).sum())
            if err < tol:
                return SinkhornResult(plan, True, it, err, epsilon)
    return SinkhornResult(plan, False, max_iter, err, epsilon)
