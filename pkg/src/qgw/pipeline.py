"""The quantized GW / fused GW matching pipeline.

1. Global alignment: GW (or FGW) coupling between the quantized
   representations of the two spaces.
2. Local alignment: for every block pair in the support of the global
   coupling, a 1D transport plan between the radial profiles of the blocks.
3. Assembly: the global coupling weights the local plans; the result is
   kept in factored form and expanded row by row on demand.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from . import diagnostics
from .errors import SizeCapError, ValidationError
from .gw import GwConfig, gw_loss, gw_loss_sparse, solve_fgw, solve_gw
from .spaces import (BlockRadialProfile, MmSpace, PointedPartition,
                     quantized_representation, radial_profiles)
from .transport import Atoms1D, SparsePlan, exact_ot, solve_1d_ot

log = logging.getLogger(__name__)

DENSE_CAP = 1_000_000
FEATURE_EXACT_BLOCK_CAP = 256
SCHEMA_VERSION = "1.0"
# Masses within this relative gap of a row maximum count as ties for argmax.
TIE_RTOL = 1e-12


@dataclass
class QgwConfig:
    """Parameters of a qGW / qFGW run.

    ``alpha`` blends metric and feature terms in the global step and
    ``beta`` blends the radial and feature local plans (qFGW only). Global
    coupling entries below ``support_threshold`` are dropped before the
    local step and the remainder renormalized to total mass one.
    """

    gw: GwConfig = field(default_factory=GwConfig)
    alpha: float = 0.0
    beta: float = 0.0
    support_threshold: float = 1e-12
    workers: int = 1
    full_loss_cap: int = DENSE_CAP

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.support_threshold < 0:
            raise ValidationError("support_threshold must be nonnegative")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")


class CouplingRow(NamedTuple):
    targets: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray


@dataclass
class QuantizationCoupling:
    """A coupling in factored form.

    ``global_plan`` is the dense ``m_X x m_Y`` coupling of representatives.
    ``locals[(p, q)]`` is the plan between block ``p`` of the source and
    block ``q`` of the target (block-local indices), present exactly for the
    support of ``global_plan``. Mass of the full coupling at ``(x, y)`` with
    ``x`` in block ``p`` and ``y`` in block ``q`` is
    ``global_plan[p, q] * locals[(p, q)][x_local, y_local]``.
    """

    global_plan: np.ndarray
    locals: dict
    source: PointedPartition = field(repr=False)
    target: PointedPartition = field(repr=False)

    @property
    def n_source(self) -> int:
        return self.source.n

    @property
    def n_target(self) -> int:
        return self.target.n

    def support(self) -> list:
        return sorted(self.locals)

    def nnz(self) -> int:
        return int(sum(len(plan) for plan in self.locals.values()))

    def triplets(self):
        """Global ``(rows, cols, mass)`` arrays of the expanded coupling."""
        rows, cols, vals = [], [], []
        for (p, q) in self.support():
            plan = self.locals[(p, q)]
            rows.append(self.source.blocks[p][plan.rows])
            cols.append(self.target.blocks[q][plan.cols])
            vals.append(self.global_plan[p, q] * plan.mass)
        if not rows:
            return (np.zeros(0, np.int64),) * 2 + (np.zeros(0),)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def to_sparse(self) -> sp.csr_matrix:
        r, c, v = self.triplets()
        return sp.csr_matrix((v, (r, c)), shape=(self.n_source, self.n_target))

    def _row_index(self):
        # Per (p, q): local plan sorted by local row, with row pointers.
        idx = self.__dict__.get("_row_cache")
        if idx is None:
            idx = {}
            by_source = {}
            for (p, q) in self.support():
                plan = self.locals[(p, q)].sorted_by_row()
                ptr = np.searchsorted(plan.rows, np.arange(plan.shape[0] + 1))
                idx[(p, q)] = (plan, ptr)
                by_source.setdefault(p, []).append(q)
            idx = (idx, by_source)
            self.__dict__["_row_cache"] = idx
        return idx

    def expand_row(self, x: int) -> CouplingRow:
        """Row ``x`` of the coupling, touching only block-level data.

        ``raw`` sums to the source mass of ``x``; ``normalized`` sums to one.
        Targets are returned in ascending order.
        """
        if not 0 <= x < self.n_source:
            raise ValidationError(f"source index {x} out of range")
        plans, by_source = self._row_index()
        p = int(self.source.labels[x])
        i = int(self.source.positions[x])
        targets, raw = [], []
        for q in by_source.get(p, []):
            plan, ptr = plans[(p, q)]
            lo, hi = ptr[i], ptr[i + 1]
            targets.append(self.target.blocks[q][plan.cols[lo:hi]])
            raw.append(self.global_plan[p, q] * plan.mass[lo:hi])
        if not targets:
            empty = np.zeros(0)
            return CouplingRow(np.zeros(0, np.int64), empty, empty)
        t = np.concatenate(targets)
        r = np.concatenate(raw)
        order = np.argsort(t, kind="stable")
        t, r = t[order], r[order]
        total = r.sum()
        return CouplingRow(t, r, r / total if total > 0 else r)

    def argmax(self, x: int) -> int:
        """Target carrying the most mass from ``x``.

        Ties (within ``TIE_RTOL`` relative) go to the lowest target index.
        """
        row = self.expand_row(x)
        if row.targets.size == 0:
            raise ValidationError(f"source point {x} carries no mass")
        top = row.raw.max()
        return int(row.targets[np.flatnonzero(row.raw >= top * (1.0 - TIE_RTOL))[0]])

    def argmax_all(self) -> np.ndarray:
        """:meth:`argmax` for every source point (-1 where a row is empty)."""
        r, c, v = self.triplets()
        top = np.zeros(self.n_source)
        np.maximum.at(top, r, v)
        cand = v >= top[r] * (1.0 - TIE_RTOL)
        out = np.full(self.n_source, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(out, r[cand], c[cand])
        out[out == np.iinfo(np.int64).max] = -1
        return out

    def densify(self) -> np.ndarray:
        if self.n_source * self.n_target > DENSE_CAP:
            raise SizeCapError(f"dense coupling capped at {DENSE_CAP} entries")
        out = np.zeros((self.n_source, self.n_target))
        r, c, v = self.triplets()
        np.add.at(out, (r, c), v)
        return out


def expand_row(qc: QuantizationCoupling, x: int) -> CouplingRow:
    return qc.expand_row(x)


def argmax_match(qc: QuantizationCoupling, x: int) -> int:
    return qc.argmax(x)


def densify_small(qc: QuantizationCoupling) -> np.ndarray:
    """Dense ``N_X x N_Y`` matrix of the coupling (``N_X * N_Y <= 10^6``)."""
    return qc.densify()


# --------------------------------------------------------------------------
# local step


def local_linear_match(profile_x: BlockRadialProfile, profile_y: BlockRadialProfile
                       ) -> tuple[SparsePlan, float]:
    """Monotone matching of two blocks by distance to their representatives.

    Solves ``min sum (r_x - r_y)^2 pi(x, y)`` over couplings of the two
    normalized block measures as a 1D transport problem. Representatives
    sort first among equal radii, so the representative pair always gets
    positive mass.
    """
    a = Atoms1D(profile_x.radii, profile_x.masses)
    b = Atoms1D(profile_y.radii, profile_y.masses)
    return solve_1d_ot(a, b, first_a=profile_x.rep_position, first_b=profile_y.rep_position)


def feature_local_match(feat_x: np.ndarray, feat_y: np.ndarray, mass_x: np.ndarray,
                        mass_y: np.ndarray, exact_cap: int = FEATURE_EXACT_BLOCK_CAP
                        ) -> tuple[SparsePlan, str]:
    """Local plan under squared Euclidean feature cost.

    Exact OT when both blocks have at most ``exact_cap`` points, otherwise
    1D OT on feature norms. Returns the plan and the method used.
    """
    if feat_x.shape[0] <= exact_cap and feat_y.shape[0] <= exact_cap:
        diff = feat_x[:, None, :] - feat_y[None, :, :]
        cost = np.einsum("ijk,ijk->ij", diff, diff)
        plan, _ = exact_ot(cost, mass_x, mass_y)
        i, j = np.nonzero(plan)
        return SparsePlan(i, j, plan[i, j], plan.shape), "exact"
    a = Atoms1D(np.linalg.norm(feat_x, axis=1), mass_x)
    b = Atoms1D(np.linalg.norm(feat_y, axis=1), mass_y)
    return solve_1d_ot(a, b)[0], "norm-1d"


def blend_plans(p0: SparsePlan, p1: SparsePlan, beta: float) -> SparsePlan:
    """``(1 - beta) p0 + beta p1`` with duplicate entries merged."""
    if beta == 0.0:
        return p0
    if beta == 1.0:
        return p1
    rows = np.concatenate([p0.rows, p1.rows])
    cols = np.concatenate([p0.cols, p1.cols])
    mass = np.concatenate([(1.0 - beta) * p0.mass, beta * p1.mass])
    merged = sp.coo_matrix((mass, (rows, cols)), shape=p0.shape).tocsr()
    merged.sum_duplicates()
    coo = merged.tocoo()
    keep = coo.data > 0
    return SparsePlan(coo.row[keep].astype(np.int64), coo.col[keep].astype(np.int64),
                      coo.data[keep], p0.shape)


# --------------------------------------------------------------------------
# reporting


@dataclass
class MatchReport:
    """Summary of one matching run; ``to_dict`` gives the JSON form."""

    method: str
    n_source: int
    n_target: int
    m_source: int
    m_target: int
    params: dict
    global_loss: float
    global_iterations: int
    global_converged: bool
    support_size: int
    nnz: int
    full_loss: float | None
    q_source: float
    q_target: float
    eps_source: float
    eps_target: float
    eps_is_upper_bound: bool
    thm3_bound: float
    chain_bound: float
    metric_interpretation: bool
    local_feature_method: str | None
    block_sizes_source: dict
    block_sizes_target: dict
    timings: dict

    def to_dict(self, include_timings: bool = True) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        out.update(asdict(self))
        if not include_timings:
            out.pop("timings")
        return out


def _size_stats(partition: PointedPartition) -> dict:
    s = partition.block_sizes()
    return {"min": int(s.min()), "max": int(s.max()), "mean": float(s.mean())}


def _threshold(plan: np.ndarray, thr: float) -> np.ndarray:
    plan = np.where(plan > thr, plan, 0.0)
    total = plan.sum()
    if total <= 0:
        raise ValidationError("global coupling has empty support after thresholding")
    if total != 1.0:
        plan = plan / total
    return plan


def _run(X: MmSpace, PX: PointedPartition, Y: MmSpace, PY: PointedPartition,
         config: QgwConfig, features=None) -> tuple[QuantizationCoupling, MatchReport]:
    for space, part, side in ((X, PX, "source"), (Y, PY, "target")):
        if part.n != space.n:
            raise ValidationError(f"{side} partition covers {part.n} points, space has {space.n}")
    timings = {}
    t0 = time.perf_counter()
    qx = quantized_representation(X, PX)
    qy = quantized_representation(Y, PY)
    prof_x = radial_profiles(X, PX)
    prof_y = radial_profiles(Y, PY)
    timings["profiles"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if features is None:
        res = solve_gw(qx.rep_distances, qy.rep_distances, qx.rep_measure, qy.rep_measure, config.gw)
    else:
        fx, fy = features
        rx, ry = fx[PX.representatives], fy[PY.representatives]
        feat_cost = np.sum((rx[:, None, :] - ry[None, :, :]) ** 2, axis=2)
        res = solve_fgw(qx.rep_distances, qy.rep_distances, feat_cost,
                        qx.rep_measure, qy.rep_measure, config.alpha, config.gw)
    global_plan = _threshold(res.plan, config.support_threshold)
    timings["global"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pairs = [tuple(map(int, pq)) for pq in np.argwhere(global_plan > 0)]
    feature_method = set()

    def local(pq):
        p, q = pq
        plan, _ = local_linear_match(prof_x[p], prof_y[q])
        if features is not None and config.beta > 0:
            fx, fy = features
            p1, how = feature_local_match(fx[prof_x[p].members], fy[prof_y[q].members],
                                          prof_x[p].masses, prof_y[q].masses)
            feature_method.add(how)
            plan = blend_plans(plan, p1, config.beta)
        return plan

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            plans = list(pool.map(local, pairs))
    else:
        plans = [local(pq) for pq in pairs]
    qc = QuantizationCoupling(global_plan, dict(zip(pairs, plans)), PX, PY)
    timings["local"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    bounds = diagnostics.bound_report(X, PX, Y, PY)
    full = None
    if X.n * Y.n <= config.full_loss_cap:
        r, c, v = qc.triplets()
        full = gw_loss_sparse(X.distance_matrix(force=True), Y.distance_matrix(force=True), r, c, v)
    timings["diagnostics"] = time.perf_counter() - t0

    method = "qgw" if features is None else "qfgw"
    global_loss = gw_loss(qx.rep_distances, qy.rep_distances, global_plan)
    eps = max(bounds.eps_x, bounds.eps_y)
    report = MatchReport(
        method=method, n_source=X.n, n_target=Y.n, m_source=PX.m, m_target=PY.m,
        params={"alpha": config.alpha, "beta": config.beta, "inner": config.gw.inner,
                "epsilon": config.gw.epsilon, "init": config.gw.init,
                "max_outer_iter": config.gw.max_outer_iter, "conv_tol": config.gw.conv_tol,
                "support_threshold": config.support_threshold},
        global_loss=float(global_loss), global_iterations=int(res.n_iter),
        global_converged=bool(res.converged), support_size=len(pairs), nnz=qc.nnz(),
        full_loss=full, q_source=bounds.q_x, q_target=bounds.q_y,
        eps_source=bounds.eps_x, eps_target=bounds.eps_y,
        eps_is_upper_bound=bounds.eps_is_upper_bound, thm3_bound=bounds.thm3_bound,
        chain_bound=float(math.sqrt(max(global_loss, 0.0)) + 8.0 * eps),
        metric_interpretation=PX.m == PY.m,
        local_feature_method=(",".join(sorted(feature_method)) or None) if features is not None else None,
        block_sizes_source=_size_stats(PX), block_sizes_target=_size_stats(PY),
        timings=timings,
    )
    return qc, report


def match_qgw(X: MmSpace, PX: PointedPartition, Y: MmSpace, PY: PointedPartition,
              config: QgwConfig | None = None) -> tuple[QuantizationCoupling, MatchReport]:
    """Quantized GW matching of two partitioned spaces."""
    return _run(X, PX, Y, PY, config or QgwConfig())


def match_qfgw(X: MmSpace, PX: PointedPartition, fX, Y: MmSpace, PY: PointedPartition, fY,
               config: QgwConfig | None = None) -> tuple[QuantizationCoupling, MatchReport]:
    """Quantized fused GW matching with per-point feature vectors.

    The global step solves FGW with weight ``alpha`` between the
    representatives and their features. Each local plan is
    ``(1 - beta)`` times the radial plan plus ``beta`` times a feature plan.
    With ``alpha = beta = 0`` the result equals :func:`match_qgw`.
    """
    fx = np.asarray(fX, dtype=np.float64)
    fy = np.asarray(fY, dtype=np.float64)
    if fx.ndim == 1:
        fx = fx[:, None]
    if fy.ndim == 1:
        fy = fy[:, None]
    if fx.shape[0] != X.n or fy.shape[0] != Y.n:
        raise ValidationError("feature tables must have one row per point")
    if fx.shape[1] != fy.shape[1]:
        raise ValidationError(f"feature-dimension mismatch: {fx.shape[1]} vs {fy.shape[1]}")
    return _run(X, PX, Y, PY, config or QgwConfig(), features=(fx, fy))
