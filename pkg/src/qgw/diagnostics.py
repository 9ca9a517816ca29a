"""Error-bound quantities and matching quality metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import dijkstra

from .errors import SizeCapError, ValidationError
from .spaces import (_CHUNK_VALUES, DenseSpace, EuclideanSpace, GraphSpace, MmSpace, PointedPartition,
                     radial_profiles, radii_to_representatives)

PROJECTION_CAP = 1_000_000


def eccentricity(space: MmSpace, x: int) -> float:
    """Root-mean-square distance from ``x`` to the space."""
    d = space.distances_from(x).astype(np.float64)
    return math.sqrt(float(np.sum(d * d * space.measure)))


def quantized_eccentricity(space: MmSpace, partition: PointedPartition) -> float:
    """Mass-weighted RMS distance of points to their block representative.

    Equals ``(sum_p mu(U_p) * s_{U_p}(x_p)^2)^(1/2)`` with ``s`` computed
    under the block-normalized measure.
    """
    r = radii_to_representatives(space, partition)
    return math.sqrt(float(np.sum(space.measure * r * r)))


def lemma1_projection_coupling(space: MmSpace, partition: PointedPartition) -> np.ndarray:
    """The ``N x m`` coupling sending each point to its own representative.

    Its marginals are the space measure and the block measure; its GW loss
    against the quantized representation is at most ``(2 q(P))^2``.
    """
    n, m = partition.n, partition.m
    if n * m > PROJECTION_CAP:
        raise SizeCapError(f"projection coupling capped at {PROJECTION_CAP} entries")
    out = np.zeros((n, m))
    out[np.arange(n), partition.labels] = space.measure
    return out


def block_diameters(space: MmSpace, partition: PointedPartition,
                    exact_graph_limit: int | None = None) -> tuple[np.ndarray, bool]:
    """Diameter of every block and whether the values are upper bounds.

    Dense and Euclidean blocks are scanned exactly (convex hulls for point
    clouds). Graph blocks are scanned exactly with one shortest-path sweep
    per member while ``N`` is within ``exact_graph_limit`` (default: the
    space's dense threshold); above that the bound ``2 * max radius`` is
    returned instead.
    """
    m = partition.m
    diam = np.zeros(m)
    if isinstance(space, GraphSpace):
        limit = space.dense_threshold if exact_graph_limit is None else exact_graph_limit
        if space.n > limit:
            for prof in radial_profiles(space, partition):
                diam[prof.block] = 2.0 * prof.radii.max()
            return diam, True
    for p, members in enumerate(partition.blocks):
        if members.size < 2:
            continue
        if isinstance(space, EuclideanSpace):
            sub = EuclideanSpace(space.coords[members].copy(),
                                 np.full(members.size, 1.0 / members.size))
            diam[p] = sub.diameter()
        elif isinstance(space, DenseSpace):
            diam[p] = float(space.matrix[np.ix_(members, members)].max())
        else:
            diam[p] = _graph_block_diameter(space, members, partition.representatives[p])
    return diam, False


def _graph_block_diameter(space: GraphSpace, members: np.ndarray, rep: int) -> float:
    # Every in-block distance is at most twice the largest radius (triangle
    # inequality through the representative), so each sweep can stop there.
    radii = space.pairwise([rep], members)[0]
    limit = 2.0 * float(radii.max()) * (1.0 + 1e-9)
    best = 0.0
    chunk = max(1, _CHUNK_VALUES // space.n)
    for s in range(0, members.size, chunk):
        d = dijkstra(space.adjacency, directed=False, indices=members[s:s + chunk], limit=limit)
        block = d[:, members]
        if not np.all(np.isfinite(block)):
            # disconnected block under inf_replace: fall back to the full sweep
            return float(space.pairwise(members, members).max())
        best = max(best, float(block.max()))
    return best


@dataclass
class BoundReport:
    q_x: float
    q_y: float
    eps_x: float
    eps_y: float
    eps_is_upper_bound: bool
    thm3_bound: float
    lemma1_bound_x: float
    lemma1_bound_y: float
    thm2_bound: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def bound_report(X: MmSpace, PX: PointedPartition, Y: MmSpace, PY: PointedPartition
                 ) -> BoundReport:
    """Quantized eccentricities, block diameters and the derived bounds.

    ``thm3_bound = 2 (q_x + q_y) + 8 max(eps_x, eps_y)`` bounds the gap
    between the GW distance and the loss of the quantized coupling.
    ``thm2_bound = 2 (q_x + q_y)`` uses the supplied partitions, so it is an
    upper bound on the optimal-partition quantity.
    """
    qx = quantized_eccentricity(X, PX)
    qy = quantized_eccentricity(Y, PY)
    dx, ub_x = block_diameters(X, PX)
    dy, ub_y = block_diameters(Y, PY)
    ex, ey = float(dx.max()), float(dy.max())
    return BoundReport(
        q_x=qx, q_y=qy, eps_x=ex, eps_y=ey, eps_is_upper_bound=ub_x or ub_y,
        thm3_bound=2.0 * (qx + qy) + 8.0 * max(ex, ey),
        lemma1_bound_x=2.0 * qx, lemma1_bound_y=2.0 * qy, thm2_bound=2.0 * (qx + qy),
    )


# --------------------------------------------------------------------------
# matching metrics


def _paired_distances(space: MmSpace, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``d(a[i], b[..., i])`` without building an N x N matrix.

    ``b`` may stack several partner lists (shape ``(k, len(a))``); graph
    sources are then swept once for all of them.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if isinstance(space, EuclideanSpace):
        diff = space.coords[a] - space.coords[b]
        return np.sqrt(np.einsum("...j,...j->...", diff, diff))
    if isinstance(space, DenseSpace):
        return space.matrix[a, b]
    # Batched shortest-path sweeps over the distinct sources, chunked so at
    # most _CHUNK_VALUES distances are alive at once.
    out = np.empty(b.shape)
    sources, inverse = np.unique(a, return_inverse=True)
    chunk = max(1, _CHUNK_VALUES // space.n)
    for start in range(0, sources.size, chunk):
        rows = space.pairwise(sources[start:start + chunk], np.arange(space.n))
        sel = (inverse >= start) & (inverse < start + chunk)
        out[..., sel] = rows[inverse[sel] - start, b[..., sel]]
    return out


def _check_match(match, ground_truth, n_target):
    match = np.asarray(match, dtype=np.int64)
    gt = np.asarray(ground_truth, dtype=np.int64)
    if match.shape != gt.shape:
        raise ValidationError(f"size mismatch: {match.size} matches vs {gt.size} ground-truth entries")
    if match.size and (match.min() < 0 or match.max() >= n_target or gt.min() < 0 or gt.max() >= n_target):
        raise ValidationError("target index out of range")
    return match, gt


def distortion_score(target: MmSpace, match, ground_truth, normalize: bool = False) -> float:
    """Mean squared target distance between matched points and true partners.

    ``match[i]`` and ``ground_truth[i]`` are target indices for source point
    ``i``. Units are squared target-metric units; ``normalize=True`` divides
    by the squared target diameter.
    """
    match, gt = _check_match(match, ground_truth, target.n)
    d = _paired_distances(target, gt, match)
    score = float(np.mean(d * d))
    if normalize:
        diam = target.diameter()
        score = score / (diam * diam) if diam > 0 else 0.0
    return score


def distortion_percentage(target: MmSpace, match, ground_truth, n_random: int = 5,
                          seed: int = 0) -> float:
    """Summed distortion as a percentage of the mean random-matching distortion.

    Random matchings are uniform permutations when source and target have the
    same size, else iid uniform targets.
    """
    match, gt = _check_match(match, ground_truth, target.n)
    rng = np.random.default_rng(seed)
    partners = [match]
    for _ in range(n_random):
        if match.size == target.n:
            partners.append(rng.permutation(target.n))
        else:
            partners.append(rng.integers(0, target.n, size=match.size))
    sums = [float(row.sum()) for row in _paired_distances(target, gt, np.stack(partners))]
    ours = sums[0]
    base = float(np.mean(sums[1:]))
    if base <= 0:
        raise ValidationError("random-matching distortion is zero (degenerate target)")
    return 100.0 * ours / base


def segment_transfer_score(match, labels_x, labels_y) -> float:
    """Fraction of source points whose match carries the same label."""
    match = np.asarray(match, dtype=np.int64)
    lx = np.asarray(labels_x)
    ly = np.asarray(labels_y)
    if lx.shape[0] != match.size:
        raise ValidationError("missing labels: source labels do not cover every source point")
    if match.size and match.max() >= ly.shape[0]:
        raise ValidationError("missing labels: target labels do not cover every matched point")
    return float(np.mean(ly[match] == lx)) if match.size else 0.0


def relative_error_from_losses(loss_qgw: float, loss_gw: float, loss_product: float) -> float:
    """``(GW(prod) - GW(qgw)) / (GW(prod) - GW(gw))``.

    Equals 1 when the quantized coupling matches the reference loss and 0
    when it is no better than the product coupling. Returns NaN (with a
    warning) when the denominator vanishes.
    """
    denom = loss_product - loss_gw
    if denom == 0 or not math.isfinite(denom):
        warnings.warn("degenerate relative error: reference loss equals product loss")
        return float("nan")
    return (loss_product - loss_qgw) / denom


def relative_error(X: MmSpace, Y: MmSpace, qc, gw_plan) -> float:
    """Relative error of a quantization coupling against a dense reference plan."""
    from .gw import gw_loss, gw_loss_sparse

    if X.n * Y.n > PROJECTION_CAP:
        raise SizeCapError("relative error needs dense losses (N_X * N_Y <= 10^6)")
    dX = X.distance_matrix(force=True)
    dY = Y.distance_matrix(force=True)
    r, c, v = qc.triplets()
    return relative_error_from_losses(gw_loss_sparse(dX, dY, r, c, v), gw_loss(dX, dY, gw_plan),
                          gw_loss(dX, dY, np.outer(X.measure, Y.measure)))


def color_transfer(qc, source_colors) -> np.ndarray:
    """Target colors as mass-weighted averages of source colors.

    Target points receiving no mass get neutral gray (0.5).
    """
    colors = np.asarray(source_colors, dtype=np.float64)
    if colors.ndim != 2 or colors.shape[0] != qc.n_source:
        raise ValidationError("source_colors must have one row per source point")
    coupling = qc.to_sparse().T.tocsr()
    incoming = np.asarray(coupling.sum(axis=1)).ravel()
    out = np.asarray(coupling @ colors)
    empty = incoming <= 0
    out[~empty] /= incoming[~empty, None]
    out[empty] = 0.5
    return np.clip(out, 0.0, 1.0)
