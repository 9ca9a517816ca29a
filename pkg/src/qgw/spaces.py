"""Finite metric measure spaces and pointed partitions.

Three distance backends are supported:

* ``DenseSpace`` holds an explicit symmetric distance matrix.
* ``EuclideanSpace`` holds point coordinates; distances are computed on demand.
* ``GraphSpace`` holds a weighted adjacency structure; geodesics are served by
  single-source shortest paths, one source at a time.

None of the matching code paths ask a space for its full N x N distance
matrix. Only the representative-to-representative block and the
representative-to-own-block rows are ever materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .errors import DisconnectedGraphError, SizeCapError, ValidationError

MEASURE_TOL = 1e-12
DEFAULT_DENSE_THRESHOLD = 5000
# Row-chunk size used whenever distances are streamed in blocks.
_CHUNK_VALUES = 1 << 20


def _normalize_measure(weights, n: int, allow_zero_mass: bool) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape != (n,):
        raise ValidationError(f"weights must have length {n}, got {w.shape[0]}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValidationError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValidationError("weights must have positive sum")
    if not allow_zero_mass and np.any(w == 0):
        raise ValidationError(
            "zero-mass point(s) at indices "
            f"{np.flatnonzero(w == 0)[:10].tolist()}; pass allow_zero_mass=True to permit"
        )
    return w / total


class MmSpace:
    """Base class: a finite metric space with a probability measure.

    Subclasses implement :meth:`_rows`, returning distances from a set of
    sources to a set of targets.
    """

    kind = "abstract"

    def __init__(self, n: int, measure: np.ndarray, dtype=np.float64,
                 dense_threshold: int = DEFAULT_DENSE_THRESHOLD):
        if n < 1:
            raise ValidationError("a space needs at least one point")
        self.n = int(n)
        self.measure = np.asarray(measure, dtype=np.float64)
        self.measure.setflags(write=False)
        self.dtype = np.dtype(dtype)
        self.dense_threshold = int(dense_threshold)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n})"

    def _check_index(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise ValidationError(f"point index out of range [0, {self.n})")
        return idx

    def _rows(self, sources: np.ndarray, targets: np.ndarray | None) -> np.ndarray:
        raise NotImplementedError

    def distances_from(self, source: int, targets=None) -> np.ndarray:
        """Distances from one point to ``targets`` (all points if None)."""
        src = self._check_index(source)
        if src.size != 1:
            raise ValidationError("distances_from takes a single source index")
        tgt = None if targets is None else self._check_index(targets)
        return self._rows(src, tgt)[0].astype(self.dtype, copy=False)

    def pairwise(self, rows, cols) -> np.ndarray:
        """Distance block between the index sets ``rows`` and ``cols``."""
        r = self._check_index(rows)
        c = self._check_index(cols)
        return self._rows(r, c).astype(self.dtype, copy=False)

    def distance(self, i: int, j: int) -> float:
        return float(self.pairwise([i], [j])[0, 0])

    def distance_matrix(self, force: bool = False) -> np.ndarray:
        """Full N x N matrix. Refused above ``dense_threshold`` unless forced."""
        if self.n > self.dense_threshold and not force:
            raise SizeCapError(
                f"refusing to build a {self.n}x{self.n} distance matrix "
                f"(threshold {self.dense_threshold})"
            )
        idx = np.arange(self.n)
        return self.pairwise(idx, idx)

    def diameter(self) -> float:
        """Exact maximal pairwise distance, streamed by row chunks."""
        idx = np.arange(self.n)
        chunk = max(1, _CHUNK_VALUES // self.n)
        best = 0.0
        for start in range(0, self.n, chunk):
            best = max(best, float(self._rows(idx[start:start + chunk], None).max()))
        return best


class DenseSpace(MmSpace):
    kind = "dense"

    def __init__(self, matrix: np.ndarray, measure: np.ndarray, **kw):
        super().__init__(matrix.shape[0], measure, **kw)
        self.matrix = matrix
        self.matrix.setflags(write=False)

    def _rows(self, sources, targets):
        block = self.matrix[sources]
        return block if targets is None else block[:, targets]


class EuclideanSpace(MmSpace):
    kind = "euclidean"

    def __init__(self, coords: np.ndarray, measure: np.ndarray, **kw):
        super().__init__(coords.shape[0], measure, **kw)
        self.coords = coords
        self.coords.setflags(write=False)

    def _rows(self, sources, targets):
        a = self.coords[sources]
        b = self.coords if targets is None else self.coords[targets]
        out = np.empty((a.shape[0], b.shape[0]))
        # Direct differences rather than the |a|^2+|b|^2-2ab expansion: exact
        # zeros on the diagonal and exact ties for Voronoi assignment.
        chunk = max(1, _CHUNK_VALUES // max(1, b.shape[0] * a.shape[1]))
        for start in range(0, a.shape[0], chunk):
            diff = a[start:start + chunk, None, :] - b[None, :, :]
            out[start:start + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return out

    def diameter(self) -> float:
        from scipy.spatial import ConvexHull, QhullError

        pts = self.coords
        d = pts.shape[1]
        if d >= 2 and self.n > d + 1:
            try:
                hull = np.unique(ConvexHull(pts).vertices)
                sub = EuclideanSpace(pts[hull].copy(), np.full(hull.size, 1.0 / hull.size))
                return MmSpace.diameter(sub)
            except QhullError:
                pass
        if d == 1:
            return float(pts.max() - pts.min())
        return super().diameter()


class GraphSpace(MmSpace):
    """Graph with nonnegative edge lengths; distance = shortest-path length.

    ``inf_replace`` controls unreachable pairs: ``None`` raises
    :class:`DisconnectedGraphError`, a number ``c`` substitutes ``c`` times
    :meth:`finite_distance_bound`.
    """

    kind = "graph"

    def __init__(self, adjacency: sp.csr_matrix, measure: np.ndarray,
                 inf_replace: float | None = None, **kw):
        super().__init__(adjacency.shape[0], measure, **kw)
        self.adjacency = adjacency
        self.inf_replace = inf_replace
        self._finite_bound = None

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v]:a.indptr[v + 1]]

    def distance(self, i: int, j: int) -> float:
        # Path sums depend on summation order; always sweep from the lower
        # index so d(i, j) == d(j, i) exactly.
        lo, hi = (i, j) if i <= j else (j, i)
        return float(self.pairwise([lo], [hi])[0, 0])

    def pairwise(self, rows, cols) -> np.ndarray:
        out = super().pairwise(rows, cols)
        r = np.atleast_1d(np.asarray(rows))
        if out.shape[0] == out.shape[1] and np.array_equal(r, np.atleast_1d(np.asarray(cols))):
            out = np.where(r[:, None] <= r[None, :], out, out.T)
        return out

    def _sssp(self, sources: np.ndarray) -> np.ndarray:
        return np.atleast_2d(dijkstra(self.adjacency, directed=False, indices=sources))

    def _rows(self, sources, targets):
        # One Dijkstra per source; only the requested columns are kept so the
        # caller never holds more than |sources| x |targets| values.
        ncols = self.n if targets is None else targets.size
        out = np.empty((sources.size, ncols))
        chunk = max(1, _CHUNK_VALUES // self.n)
        for start in range(0, sources.size, chunk):
            full = self._sssp(sources[start:start + chunk])
            rows = full if targets is None else full[:, targets]
            out[start:start + chunk] = self._fix_unreachable(rows)
        return out

    def _fix_unreachable(self, rows):
        bad = ~np.isfinite(rows)
        if not bad.any():
            return rows
        if self.inf_replace is None:
            raise DisconnectedGraphError(
                "disconnected graph: geodesic query reached an unreachable node"
            )
        rows = rows.copy()
        rows[bad] = self.inf_replace * self.finite_distance_bound()
        return rows

    def finite_distance_bound(self) -> float:
        """Upper bound on every finite geodesic distance.

        Twice the largest distance from each component's lowest-index node,
        found with one multi-source sweep. Symmetric and cheap, unlike the
        exact largest finite distance.
        """
        if self._finite_bound is None:
            from scipy.sparse.csgraph import connected_components

            _, comp = connected_components(self.adjacency, directed=False)
            _, roots = np.unique(comp, return_index=True)
            d = dijkstra(self.adjacency, directed=False, indices=roots, min_only=True)
            self._finite_bound = 2.0 * float(d.max())
        return self._finite_bound

    def is_connected(self) -> bool:
        from scipy.sparse.csgraph import connected_components

        return connected_components(self.adjacency, directed=False)[0] == 1


# --------------------------------------------------------------------------
# constructors


def build_from_points(coords, weights=None, allow_zero_mass: bool = False,
                      dtype=np.float64, dense_threshold: int = DEFAULT_DENSE_THRESHOLD
                      ) -> EuclideanSpace:
    """Euclidean point cloud with uniform (or normalized given) measure.

    Parameters
    ----------
    coords : array_like, shape (N, d) or (N,)
        Point coordinates; a 1D array is read as N points on the line.
    weights : array_like, optional
        Nonnegative masses, normalized to sum to one.
    allow_zero_mass : bool
        Accept points with zero weight. They are never chosen as block
        representatives.
    """
    x = np.asarray(coords, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise ValidationError("coords must be a non-empty (N, d) table")
    if not np.all(np.isfinite(x)):
        raise ValidationError("coords contain non-finite values")
    measure = _normalize_measure(weights, x.shape[0], allow_zero_mass)
    return EuclideanSpace(np.ascontiguousarray(x), measure, dtype=dtype,
                          dense_threshold=dense_threshold)


def build_from_matrix(matrix, weights=None, allow_zero_mass: bool = False,
                      n_triples: int = 1000, seed: int = 0, atol: float = 1e-9
                      ) -> DenseSpace:
    """Dense-kind space from an explicit distance matrix.

    Symmetry and the zero diagonal are checked exactly; the triangle
    inequality is checked on ``n_triples`` random triples.
    """
    d = np.array(matrix, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] == 0:
        raise ValidationError("distance matrix must be square and non-empty")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValidationError("distances must be finite and nonnegative")
    if not np.array_equal(d, d.T):
        raise ValidationError("distance matrix is not symmetric")
    if np.any(np.diag(d) != 0):
        raise ValidationError("distance matrix has a nonzero diagonal")
    n = d.shape[0]
    if n >= 3 and n_triples > 0:
        rng = np.random.default_rng(seed)
        i, j, k = rng.integers(0, n, size=(3, n_triples))
        if np.any(d[i, k] > d[i, j] + d[j, k] + atol):
            raise ValidationError("triangle inequality violated on a sampled triple")
    measure = _normalize_measure(weights, n, allow_zero_mass)
    return DenseSpace(d, measure)


def build_from_graph(edges, n: int | None = None, weights=None,
                     inf_replace: float | None = None, allow_zero_mass: bool = False,
                     dense_threshold: int = DEFAULT_DENSE_THRESHOLD) -> GraphSpace:
    """Graph-kind space from an undirected edge list.

    ``edges`` holds ``(u, v)`` or ``(u, v, w)`` rows; missing weights default
    to 1. Parallel edges keep the shortest length and self loops are dropped.
    """
    if not isinstance(edges, np.ndarray):
        rows = [tuple(r) for r in edges]
        if any(len(r) not in (2, 3) for r in rows):
            raise ValidationError("edges must be rows of (u, v) or (u, v, w)")
        edges = [r if len(r) == 3 else (*r, 1.0) for r in rows]
    e = np.asarray(edges, dtype=np.float64)
    if e.size == 0:
        e = np.zeros((0, 3))
    if e.ndim != 2 or e.shape[1] not in (2, 3):
        raise ValidationError("edges must be rows of (u, v) or (u, v, w)")
    if e.shape[1] == 2:
        e = np.column_stack([e, np.ones(e.shape[0])])
    u = e[:, 0].astype(np.int64)
    v = e[:, 1].astype(np.int64)
    w = e[:, 2]
    if np.any(u != e[:, 0]) or np.any(v != e[:, 1]):
        raise ValidationError("node ids must be integers")
    if n is None:
        n = int(max(u.max(initial=-1), v.max(initial=-1)) + 1)
    if n < 1:
        raise ValidationError("graph needs at least one node")
    if u.size and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= n):
        raise ValidationError(f"node id out of range [0, {n})")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValidationError("edge weights must be finite and nonnegative")
    keep = u != v
    u, v, w = u[keep], v[keep], w[keep]
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    order = np.lexsort((w, hi, lo))
    lo, hi, w = lo[order], hi[order], w[order]
    first = np.ones(lo.size, dtype=bool)
    first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    lo, hi, w = lo[first], hi[first], w[first]
    rows = np.concatenate([lo, hi])
    cols = np.concatenate([hi, lo])
    vals = np.concatenate([w, w])
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    adj.sort_indices()
    measure = _normalize_measure(weights, n, allow_zero_mass)
    return GraphSpace(adj, measure, inf_replace=inf_replace, dense_threshold=dense_threshold)


def rep_row_distances(space: MmSpace, rep: int, targets) -> np.ndarray:
    """Distances from a representative to a target index set."""
    return space.distances_from(rep, targets)


# --------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class PointedPartition:
    """Disjoint blocks covering ``[0, N)``, each with a representative.

    ``labels[i]`` is the block of point ``i`` and ``positions[i]`` its index
    inside ``blocks[labels[i]]`` (blocks are sorted ascending).
    """

    labels: np.ndarray
    representatives: np.ndarray
    block_measure: np.ndarray
    blocks: list = field(repr=False)
    positions: np.ndarray = field(repr=False)

    @classmethod
    def from_labels(cls, labels, representatives, measure) -> "PointedPartition":
        labels = np.asarray(labels, dtype=np.int64).copy()
        reps = np.asarray(representatives, dtype=np.int64).copy()
        measure = np.asarray(measure, dtype=np.float64)
        n, m = labels.size, reps.size
        if measure.shape != (n,):
            raise ValidationError("measure length does not match labels")
        if m == 0:
            raise ValidationError("a partition needs at least one block")
        if labels.min() < 0 or labels.max() >= m:
            raise ValidationError("block label out of range")
        if reps.min() < 0 or reps.max() >= n:
            raise ValidationError("representative index out of range")
        if np.unique(reps).size != m:
            raise ValidationError("representatives must be distinct")
        if np.any(labels[reps] != np.arange(m)):
            raise ValidationError("each representative must lie in its own block")
        order = np.argsort(labels, kind="stable")
        counts = np.bincount(labels, minlength=m)
        if np.any(counts == 0):
            raise ValidationError("empty block")
        bounds = np.concatenate([[0], np.cumsum(counts)])
        blocks = [order[bounds[p]:bounds[p + 1]] for p in range(m)]
        positions = np.empty(n, dtype=np.int64)
        positions[order] = np.arange(n) - bounds[labels[order]]
        block_measure = np.bincount(labels, weights=measure, minlength=m)
        if np.any(block_measure <= 0):
            raise ValidationError("every block must carry positive mass")
        for a in (labels, reps, block_measure, positions):
            a.setflags(write=False)
        return cls(labels, reps, block_measure, blocks, positions)

    @classmethod
    def from_blocks(cls, blocks, representatives, measure) -> "PointedPartition":
        n = np.asarray(measure).size
        labels = np.full(n, -1, dtype=np.int64)
        for p, b in enumerate(blocks):
            b = np.asarray(b, dtype=np.int64)
            if np.any(labels[b] != -1):
                raise ValidationError("blocks are not disjoint")
            labels[b] = p
        if np.any(labels < 0):
            raise ValidationError("blocks do not cover all points")
        return cls.from_labels(labels, representatives, measure)

    @classmethod
    def identity(cls, measure) -> "PointedPartition":
        n = np.asarray(measure).size
        return cls.from_labels(np.arange(n), np.arange(n), measure)

    @property
    def m(self) -> int:
        return int(self.representatives.size)

    @property
    def n(self) -> int:
        return int(self.labels.size)

    def block_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.m)


@dataclass(frozen=True)
class QuantizedRepresentation:
    rep_distances: np.ndarray
    rep_measure: np.ndarray


@dataclass(frozen=True)
class BlockRadialProfile:
    """Distances of block members to their representative, plus masses.

    ``members`` are global point indices (ascending), ``radii[k]`` is the
    distance from ``members[k]`` to the representative and ``masses`` the
    block-normalized measure.
    """

    block: int
    members: np.ndarray
    radii: np.ndarray
    masses: np.ndarray
    rep_position: int


def quantized_representation(space: MmSpace, partition: PointedPartition
                             ) -> QuantizedRepresentation:
    """Representative distance matrix and pushforward measure."""
    reps = partition.representatives
    d = space.pairwise(reps, reps).astype(np.float64)
    # Exact symmetry regardless of backend round-off.
    d = np.triu(d, 1)
    d = d + d.T
    return QuantizedRepresentation(d, partition.block_measure.copy())


def block_profile(space: MmSpace, partition: PointedPartition, p: int,
                  radii: np.ndarray | None = None) -> BlockRadialProfile:
    members = partition.blocks[p]
    rep = int(partition.representatives[p])
    if radii is None:
        radii = rep_row_distances(space, rep, members).astype(np.float64)
    rep_pos = int(partition.positions[rep])
    radii = np.asarray(radii, dtype=np.float64).copy()
    radii[rep_pos] = 0.0
    mass = space.measure[members] / partition.block_measure[p]
    return BlockRadialProfile(p, members, radii, mass, rep_pos)


def radial_profiles(space: MmSpace, partition: PointedPartition) -> list:
    """All block profiles, using O(N) distance evaluations in total."""
    if isinstance(space, EuclideanSpace):
        owner = partition.representatives[partition.labels]
        diff = space.coords - space.coords[owner]
        r_all = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return [block_profile(space, partition, p, r_all[b])
                for p, b in enumerate(partition.blocks)]
    return [block_profile(space, partition, p) for p in range(partition.m)]


def radii_to_representatives(space: MmSpace, partition: PointedPartition) -> np.ndarray:
    """Length-N vector of d(x, representative of x's block)."""
    out = np.empty(partition.n)
    for prof in radial_profiles(space, partition):
        out[prof.members] = prof.radii
    return out
