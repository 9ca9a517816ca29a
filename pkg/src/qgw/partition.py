"""Pointed-partition heuristics.

* Voronoi: sample representatives uniformly without replacement, assign every
  point to its nearest representative.
* Fluid communities (graphs): density-driven label propagation from ``m``
  seeds; each block is represented by its member of highest PageRank.

All tie-breaks go to the lowest index so results do not depend on platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DisconnectedGraphError, ValidationError
from .spaces import GraphSpace, MmSpace, PointedPartition, _CHUNK_VALUES


@dataclass
class PartitionConfig:
    """How to partition a space.

    Exactly one of ``m`` (block count) or ``sample_fraction`` (``m =
    floor(p * N)``, at least 1) should be given.
    """

    method: str = "voronoi"
    m: int | None = None
    sample_fraction: float | None = None
    seed: int = 0
    pagerank_damping: float = 0.85
    pagerank_tol: float = 1e-8
    fluid_max_iter: int = 100

    def __post_init__(self):
        if self.method not in ("voronoi", "fluid"):
            raise ValidationError(f"unknown partition method {self.method!r}")
        if (self.m is None) == (self.sample_fraction is None):
            raise ValidationError("give exactly one of m or sample_fraction")
        if self.sample_fraction is not None and not 0 < self.sample_fraction <= 1:
            raise ValidationError("sample_fraction must lie in (0, 1]")
        if self.m is not None and self.m < 1:
            raise ValidationError("m must be at least 1")
        if not 0 < self.pagerank_damping < 1:
            raise ValidationError("pagerank_damping must lie in (0, 1)")

    def block_count(self, n: int) -> int:
        m = self.m if self.m is not None else max(1, math.floor(self.sample_fraction * n))
        if m > n:
            raise ValidationError(f"m = {m} exceeds the number of points {n}")
        return m


def _sample_representatives(space: MmSpace, m: int, seed: int) -> np.ndarray:
    candidates = np.flatnonzero(space.measure > 0)
    if m > candidates.size:
        raise ValidationError(f"m = {m} exceeds the number of positive-mass points {candidates.size}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(candidates, size=m, replace=False))


def voronoi_assign(space: MmSpace, representatives) -> PointedPartition:
    """Nearest-representative partition for given representatives.

    Representatives are used in the given order (block ``p`` belongs to
    ``representatives[p]``); ties go to the lowest block index. Distances
    are streamed so at most ``chunk * m`` values are held at once; for graph
    spaces this is one shortest-path sweep per representative.
    """
    reps = np.asarray(representatives, dtype=np.int64)
    if reps.size == 0:
        raise ValidationError("need at least one representative")
    n, m = space.n, reps.size
    labels = np.empty(n, dtype=np.int64)
    if isinstance(space, GraphSpace):
        best = np.full(n, np.inf)
        labels[:] = 0
        for p, r in enumerate(reps):
            d = space.distances_from(int(r))
            closer = d < best
            labels[closer] = p
            best[closer] = d[closer]
    else:
        chunk = max(1, _CHUNK_VALUES // m)
        all_idx = np.arange(n)
        for s in range(0, n, chunk):
            block = space.pairwise(all_idx[s:s + chunk], reps)
            labels[s:s + chunk] = np.argmin(block, axis=1)
    labels[reps] = np.arange(m)
    return PointedPartition.from_labels(labels, reps, space.measure)


def voronoi_partition(space: MmSpace, config: PartitionConfig) -> PointedPartition:
    """Random Voronoi partition, deterministic given ``config.seed``."""
    m = config.block_count(space.n)
    reps = _sample_representatives(space, m, config.seed)
    return voronoi_assign(space, reps)


def pagerank(space: GraphSpace, damping: float = 0.85, tol: float = 1e-8,
             max_iter: int = 10_000) -> np.ndarray:
    """PageRank by power iteration on the undirected, unweighted structure.

    Iterates ``x <- damping * W x + (1 - damping) / N`` where ``W`` is the
    column-stochastic random-walk matrix, until the L1 change drops below
    ``tol``.
    """
    n = space.n
    if n == 1:
        return np.ones(1)
    adj = space.adjacency.copy()
    adj.data = np.ones_like(adj.data)
    deg = np.asarray(adj.sum(axis=0)).ravel()
    if np.any(deg == 0):
        raise DisconnectedGraphError("disconnected graph: isolated node")
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        new = damping * (adj @ (x / deg)) + (1.0 - damping) / n
        new /= new.sum()
        if np.abs(new - x).sum() < tol:
            return new
        x = new
    return x


def fluid_communities(space: GraphSpace, m: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    """Fluid-communities labels (length N, values in ``[0, m)``).

    Each community ``c`` has density ``1 / |c|``. Vertices are visited in
    index order; a vertex adopts the community with the largest summed
    density over itself and its neighbours, keeping its own community when
    it is among the maxima and otherwise taking the lowest-indexed maximum.
    A vertex that is the last member of its community never leaves it, so
    all ``m`` communities survive. Sweeps repeat until nothing changes or
    ``max_iter`` is reached.
    """
    n = space.n
    rng = np.random.default_rng(seed)
    seeds = np.sort(rng.choice(n, size=m, replace=False))
    labels = np.full(n, -1, dtype=np.int64)
    labels[seeds] = np.arange(m)
    size = np.ones(m, dtype=np.int64)
    adj = space.adjacency
    indptr, indices = adj.indptr, adj.indices
    for _ in range(max_iter):
        changed = False
        for v in range(n):
            hood = np.concatenate([[v], indices[indptr[v]:indptr[v + 1]]])
            lab = labels[hood]
            lab = lab[lab >= 0]
            if lab.size == 0:
                continue
            score = np.bincount(lab, minlength=m) / size
            top = score.max()
            cur = labels[v]
            if cur >= 0 and score[cur] == top:
                continue
            if cur >= 0 and size[cur] == 1:
                continue
            new = int(np.flatnonzero(score == top)[0])
            if cur >= 0:
                size[cur] -= 1
            labels[v] = new
            size[new] += 1
            changed = True
        if not changed:
            break
    if np.any(labels < 0):
        labels = _fill_unassigned(space, labels)
    return labels


def _fill_unassigned(space: GraphSpace, labels: np.ndarray) -> np.ndarray:
    """Breadth-first spread of labels into vertices no community reached."""
    labels = labels.copy()
    frontier = np.flatnonzero(labels >= 0)
    adj = space.adjacency
    while frontier.size:
        nxt = []
        for v in frontier:
            for u in adj.indices[adj.indptr[v]:adj.indptr[v + 1]]:
                if labels[u] < 0:
                    labels[u] = labels[v]
                    nxt.append(u)
        frontier = np.array(sorted(nxt), dtype=np.int64)
    return labels


def fluid_partition(space: GraphSpace, config: PartitionConfig) -> PointedPartition:
    """Fluid-communities blocks with maximal-PageRank representatives."""
    if not isinstance(space, GraphSpace):
        raise ValidationError("fluid partitioning needs a graph space")
    if not space.is_connected():
        raise DisconnectedGraphError("disconnected graph: fluid communities need a connected graph")
    m = config.block_count(space.n)
    labels = fluid_communities(space, m, config.seed, config.fluid_max_iter)
    pr = pagerank(space, config.pagerank_damping, config.pagerank_tol)
    reps = np.empty(m, dtype=np.int64)
    for p in range(m):
        members = np.flatnonzero(labels == p)
        eligible = members[space.measure[members] > 0]
        if eligible.size == 0:
            eligible = members
        reps[p] = eligible[np.argmax(pr[eligible])]
    return PointedPartition.from_labels(labels, reps, space.measure)


def make_partition(space: MmSpace, config: PartitionConfig) -> PointedPartition:
    if config.method == "fluid":
        return fluid_partition(space, config)
    return voronoi_partition(space, config)
