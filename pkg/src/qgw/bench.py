"""Seeded benchmark suites.

``relerr``
    Pairs of random blob clouds; compares the quantized coupling with a dense
    GW reference plan through the relative error.
``scaling``
    Random planar clouds with ``m = ceil(N^(1/3))`` blocks; records wall time
    and the peak traced allocation of a full qGW run.

Blob clouds: 3 isotropic Gaussian clusters with unit standard deviation,
centres drawn uniformly from ``[0, 10]^2``, points split evenly.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time

import numpy as np

from .diagnostics import relative_error_from_losses
from .gw import GwConfig, gw_loss, gw_loss_sparse, solve_gw
from .memory import track_allocations
from .partition import PartitionConfig, voronoi_partition
from .pipeline import QgwConfig, match_qgw
from .spaces import build_from_points

COLUMNS = ["N", "method", "trial", "m", "loss", "relative_error", "seconds",
           "peak_values_allocated", "square_array_possible"]

BLOB_CLUSTERS = 3
BLOB_SPREAD = 1.0
BLOB_BOX = 10.0


def make_blobs(n: int, rng: np.random.Generator, n_clusters: int = BLOB_CLUSTERS,
               spread: float = BLOB_SPREAD, box: float = BLOB_BOX):
    """``n`` planar points and their cluster labels."""
    centers = rng.uniform(0.0, box, size=(n_clusters, 2))
    labels = np.arange(n) % n_clusters
    points = centers[labels] + rng.normal(scale=spread, size=(n, 2))
    return points, labels


def _child_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def relerr_suite(sizes, fracs=(0.5,), trials: int = 5, seed: int = 0, workers: int = 1):
    """One row per (N, trial, fraction)."""
    rows = []
    for n in sizes:
        for t in range(trials):
            rng = _child_rng(seed, n, t)
            X = build_from_points(make_blobs(n, rng)[0])
            Y = build_from_points(make_blobs(n, rng)[0])
            dX, dY = X.distance_matrix(force=True), Y.distance_matrix(force=True)
            ref = solve_gw(dX, dY, X.measure, Y.measure)
            loss_gw = gw_loss(dX, dY, ref.plan)
            loss_prod = gw_loss(dX, dY, np.outer(X.measure, Y.measure))
            for k, frac in enumerate(fracs):
                pseed = int(_child_rng(seed, n, t, k).integers(2**31))
                t0 = time.perf_counter()
                with track_allocations() as stats:
                    PX = voronoi_partition(X, PartitionConfig(sample_fraction=frac, seed=pseed))
                    PY = voronoi_partition(Y, PartitionConfig(sample_fraction=frac, seed=pseed + 1))
                    qc, _ = match_qgw(X, PX, Y, PY, QgwConfig(workers=workers, full_loss_cap=0))
                seconds = time.perf_counter() - t0
                r, c, v = qc.triplets()
                loss = gw_loss_sparse(dX, dY, r, c, v)
                rows.append({
                    "N": n, "method": f"qgw@{frac:g}", "trial": t, "m": PX.m, "loss": loss,
                    "relative_error": relative_error_from_losses(loss, loss_gw, loss_prod),
                    "seconds": seconds, "peak_values_allocated": stats.peak_values,
                    "square_array_possible": int(stats.could_hold_square(n, n)),
                })
    return rows


def _scaling_run(n: int, seed: int, workers: int):
    rng = _child_rng(seed, n)
    X = build_from_points(rng.random((n, 2)))
    Y = build_from_points(rng.random((n, 2)))
    m = math.ceil(n ** (1.0 / 3.0) - 1e-9)
    PX = voronoi_partition(X, PartitionConfig(m=m, seed=seed))
    PY = voronoi_partition(Y, PartitionConfig(m=m, seed=seed + 1))
    qc, report = match_qgw(X, PX, Y, PY, QgwConfig(workers=workers, full_loss_cap=0))
    return m, report


def scaling_suite(sizes, seed: int = 0, repeats: int = 3, workers: int = 1):
    """One row per N: median wall time over ``repeats`` untraced runs plus
    one traced run for the allocation peak. A small warm-up run comes first
    so one-off import and initialization costs are not timed."""
    rows = []
    if len(sizes):
        _scaling_run(64, seed, workers)
    for n in sizes:
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            m, report = _scaling_run(n, seed, workers)
            times.append(time.perf_counter() - t0)
        with track_allocations() as stats:
            _scaling_run(n, seed, workers)
        rows.append({
            "N": n, "method": "qgw", "trial": 0, "m": m, "loss": report.global_loss,
            "relative_error": "", "seconds": statistics.median(times),
            "peak_values_allocated": stats.peak_values,
            "square_array_possible": int(stats.could_hold_square(n, n)),
        })
    return rows


def rows_to_csv(rows, stream=None) -> str:
    buf = stream if stream is not None else io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue() if stream is None else ""
