import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgw.bench import make_blobs
from qgw.errors import SizeCapError, ValidationError
from qgw.gw import GwConfig, gw_loss, gw_loss_brute, solve_fgw
from qgw.partition import PartitionConfig, voronoi_partition
from qgw.pipeline import (QgwConfig, argmax_match, blend_plans, densify_small, expand_row,
                          local_linear_match, match_qfgw, match_qgw)
from qgw.spaces import (BlockRadialProfile, PointedPartition, build_from_graph,
                        build_from_points, radial_profiles)
from qgw.transport import Atoms1D, exact_ot_small, solve_1d_ot


def _profile(radii, masses, rep=0):
    radii = np.asarray(radii, float)
    return BlockRadialProfile(0, np.arange(radii.size), radii, np.asarray(masses, float), rep)


def _pair(seed, n=40, m=6, d=2, graph=False):
    rng = np.random.default_rng(seed)
    if graph:
        edges = [(i, int(rng.integers(0, i)), float(rng.uniform(0.5, 2))) for i in range(1, n)]
        X = build_from_graph(edges, n=n)
        Y = build_from_graph(edges, n=n)
    else:
        X = build_from_points(rng.normal(size=(n, d)), weights=rng.uniform(0.2, 1, n))
        Y = build_from_points(rng.normal(size=(n + 3, d)))
    PX = voronoi_partition(X, PartitionConfig(m=m, seed=seed))
    PY = voronoi_partition(Y, PartitionConfig(m=m, seed=seed + 1))
    return X, PX, Y, PY


def test_singleton_blocks():
    plan, cost = local_linear_match(_profile([0], [1]), _profile([0], [1]))
    assert plan.triplets() == [(0, 0, 1.0)] and cost == 0.0


def test_identical_profiles_cost_zero():
    p = _profile([0, 1.5, 0.5, 1.5], [0.1, 0.2, 0.3, 0.4])
    plan, cost = local_linear_match(p, p)
    assert cost == 0.0
    assert np.allclose(plan.row_sums(), p.masses) and np.allclose(plan.col_sums(), p.masses)


def test_three_vs_two_radii_hand_example():
    px = _profile([0, 1, 2], [1 / 3] * 3)
    py = _profile([0, 2], [0.5, 0.5])
    plan, cost = local_linear_match(px, py)
    got = {(i, j): w for i, j, w in plan.triplets()}
    expect = {(0, 0): 1 / 3, (1, 0): 1 / 6, (1, 1): 1 / 6, (2, 1): 1 / 3}
    assert got.keys() == expect.keys()
    assert all(abs(got[k] - expect[k]) < 1e-15 for k in expect)
    assert cost == pytest.approx(1 / 3, abs=1e-15)
    lp_cost = exact_ot_small((px.radii[:, None] - py.radii[None]) ** 2, px.masses, py.masses)[1]
    assert lp_cost == pytest.approx(1 / 3, abs=1e-12)


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_local_match_equals_lp_on_radial_cost(kx, ky, seed):
    rng = np.random.default_rng(seed)
    X = build_from_points(rng.normal(size=(kx, 2)), weights=rng.uniform(0.1, 1, kx))
    Y = build_from_points(rng.normal(size=(ky, 3)), weights=rng.uniform(0.1, 1, ky))
    px = radial_profiles(X, PointedPartition.from_labels(np.zeros(kx), [int(rng.integers(kx))], X.measure))[0]
    py = radial_profiles(Y, PointedPartition.from_labels(np.zeros(ky), [int(rng.integers(ky))], Y.measure))[0]
    plan, cost = local_linear_match(px, py)
    cost_matrix = (px.radii[:, None] - py.radii[None, :]) ** 2
    assert abs(cost - exact_ot_small(cost_matrix, px.masses, py.masses)[1]) <= 1e-9
    assert plan.toarray()[px.rep_position, py.rep_position] > 0


def test_representative_pair_gets_mass_under_ties():
    # Several zero radii: the representative still leads.
    px = _profile([0, 0, 0, 1], [0.25] * 4, rep=2)
    py = _profile([0, 0, 1], [1 / 3] * 3, rep=1)
    plan, _ = local_linear_match(px, py)
    assert plan.toarray()[2, 1] > 0


def test_self_match_recovers_identity():
    rng = np.random.default_rng(3)
    X = build_from_points(rng.normal(size=(50, 2)))
    P = voronoi_partition(X, PartitionConfig(m=8, seed=2))
    qc, report = match_qgw(X, P, X, P, QgwConfig(gw=GwConfig(init="identity_if_square")))
    assert np.array_equal(qc.argmax_all(), np.arange(50))
    assert report.full_loss == 0.0
    row = expand_row(qc, 7)
    assert row.targets.tolist() == [7] and row.normalized.tolist() == [1.0]
    D = densify_small(qc)
    assert np.count_nonzero(D - np.diag(np.diag(D))) == 0
    assert np.allclose(np.diag(D), X.measure, atol=1e-15)


def test_single_block_each_side_is_one_local_match():
    rng = np.random.default_rng(4)
    X = build_from_points(rng.normal(size=(9, 2)))
    Y = build_from_points(rng.normal(size=(7, 2)))
    PX = PointedPartition.from_labels(np.zeros(9), [3], X.measure)
    PY = PointedPartition.from_labels(np.zeros(7), [5], Y.measure)
    qc, _ = match_qgw(X, PX, Y, PY)
    assert np.array_equal(qc.global_plan, [[1.0]])
    px, py = radial_profiles(X, PX)[0], radial_profiles(Y, PY)[0]
    direct, _ = solve_1d_ot(Atoms1D(px.radii, px.masses), Atoms1D(py.radii, py.masses), 3, 5)
    assert np.array_equal(qc.densify(), direct.toarray())


def test_six_point_marginals_and_row_expansion():
    X, PX, Y, PY = _pair(11, n=6, m=2)
    qc, _ = match_qgw(X, PX, Y, PY)
    D = densify_small(qc)
    assert np.allclose(D.sum(1), X.measure, atol=1e-10, rtol=0)
    assert np.allclose(D.sum(0), Y.measure, atol=1e-10, rtol=0)
    rebuilt = np.zeros_like(D)
    for x in range(X.n):
        row = expand_row(qc, x)
        rebuilt[x, row.targets] = row.raw
        assert abs(row.raw.sum() - X.measure[x]) < 1e-12
        assert abs(row.normalized.sum() - 1) < 1e-12
        assert argmax_match(qc, x) == int(np.argmax(D[x]))
    assert np.abs(rebuilt - D).max() <= 1e-12


@settings(max_examples=30)
@given(st.integers(2, 60), st.integers(0, 2**31 - 1), st.booleans(), st.booleans())
def test_quantization_coupling_invariants(n, seed, graph, entropic):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, n + 1))
    X, PX, Y, PY = _pair(seed, n=n, m=m, graph=graph)
    cfg = QgwConfig(gw=GwConfig(inner="entropic" if entropic else "exact"))
    qc, report = match_qgw(X, PX, Y, PY, cfg)
    D = qc.densify()
    assert np.allclose(D.sum(1), X.measure, atol=1e-8, rtol=0)
    assert np.allclose(D.sum(0), Y.measure, atol=1e-8, rtol=0)
    assert set(qc.locals) == {tuple(pq) for pq in np.argwhere(qc.global_plan > 0)}
    bound = 0
    for (p, q), plan in qc.locals.items():
        mx = X.measure[PX.blocks[p]] / PX.block_measure[p]
        my = Y.measure[PY.blocks[q]] / PY.block_measure[q]
        assert np.allclose(plan.row_sums(), mx, atol=1e-9)
        assert np.allclose(plan.col_sums(), my, atol=1e-9)
        rx, ry = PX.positions[PX.representatives[p]], PY.positions[PY.representatives[q]]
        assert plan.toarray()[rx, ry] > 0
        bound += PX.blocks[p].size + PY.blocks[q].size - 1
    assert qc.nnz() <= bound
    assert abs(qc.global_plan.sum() - 1) < 1e-12
    assert report.full_loss == pytest.approx(gw_loss(X.distance_matrix(), Y.distance_matrix(), D),
                                              rel=1e-9, abs=1e-12)


def test_densified_loss_matches_brute_on_small_spaces():
    for seed in range(10):
        X, PX, Y, PY = _pair(seed, n=10, m=3)
        qc, _ = match_qgw(X, PX, Y, PY)
        D = densify_small(qc)
        dX, dY = X.distance_matrix(), Y.distance_matrix()
        assert gw_loss(dX, dY, D) >= 0
        if D.size <= 200:
            assert abs(gw_loss(dX, dY, D) - gw_loss_brute(dX, dY, D)) <= 1e-10


def test_argmax_ties_go_to_lowest_target():
    X = build_from_points([[0.0, 0.0]])
    Y = build_from_points([[0.0], [0.0], [0.0]])
    PX = PointedPartition.identity(X.measure)
    PY = PointedPartition.from_labels([0, 0, 0], [2], Y.measure)
    qc, _ = match_qgw(X, PX, Y, PY)
    assert np.allclose(expand_row(qc, 0).normalized, 1 / 3)
    assert argmax_match(qc, 0) == 0
    assert qc.argmax_all().tolist() == [0]


def test_singleton_row():
    X = build_from_points([[1.0]])
    P = PointedPartition.identity(X.measure)
    qc, _ = match_qgw(X, P, X, P)
    row = expand_row(qc, 0)
    assert row.targets.tolist() == [0] and row.raw.tolist() == [1.0]


def test_threads_do_not_change_result():
    X, PX, Y, PY = _pair(21, n=200, m=30)
    a, _ = match_qgw(X, PX, Y, PY, QgwConfig(workers=1))
    b, _ = match_qgw(X, PX, Y, PY, QgwConfig(workers=4))
    assert np.array_equal(a.global_plan, b.global_plan)
    assert list(a.locals) == list(b.locals)
    for k in a.locals:
        pa, pb = a.locals[k], b.locals[k]
        assert np.array_equal(pa.rows, pb.rows) and np.array_equal(pa.mass, pb.mass)


def test_report_fields():
    X, PX, Y, PY = _pair(5, n=60, m=8)
    PY2 = voronoi_partition(Y, PartitionConfig(m=9, seed=1))
    _, report = match_qgw(X, PX, Y, PY2)
    d = report.to_dict()
    assert d["schema_version"] == "1.0"
    assert d["metric_interpretation"] is False
    for key in ("global_loss", "full_loss", "q_source", "q_target", "eps_source", "eps_target",
                "thm3_bound", "chain_bound"):
        assert np.isfinite(d[key]) and d[key] >= 0
    assert "timings" not in report.to_dict(include_timings=False)


def test_dense_cap():
    X = build_from_points(np.zeros((1001, 1)) + np.arange(1001)[:, None])
    P = voronoi_partition(X, PartitionConfig(m=5, seed=0))
    qc, report = match_qgw(X, P, X, P, QgwConfig(full_loss_cap=1000))
    assert report.full_loss is None
    with pytest.raises(SizeCapError):
        qc.densify()


def test_config_validation():
    with pytest.raises(ValidationError):
        QgwConfig(alpha=1.5)
    with pytest.raises(ValidationError):
        QgwConfig(workers=0)


def test_partition_size_mismatch():
    X, PX, Y, PY = _pair(1, n=10, m=2)
    with pytest.raises(ValidationError):
        match_qgw(X, PY, Y, PY)


# --------------------------------------------------------------------------
# fused variant


def _features(seed, X, Y, dim=2):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(X.n, dim)), rng.normal(size=(Y.n, dim))


@given(st.integers(0, 2**31 - 1))
def test_fused_with_zero_weights_is_plain(seed):
    X, PX, Y, PY = _pair(seed % 1000, n=30, m=5)
    fx, fy = _features(seed, X, Y)
    a, ra = match_qgw(X, PX, Y, PY)
    b, rb = match_qfgw(X, PX, fx, Y, PY, fy)
    assert np.array_equal(a.global_plan, b.global_plan)
    for k in a.locals:
        assert np.array_equal(a.locals[k].rows, b.locals[k].rows)
        assert np.array_equal(a.locals[k].cols, b.locals[k].cols)
        assert np.array_equal(a.locals[k].mass, b.locals[k].mass)
    assert ra.full_loss == rb.full_loss


def test_beta_zero_keeps_radial_locals():
    X, PX, Y, PY = _pair(8, n=40, m=5)
    fx, fy = _features(8, X, Y)
    fused, _ = match_qfgw(X, PX, fx, Y, PY, fy, QgwConfig(alpha=0.5))
    prof_x, prof_y = radial_profiles(X, PX), radial_profiles(Y, PY)
    for (p, q), plan in fused.locals.items():
        ref, _ = local_linear_match(prof_x[p], prof_y[q])
        assert np.array_equal(plan.mass, ref.mass)


def test_alpha_one_global_step_is_feature_ot():
    X, PX, Y, PY = _pair(9, n=50, m=7)
    fx, fy = _features(9, X, Y)
    qc, _ = match_qfgw(X, PX, fx, Y, PY, fy, QgwConfig(alpha=1.0))
    rx, ry = fx[PX.representatives], fy[PY.representatives]
    M = ((rx[:, None] - ry[None]) ** 2).sum(-1)
    plan, _ = exact_ot_small(M, PX.block_measure, PY.block_measure)
    assert np.abs(qc.global_plan - plan).max() <= 1e-10


def test_beta_one_with_permuted_features_has_zero_feature_cost():
    rng = np.random.default_rng(2)
    X = build_from_points(rng.normal(size=(12, 2)))
    fx = rng.normal(size=(12, 3))
    perm = rng.permutation(12)
    Y = build_from_points(X.coords[perm])
    fy = fx[perm]
    PX = PointedPartition.from_labels(np.zeros(12), [0], X.measure)
    PY = PointedPartition.from_labels(np.zeros(12), [int(np.flatnonzero(perm == 0)[0])], Y.measure)
    qc, report = match_qfgw(X, PX, fx, Y, PY, fy, QgwConfig(beta=1.0))
    r, c, v = qc.triplets()
    assert float(np.sum(v * ((fx[r] - fy[c]) ** 2).sum(-1))) == 0.0
    assert report.local_feature_method == "exact"


def test_large_blocks_use_norm_profiles():
    rng = np.random.default_rng(0)
    X = build_from_points(rng.normal(size=(300, 2)))
    P = PointedPartition.from_labels(np.zeros(300), [0], X.measure)
    f = rng.normal(size=(300, 2))
    _, report = match_qfgw(X, P, f, X, P, f, QgwConfig(beta=0.5))
    assert report.local_feature_method == "norm-1d"


def test_blend_plans_mass():
    a = solve_1d_ot(Atoms1D([0, 1], [0.5, 0.5]), Atoms1D([0, 1], [0.5, 0.5]))[0]
    b = solve_1d_ot(Atoms1D([0, 1], [0.5, 0.5]), Atoms1D([1, 0], [0.5, 0.5]))[0]
    mix = blend_plans(a, b, 0.25)
    assert np.allclose(mix.toarray(), 0.75 * a.toarray() + 0.25 * b.toarray())
    assert blend_plans(a, b, 0.0) is a


def test_feature_dimension_mismatch():
    X, PX, Y, PY = _pair(1, n=10, m=2)
    with pytest.raises(ValidationError, match="dimension"):
        match_qfgw(X, PX, np.zeros((10, 2)), Y, PY, np.zeros((13, 3)))


def test_fgw_loss_reported_at_intermediate_alpha():
    X, PX, Y, PY = _pair(3, n=30, m=6)
    fx, fy = _features(3, X, Y)
    qc, report = match_qfgw(X, PX, fx, Y, PY, fy, QgwConfig(alpha=0.4, beta=0.3))
    D = qc.densify()
    assert np.allclose(D.sum(1), X.measure, atol=1e-8)
    assert report.method == "qfgw"


@pytest.mark.parametrize("seed", [101, 111])
def test_eccentricity_start_recovers_jittered_copy(seed):
    # data seeds where conditional gradient from the product start stalls
    rng = np.random.default_rng(seed)
    pts, _ = make_blobs(2000, rng)
    X = build_from_points(pts)
    perm = rng.permutation(2000)
    step = rng.normal(size=(2000, 2))
    step /= np.linalg.norm(step, axis=1, keepdims=True)
    Y = build_from_points(pts[perm] + step * rng.uniform(0, 0.01 * X.diameter(), size=(2000, 1)))
    PX = voronoi_partition(X, PartitionConfig(sample_fraction=0.5, seed=1))
    PY = voronoi_partition(Y, PartitionConfig(sample_fraction=0.5, seed=2))
    qc, _ = match_qgw(X, PX, Y, PY, QgwConfig(gw=GwConfig(init="eccentricity"), full_loss_cap=0))
    miss = np.linalg.norm(Y.coords[qc.argmax_all()] - Y.coords[np.argsort(perm)], axis=1)
    assert np.mean(miss <= 0.05 * Y.diameter()) >= 0.9
