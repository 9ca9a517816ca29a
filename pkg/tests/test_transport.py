import itertools

import numpy as np
import pytest
from hypothesis import given
from scipy.special import expit
from hypothesis import strategies as st

from qgw.errors import SizeCapError, UnbalancedError, ValidationError
from qgw.transport import (Atoms1D, exact_ot, exact_ot_small, round_to_marginals, sinkhorn,
                           solve_1d_ot)


def _random_atoms(rng, k, integer=False):
    pos = rng.integers(0, 4, k).astype(float) if integer else rng.normal(size=k)
    mass = rng.uniform(0.05, 1.0, k)
    return Atoms1D(pos, mass / mass.sum())


def _sq_cost(a, b):
    return (a.positions[:, None] - b.positions[None, :]) ** 2


def _vertex_oracle_2x2(cost, mu, nu):
    # Couplings of 2x2 marginals form a segment parametrized by P[0,0].
    lo, hi = max(0.0, mu[0] - nu[1]), min(mu[0], nu[0])
    best = np.inf
    for t in (lo, hi):
        P = np.array([[t, mu[0] - t], [nu[0] - t, mu[1] - nu[0] + t]])
        best = min(best, float(np.sum(P * cost)))
    return best


def test_identical_atoms():
    a = Atoms1D([0, 1], [0.5, 0.5])
    plan, cost = solve_1d_ot(a, a)
    assert plan.triplets() == [(0, 0, 0.5), (1, 1, 0.5)]
    assert cost == 0.0


def test_single_target():
    plan, cost = solve_1d_ot(Atoms1D([0, 2], [0.5, 0.5]), Atoms1D([1], [1.0]))
    assert plan.triplets() == [(0, 0, 0.5), (1, 0, 0.5)]
    assert cost == 1.0


def test_northwest_corner_hand_example():
    a = Atoms1D([0, 1], [0.3, 0.7])
    b = Atoms1D([0, 1], [0.6, 0.4])
    plan, cost = solve_1d_ot(a, b)
    assert [(i, j) for i, j, _ in plan.triplets()] == [(0, 0), (1, 0), (1, 1)]
    assert np.allclose(plan.mass, [0.3, 0.3, 0.4], atol=1e-15)
    assert cost == pytest.approx(0.3, abs=1e-15)
    _, lp_cost = exact_ot_small(_sq_cost(a, b), a.masses, b.masses)
    assert lp_cost == pytest.approx(0.3, abs=1e-12)


def test_unbalanced_rejected():
    with pytest.raises(UnbalancedError, match="unbalanced"):
        solve_1d_ot(Atoms1D([0], [1.0]), Atoms1D([0, 1], [0.5, 0.6]))


def test_ties_follow_index_order_and_first():
    a = Atoms1D([1.0, 0.0, 0.0], [1 / 3] * 3)
    b = Atoms1D([0.0, 0.0, 1.0], [1 / 3] * 3)
    plan, _ = solve_1d_ot(a, b)
    assert sorted(zip(plan.rows.tolist(), plan.cols.tolist())) == [(0, 2), (1, 0), (2, 1)]
    plan, _ = solve_1d_ot(a, b, first_a=2, first_b=1)
    assert (2, 1) in set(zip(plan.rows.tolist(), plan.cols.tolist()))


def test_exact_ot_small_examples():
    mu = np.full(3, 1 / 3)
    plan, cost = exact_ot_small(1 - np.eye(3), mu, mu)
    assert cost == 0.0
    assert np.count_nonzero(plan - np.diag(np.diag(plan))) == 0
    plan, cost = exact_ot_small([[0, 2], [2, 0]], [0.3, 0.7], [0.6, 0.4])
    assert np.allclose(plan, [[0.3, 0], [0.3, 0.4]], atol=1e-12)
    assert cost == pytest.approx(0.6, abs=1e-12)


def test_exact_ot_small_size_cap():
    with pytest.raises(SizeCapError):
        exact_ot_small(np.zeros((101, 100)), np.full(101, 1 / 101), np.full(100, 0.01))


@given(st.integers(0, 2**31 - 1))
def test_lp_matches_2x2_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    cost = rng.uniform(0, 5, (2, 2))
    mu = rng.dirichlet([1, 1])
    nu = rng.dirichlet([1, 1])
    _, c = exact_ot_small(cost, mu, nu)
    assert c == pytest.approx(_vertex_oracle_2x2(cost, mu, nu), abs=1e-10)


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1), st.booleans())
def test_1d_cost_equals_lp(ka, kb, seed, integer):
    rng = np.random.default_rng(seed)
    a, b = _random_atoms(rng, ka, integer), _random_atoms(rng, kb, integer)
    plan, cost = solve_1d_ot(a, b)
    _, lp = exact_ot_small(_sq_cost(a, b), a.masses, b.masses)
    assert abs(cost - lp) <= 1e-9
    assert len(plan) <= ka + kb - 1
    assert np.all(plan.mass > 0)
    assert np.allclose(plan.row_sums(), a.masses, atol=1e-10, rtol=0)
    assert np.allclose(plan.col_sums(), b.masses, atol=1e-10, rtol=0)


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_1d_support_is_monotone(ka, kb, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_atoms(rng, ka), _random_atoms(rng, kb)
    plan, _ = solve_1d_ot(a, b)
    pa, pb = a.positions[plan.rows], b.positions[plan.cols]
    for s, t in itertools.combinations(range(len(plan)), 2):
        if pa[s] < pa[t]:
            assert pb[s] <= pb[t]
        if pa[t] < pa[s]:
            assert pb[t] <= pb[s]


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_network_simplex_matches_lp_oracle(n, k, seed):
    rng = np.random.default_rng(seed)
    cost = rng.uniform(0, 3, (n, k))
    mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(k))
    p1, c1 = exact_ot(cost, mu, nu)
    p2, c2 = exact_ot_small(cost, mu, nu)
    assert abs(c1 - c2) <= 1e-9
    for p in (p1, p2):
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) <= 1e-10
        assert np.count_nonzero(p > 1e-15) <= n + k - 1


def test_sinkhorn_trivial_cases():
    res = sinkhorn([[3.0]], [1.0], [1.0])
    assert res.converged and np.allclose(res.plan, [[1.0]])
    res = sinkhorn(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], epsilon=1.0)
    assert np.allclose(res.plan, 0.25, atol=1e-12)


@pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-3])
def test_sinkhorn_small_epsilon_concentrates_on_diagonal(eps):
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    res = sinkhorn(cost, [0.5, 0.5], [0.5, 0.5], epsilon=eps)
    assert res.converged
    # fixed point of the 2x2 scaling: off-diagonal = 0.5 / (1 + e^{1/eps})
    off = 0.5 * expit(-1.0 / eps)
    assert res.plan[0, 1] == pytest.approx(off, abs=1e-9)
    assert float(np.sum(res.plan * cost)) <= 2 * off + 1e-9


@given(st.integers(2, 15), st.integers(2, 15), st.integers(0, 2**31 - 1),
       st.sampled_from([1e-3, 1e-2, 1e-1, 1.0]))
def test_sinkhorn_marginals_when_converged(n, k, seed, eps):
    rng = np.random.default_rng(seed)
    cost = rng.uniform(0, 1, (n, k))
    mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(k))
    res = sinkhorn(cost, mu, nu, epsilon=eps, tol=1e-9)
    if res.converged:
        assert np.abs(res.plan.sum(axis=1) - mu).sum() < 1e-9
        assert np.allclose(res.plan.sum(axis=0), nu, atol=1e-9)
    assert np.all(res.plan >= 0)


def test_sinkhorn_reports_non_convergence():
    rng = np.random.default_rng(0)
    cost = rng.uniform(0, 1, (20, 20))
    mu = rng.dirichlet(np.ones(20))
    res = sinkhorn(cost, mu, np.full(20, 0.05), epsilon=1e-4, max_iter=5, tol=1e-14)
    assert not res.converged
    assert res.n_iter == 5


def test_sinkhorn_rejects_bad_epsilon():
    with pytest.raises(ValidationError):
        sinkhorn(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], epsilon=0.0)


@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_rounding_restores_marginals(n, k, seed):
    rng = np.random.default_rng(seed)
    mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(k))
    noisy = np.outer(mu, nu) * rng.uniform(0.8, 1.2, (n, k))
    out = round_to_marginals(noisy, mu, nu)
    assert np.all(out >= 0)
    assert np.allclose(out.sum(1), mu, atol=1e-14)
    assert np.allclose(out.sum(0), nu, atol=1e-14)
    violation = np.abs(noisy.sum(1) - mu).sum() + np.abs(noisy.sum(0) - nu).sum()
    assert np.abs(out - noisy).sum() <= 2 * violation + 1e-12
