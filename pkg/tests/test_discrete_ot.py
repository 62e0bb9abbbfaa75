import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subspace_ot.discrete_ot import (
    BarycentricMap,
    TransportPlan,
    barycentric_projection,
    discrete_mk,
    discrete_mk_details,
    empirical_mi_cross_cov,
    lifted_matching,
    ot_1d,
    ot_exact,
    sliced_w2,
)
from subspace_ot.errors import (
    DegenerateProjection,
    DimensionMismatch,
    EmptyInput,
    InfeasibleMarginals,
    SizeLimitExceeded,
    UnassignedComponent,
)
from subspace_ot.gauss_ot import mi_cross_cov
from subspace_ot.measures import DiscreteMeasure, Gaussian, LinearTransport, Subspace


def brute_force_perm(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))) / n


def assert_marginals(plan, mu, nu, tol=1e-8):
    np.testing.assert_allclose(plan.row_sums(), mu.weights, atol=tol)
    np.testing.assert_allclose(plan.col_sums(), nu.weights, atol=tol)


class TestPlan:
    def test_negative_mass_rejected(self):
        with pytest.raises(ValueError):
            TransportPlan.from_entries(2, 2, [0, 1], [0, 1], [0.5, -0.5])

    def test_duplicates_summed(self):
        p = TransportPlan.from_entries(2, 2, [0, 0, 1], [1, 1, 0], [0.25, 0.25, 0.5])
        np.testing.assert_allclose(p.dense(), [[0.0, 0.5], [0.5, 0.0]])
        assert p.support_size == 2


class TestOt1d:
    def test_brute_force_example(self):
        plan, cost = ot_1d([3.0, 1.0, 2.0], [10.0, 30.0, 20.0])
        assert cost == pytest.approx(378.0)
        c = (np.array([3.0, 1.0, 2.0])[:, None] - np.array([10.0, 30.0, 20.0])) ** 2
        assert cost == pytest.approx(brute_force_perm(c))
        assert sorted(plan.entries) == [(0, 1, pytest.approx(1 / 3)), (1, 0, pytest.approx(1 / 3)), (2, 2, pytest.approx(1 / 3))]

    def test_identical(self, rng):
        x = rng.standard_normal(7)
        plan, cost = ot_1d(x, x)
        assert cost == 0.0
        np.testing.assert_allclose(plan.dense(), np.eye(7) / 7)

    def test_split(self):
        plan, cost = ot_1d([0.0], [-1.0, 1.0], [1.0], [0.5, 0.5])
        assert cost == pytest.approx(1.0)
        np.testing.assert_allclose(plan.dense(), [[0.5, 0.5]])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            ot_1d([], [1.0])

    def test_bad_weights(self):
        with pytest.raises(InfeasibleMarginals):
            ot_1d([0.0, 1.0], [0.0], [-0.5, 1.5], [1.0])

    def test_support_bound(self, rng):
        wx, wy = rng.dirichlet(np.ones(9)), rng.dirichlet(np.ones(6))
        plan, _ = ot_1d(rng.standard_normal(9), rng.standard_normal(6), wx, wy)
        assert plan.support_size <= 9 + 6 - 1
        np.testing.assert_allclose(plan.row_sums(), wx, atol=1e-12)
        np.testing.assert_allclose(plan.col_sums(), wy, atol=1e-12)

    def test_ties_are_deterministic(self):
        p1, _ = ot_1d([1.0, 1.0, 0.0], [5.0, 5.0, 5.0])
        p2, _ = ot_1d([1.0, 1.0, 0.0], [5.0, 5.0, 5.0])
        assert p1.entries == p2.entries


class TestOtExact:
    def test_single(self):
        c = np.array([[2.5]])
        plan, cost = ot_exact(DiscreteMeasure(np.zeros((1, 1))), DiscreteMeasure(np.ones((1, 1))), c)
        assert cost == 2.5
        np.testing.assert_array_equal(plan.dense(), [[1.0]])

    def test_two_by_two(self):
        pts = np.zeros((2, 1))
        plan, cost = ot_exact(DiscreteMeasure(pts), DiscreteMeasure(pts), np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert cost == 0.0
        np.testing.assert_allclose(plan.dense(), np.eye(2) / 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        c = rng.uniform(0, 1, (5, 5))
        mu = DiscreteMeasure(np.zeros((5, 1)))
        plan, cost = ot_exact(mu, mu, c)
        assert cost == pytest.approx(brute_force_perm(c), abs=1e-12)
        assert plan.info["dual_gap"] <= 1e-6 * (1 + abs(cost))
        plan2, cost2 = ot_exact(mu, mu, c, method="assignment")
        assert cost2 == pytest.approx(cost, abs=1e-12)

    def test_general_marginals(self, rng):
        mu = DiscreteMeasure(rng.standard_normal((12, 3)), rng.dirichlet(np.ones(12)))
        nu = DiscreteMeasure(rng.standard_normal((9, 3)), rng.dirichlet(np.ones(9)))
        plan, cost = ot_exact(mu, nu)
        assert_marginals(plan, mu, nu)
        assert plan.support_size <= 12 + 9 - 1
        assert cost == pytest.approx(plan.cost(mu.points, nu.points))
        assert plan.info["dual_infeasibility"] <= 1e-8

    def test_size_limit(self, rng):
        mu = DiscreteMeasure(rng.standard_normal((10, 2)))
        with pytest.raises(SizeLimitExceeded):
            ot_exact(mu, mu, size_limit=99)

    def test_shape_mismatch(self, rng):
        mu = DiscreteMeasure(rng.standard_normal((3, 2)))
        with pytest.raises(DimensionMismatch):
            ot_exact(mu, mu, np.zeros((3, 4)))


class TestSliced:
    def test_equal(self, rng):
        mu = DiscreteMeasure(rng.standard_normal((20, 3)))
        assert sliced_w2(mu, mu, 50, seed=1) == 0.0

    def test_one_dimensional(self, rng):
        x, y = rng.standard_normal((15, 1)), rng.standard_normal((15, 1))
        _, c = ot_1d(x[:, 0], y[:, 0])
        assert sliced_w2(DiscreteMeasure(x), DiscreteMeasure(y), 7, seed=3) == pytest.approx(c, rel=1e-12)

    def test_translation(self, rng):
        x = rng.standard_normal((50, 2))
        v = np.array([1.0, 2.0])
        val = sliced_w2(DiscreteMeasure(x), DiscreteMeasure(x + v), 1000, seed=0)
        assert val == pytest.approx(v @ v / 2, rel=0.10)

    def test_deterministic(self, rng):
        mu, nu = DiscreteMeasure(rng.standard_normal((20, 3))), DiscreteMeasure(rng.standard_normal((20, 3)))
        assert sliced_w2(mu, nu, 30, seed=5) == sliced_w2(mu, nu, 30, seed=5)


class TestDiscreteMK:
    def test_identity(self, rng):
        mu = DiscreteMeasure(rng.standard_normal((16, 3)))
        plan, cost = discrete_mk(mu, mu, Subspace.canonical(3, 1))
        assert cost == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(plan.dense(), np.eye(16) / 16, atol=1e-14)

    def test_single_bin_couples_complement(self, rng):
        mu = DiscreteMeasure(rng.standard_normal((10, 2)))
        nu = DiscreteMeasure(rng.standard_normal((10, 2)))
        sub = Subspace.canonical(2, 1)
        res = discrete_mk_details(mu, nu, sub, bins=1)
        # one bin: the fiber coupling is OT on the complement coordinates alone
        _, perp_cost = ot_exact(DiscreteMeasure(mu.points[:, 1:]), DiscreteMeasure(nu.points[:, 1:]))
        e_part = res.plan.cost(mu.points[:, :1], nu.points[:, :1])
        assert res.plan.cost(mu.points[:, 1:], nu.points[:, 1:]) == pytest.approx(perp_cost, abs=1e-12)
        assert res.cost == pytest.approx(e_part + perp_cost, abs=1e-12)

    def test_marginal_equals_projected_plan(self):
        rng = np.random.default_rng(4)
        mu = DiscreteMeasure(rng.standard_normal((4, 2)))
        nu = DiscreteMeasure(rng.standard_normal((4, 2)))
        sub = Subspace.canonical(2, 1)
        res = discrete_mk_details(mu, nu, sub, bins=4)
        direct, _ = ot_1d(mu.points[:, 0], nu.points[:, 0])
        np.testing.assert_array_equal(res.plan.dense() > 0, direct.dense() > 0)
        np.testing.assert_allclose(res.plan.dense(), direct.dense(), atol=1e-15)

    @pytest.mark.parametrize("k", [1, 2])
    def test_feasible_and_dominated(self, rng, k):
        for _ in range(5):
            mu = DiscreteMeasure(rng.standard_normal((30, 3)), rng.dirichlet(np.ones(30)))
            nu = DiscreteMeasure(rng.standard_normal((25, 3)) + 1.0, rng.dirichlet(np.ones(25)))
            plan, cost = discrete_mk(mu, nu, Subspace.canonical(3, k))
            assert_marginals(plan, mu, nu)
            _, exact = ot_exact(mu, nu)
            assert cost >= exact - 1e-8
            assert cost == pytest.approx(plan.cost(mu.points, nu.points))

    def test_bins_partition_mass(self, rng):
        mu = DiscreteMeasure(rng.standard_normal((20, 3)))
        nu = DiscreteMeasure(rng.standard_normal((20, 3)))
        res = discrete_mk_details(mu, nu, Subspace.canonical(3, 1), bins=5)
        edges = res.partition.mass_edges
        np.testing.assert_allclose(np.diff(edges), 0.2, atol=1e-12)
        assert set(np.concatenate(res.partition.source_index)) == set(range(20))
        assert set(np.concatenate(res.partition.target_index)) == set(range(20))

    def test_full_fiber_cost_flag(self, rng):
        mu = DiscreteMeasure(rng.standard_normal((20, 3)))
        nu = DiscreteMeasure(rng.standard_normal((20, 3)))
        sub = Subspace.canonical(3, 1)
        plan, cost = discrete_mk(mu, nu, sub, bins=3, fiber_cost="full")
        assert_marginals(plan, mu, nu)
        assert cost == pytest.approx(plan.cost(mu.points, nu.points))

    def test_full_subspace(self, rng):
        mu = DiscreteMeasure(rng.standard_normal((8, 2)))
        nu = DiscreteMeasure(rng.standard_normal((8, 2)))
        _, cost = discrete_mk(mu, nu, Subspace.canonical(2, 2))
        assert cost == pytest.approx(ot_exact(mu, nu)[1], abs=1e-12)


class TestBarycentric:
    def test_single(self):
        t = LinearTransport(np.zeros(2), np.ones(2), np.array([[2.0, 0.0], [0.0, 3.0]]))
        f = barycentric_projection(TransportPlan.from_dense([[1.0]]), [[t]])
        np.testing.assert_allclose(f(np.array([[1.0, 1.0]]), 0), [[3.0, 4.0]])

    def test_diagonal_plan(self):
        ts = [LinearTransport.centered(np.eye(1) * s) for s in (2.0, 5.0)]
        f = barycentric_projection(TransportPlan.from_dense(np.diag([0.3, 0.7])), {(0, 0): ts[0], (1, 1): ts[1]})
        np.testing.assert_allclose(f(np.array([[1.0], [1.0]]), [0, 1]), [[2.0], [5.0]])

    def test_convex_combination(self, rng):
        x = rng.standard_normal((6, 2))
        ident = LinearTransport.centered(np.eye(2))
        shift = LinearTransport(np.zeros(2), np.full(2, 2.0), np.eye(2))
        f = barycentric_projection(TransportPlan.from_dense([[0.5, 0.5]]), [[ident, shift]])
        np.testing.assert_allclose(f(x, 0), x + 1.0, atol=1e-14)

    def test_callable_maps(self, rng):
        x = rng.standard_normal((4, 2))
        f = barycentric_projection(TransportPlan.from_dense([[0.5, 0.5]]), [[lambda z: z, lambda z: z + 2.0]])
        np.testing.assert_allclose(f(x, 0), x + 1.0)

    def test_zero_mass_row_is_identity(self, rng):
        x = rng.standard_normal((3, 2))
        t = LinearTransport.centered(2 * np.eye(2))
        f = BarycentricMap(np.array([[0.0, 0.0], [0.5, 0.5]]), {(1, 0): t, (1, 1): t})
        assert f.zero_mass_rows.tolist() == [0]
        np.testing.assert_allclose(f(x, 0), x)

    def test_missing_map(self):
        with pytest.raises(UnassignedComponent):
            barycentric_projection(TransportPlan.from_dense([[0.5, 0.5]]), {(0, 0): LinearTransport.centered(np.eye(1))})

    def test_bad_label(self):
        f = barycentric_projection(TransportPlan.from_dense([[1.0]]), [[LinearTransport.centered(np.eye(1))]])
        with pytest.raises(UnassignedComponent):
            f(np.zeros((1, 1)), 3)


A_DIAG = np.diag([4.0, 1.0])
B_DIAG = np.diag([9.0, 16.0])
E1 = Subspace.canonical(2, 1)


class TestEmpiricalMI:
    def test_full_space_isotropic(self):
        c = empirical_mi_cross_cov(np.eye(2), np.eye(2), Subspace.canonical(2, 2), 300, seed=0)
        # identical sample clouds are not used, so compare loosely to I
        np.testing.assert_allclose(c, np.eye(2), atol=0.15)

    def test_diagonal_example(self):
        target = mi_cross_cov(A_DIAG, B_DIAG, E1)
        np.testing.assert_allclose(target, np.diag([6.0, 0.0]), atol=1e-12)
        est = np.mean([empirical_mi_cross_cov(A_DIAG, B_DIAG, E1, 10000, seed=s) for s in range(10)], axis=0)
        assert abs(est[0, 0] - 6.0) <= 0.15
        assert abs(est[1, 1]) <= 0.15

    def test_single_sample(self):
        c = empirical_mi_cross_cov(A_DIAG, B_DIAG, E1, 1, seed=9)
        rng = np.random.default_rng(9)
        x = Gaussian.centered(A_DIAG).sample(1, rng)
        y = Gaussian.centered(B_DIAG).sample(1, rng)
        np.testing.assert_array_equal(c, x.T @ y)

    def test_deterministic(self):
        a = empirical_mi_cross_cov(A_DIAG, B_DIAG, E1, 200, seed=3)
        np.testing.assert_array_equal(a, empirical_mi_cross_cov(A_DIAG, B_DIAG, E1, 200, seed=3))

    def test_collision(self):
        x = np.array([[0.0, 1.0], [0.0, 2.0]])
        with pytest.raises(DegenerateProjection):
            lifted_matching(x, x, E1)

    def test_lifted_matching_k2(self, rng):
        x = rng.standard_normal((6, 3))
        s = lifted_matching(x, x[::-1], Subspace.canonical(3, 2))
        np.testing.assert_array_equal(s, np.arange(6)[::-1])

    @pytest.mark.slow
    def test_median_error_nonincreasing(self):
        target = mi_cross_cov(A_DIAG, B_DIAG, E1)
        medians = []
        for n in (100, 200, 400, 800, 1600, 3200, 6400):
            errs = [np.linalg.norm(empirical_mi_cross_cov(A_DIAG, B_DIAG, E1, n, seed=(s, n)) - target) for s in range(15)]
            medians.append(np.median(errs))
        assert all(b <= a for a, b in zip(medians, medians[1:])), medians


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_ot_1d_matches_exact(n, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    _, c1 = ot_1d(x, y)
    _, c2 = ot_exact(DiscreteMeasure(x[:, None]), DiscreteMeasure(y[:, None]))
    assert c1 == pytest.approx(c2, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(2, 10), st.integers(0, 2**31 - 1))
def test_ot_exact_permutation_invariance(n, m, seed):
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(rng.standard_normal((n, 2)), rng.dirichlet(np.ones(n)))
    nu = DiscreteMeasure(rng.standard_normal((m, 2)), rng.dirichlet(np.ones(m)))
    plan, cost = ot_exact(mu, nu)
    assert_marginals(plan, mu, nu)
    p, q = rng.permutation(n), rng.permutation(m)
    plan2, cost2 = ot_exact(
        DiscreteMeasure(mu.points[p], mu.weights[p]), DiscreteMeasure(nu.points[q], nu.weights[q])
    )
    assert cost2 == pytest.approx(cost, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_discrete_mk_bins_n_marginal(n, seed):
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(rng.standard_normal((n, 2)))
    nu = DiscreteMeasure(rng.standard_normal((n, 2)))
    res = discrete_mk_details(mu, nu, E1, bins=n)
    direct, _ = ot_1d(mu.points[:, 0], nu.points[:, 0])
    np.testing.assert_allclose(res.plan.dense(), direct.dense(), atol=1e-14)
