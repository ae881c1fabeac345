import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mabsgd import metrics, model
from mabsgd.errors import InfiniteVarianceError
from mabsgd.model import Dataset, Loss, ProblemSpec
from mabsgd.verify import random_dataset, random_simplex

RIDGE = ProblemSpec(Loss.RIDGE)

simplex_st = st.integers(1, 12).flatmap(
    lambda n: st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)).map(
    lambda v: np.asarray(v) / np.sum(v))


def grid3(step):
    k = int(round(1 / step))
    return np.array([[i, j, k - i - j] for i in range(1, k) for j in range(1, k - i)], dtype=float) / k


class TestEffectiveVariance:
    def test_hand_value(self):
        assert metrics.effective_variance([1.0, 1.0], [0.5, 0.5]) == 4.0

    def test_zero_feedback(self):
        assert metrics.effective_variance([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]) == 0.0

    def test_infinite(self):
        with pytest.raises(InfiniteVarianceError):
            metrics.effective_variance([1.0, 1.0], [1.0, 0.0])

    def test_second_moment_identity(self, rng):
        # sum a/p equals E||g/(n p)||^2 for three outcomes
        g = rng.normal(size=(3, 2))
        p = random_simplex(rng, 3, 0.1)
        a = (g * g).sum(axis=1) / 9
        brute = sum(p[i] * np.sum((g[i] / (3 * p[i])) ** 2) for i in range(3))
        assert metrics.effective_variance(a, p) == pytest.approx(brute, rel=1e-12)

    @given(simplex_st, simplex_st, st.floats(0, 1), st.integers(0, 2**31))
    def test_convex_in_p(self, p1, p2, t, seed):
        if p1.size != p2.size:
            return
        a = np.random.default_rng(seed).random(p1.size)
        mix = t * p1 + (1 - t) * p2
        lhs = metrics.effective_variance(a, mix / mix.sum())
        rhs = t * metrics.effective_variance(a, p1) + (1 - t) * metrics.effective_variance(a, p2)
        assert lhs <= rhs * (1 + 1e-12) + 1e-12

    @given(simplex_st, st.integers(0, 2**31))
    def test_euler_identity(self, p, seed):
        a = np.random.default_rng(seed).random(p.size)
        assert p @ metrics.ve_gradient(a, p) == pytest.approx(-metrics.effective_variance(a, p), rel=1e-12)


class TestPseudoVariance:
    def test_single_point(self):
        data = Dataset.from_dense([[1.0, 2.0]], [3.0])
        rep = metrics.pseudo_variance(RIDGE, data, np.array([0.5, -1.0]), [1.0])
        assert rep.pseudo == pytest.approx(0.0, abs=1e-12)

    def test_brute_force(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 11))
            data = random_dataset(rng, n, 3, Loss.RIDGE)
            w = rng.normal(size=3)
            p = random_simplex(rng, n, 0.02)
            grad = model.full_gradient(RIDGE, data, w)
            gs = [model.sub_gradient(RIDGE, data.point(i), w).toarray(3) / (n * p[i]) for i in range(n)]
            brute = sum(p[i] * np.sum((gs[i] - grad) ** 2) for i in range(n))
            rep = metrics.pseudo_variance(RIDGE, data, w, p)
            assert rep.pseudo == pytest.approx(brute, rel=1e-10, abs=1e-12)
            assert rep.pseudo >= -1e-9 and rep.effective >= rep.centering - 1e-9

    def test_optimal_beats_uniform(self):
        data = Dataset.from_dense([[1.0], [2.0], [5.0]], [0.0, 0.0, 0.0])
        w = np.array([1.0])
        p, _ = metrics.optimal_stepwise_p(RIDGE, data, w)
        assert metrics.pseudo_variance(RIDGE, data, w, p).pseudo < \
            metrics.pseudo_variance(RIDGE, data, w, np.full(3, 1 / 3)).pseudo


class TestOptimalStepwise:
    def test_equal_norms(self):
        data = Dataset.from_dense([[1.0], [-1.0]], [0.0, 0.0])
        p, flag = metrics.optimal_stepwise_p(RIDGE, data, np.array([1.0]))
        np.testing.assert_allclose(p, 0.5)
        assert not flag

    def test_hand_norms(self):
        data = Dataset.from_dense([[1.0], [2.0], [3.0]], [0.0, 0.0, 0.0])
        p, _ = metrics.optimal_stepwise_p(RIDGE, data, np.array([1.0]))
        # gradient norms are ||x||^2 here: 1, 4, 9
        np.testing.assert_allclose(p, np.array([1, 4, 9]) / 14)

    def test_norms_one_two_three(self):
        # residual 1 on every point, so gradient norms equal ||x_i||
        data = Dataset.from_dense([[1.0], [2.0], [3.0]], [-1.0, -1.0, -1.0])
        p, _ = metrics.optimal_stepwise_p(RIDGE, data, np.array([0.0]))
        np.testing.assert_allclose(p, [1 / 6, 2 / 6, 3 / 6])

    def test_degenerate(self):
        data = Dataset.from_dense([[1.0], [2.0]], [0.0, 0.0])
        p, flag = metrics.optimal_stepwise_p(RIDGE, data, np.array([0.0]))
        assert flag
        np.testing.assert_allclose(p, 0.5)

    def test_beats_random_simplex(self, rng):
        data = random_dataset(rng, 6, 3, Loss.LOGISTIC)
        spec = ProblemSpec(Loss.LOGISTIC)
        w = rng.normal(size=3)
        a = model.gradient_norms(spec, data, w) ** 2 / 36
        p, _ = metrics.optimal_stepwise_p(spec, data, w)
        best = metrics.effective_variance(a, p)
        P = rng.dirichlet(np.ones(6), size=10_000)
        assert best <= np.min((a / P).sum(axis=1)) + 1e-9


class TestOptimalStatic:
    def test_hand_value(self):
        p, _ = metrics.optimal_static_p([[1.0, 4.0]])
        np.testing.assert_allclose(p, [1 / 3, 2 / 3])
        grid = np.linspace(1e-3, 1 - 1e-3, 999)
        obj = 1 / grid + 4 / (1 - grid)
        assert np.sum(np.array([1.0, 4.0]) / p) <= obj.min() + 1e-6

    def test_single_step_matches_stepwise_shape(self, rng):
        a = rng.random(5)
        p, _ = metrics.optimal_static_p(a[None, :])
        np.testing.assert_allclose(p, np.sqrt(a) / np.sqrt(a).sum())

    def test_beats_uniform(self, rng):
        hist = rng.random((10, 4))
        p, _ = metrics.optimal_static_p(hist)
        A = hist.sum(axis=0)
        assert np.sum(A / p) < np.sum(A * 4)

    def test_beats_grid_n3(self, rng):
        grid = grid3(1e-2)
        for _ in range(20):
            A = rng.random(3) ** 2
            p, _ = metrics.optimal_static_p(A)
            assert np.sum(A / p) <= np.min((A / grid).sum(axis=1)) + 1e-9


class TestRegretBound:
    def test_oracle_replay_matches(self, rng):
        a_hist = rng.random((50, 4)) * 1e-2
        p_star, _ = metrics.optimal_static_p(a_hist)
        rep = metrics.regret_bound_check(a_hist, np.tile(p_star, (50, 1)), a_hist.max(axis=0))
        assert rep.lhs == pytest.approx(rep.oracle)
        assert rep.satisfied

    def test_uniform_report_well_formed(self, rng):
        a_hist = np.zeros((30, 5))
        a_hist[:, 0] = 1.0
        rep = metrics.regret_bound_check(a_hist, np.full((30, 5), 0.2), np.ones(5))
        assert rep.lhs >= rep.oracle and rep.additive > 0
        assert not rep.precondition_ok  # 30 steps is below the horizon condition

    def test_additive_formula(self):
        assert metrics.regret_additive(10, 100, 2.0) == pytest.approx(50 * np.sqrt(1e5 * 100 * 2 * np.log(10)))


class TestLemma1:
    def test_equal_distributions(self, rng):
        a = rng.random(4)
        p = random_simplex(rng, 4, 0.1)
        assert metrics.lemma1_check(a, p, p, 0.5)

    def test_zeta_zero_is_convexity(self, rng):
        a = rng.random(5)
        p1, p2 = random_simplex(rng, 5, 0.05), random_simplex(rng, 5, 0.05)
        lhs, rhs = metrics.lemma1_sides(a, p1, p2, 0.0)
        v1, v2 = metrics.effective_variance(a, p1), metrics.effective_variance(a, p2)
        assert lhs == pytest.approx(v1 - v2)
        assert v2 >= v1 + (p2 - p1) @ metrics.ve_gradient(a, p1) - 1e-9

    @given(st.integers(1, 10), st.floats(-1, 1), st.integers(0, 2**31))
    def test_random_draws(self, n, zeta, seed):
        rng = np.random.default_rng(seed)
        a = rng.random(n)
        assert metrics.lemma1_check(a, random_simplex(rng, n, 0.05), random_simplex(rng, n, 0.05), zeta)
