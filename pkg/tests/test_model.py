import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mabsgd import model
from mabsgd.errors import ConfigurationError, ContractViolation
from mabsgd.model import DataPoint, Dataset, Loss, ProblemSpec, Regularizer
from mabsgd.verify import fd_gradient, random_dataset

RIDGE = ProblemSpec(Loss.RIDGE)
LOGISTIC = ProblemSpec(Loss.LOGISTIC)
HINGE = ProblemSpec(Loss.SQUARED_HINGE)


def pt(x, y):
    return DataPoint.from_dense(np.asarray(x, dtype=float), y)


def scalar_loss(loss, z, y):
    # independent scalar re-implementation
    if loss == Loss.LOGISTIC:
        return math.log1p(math.exp(-y * z)) if -y * z < 30 else -y * z
    if loss == Loss.SQUARED_HINGE:
        return max(1.0 - y * z, 0.0) ** 2
    return 0.5 * (z - y) ** 2


class TestSubCost:
    def test_logistic_zero_features(self):
        assert model.sub_cost(LOGISTIC, pt([0.0, 0.0], 1.0), np.array([3.0, -1.0])) == pytest.approx(math.log(2))

    def test_ridge_exact_fit(self):
        assert model.sub_cost(RIDGE, pt([1.0, 0.0], 3.0), np.array([3.0, 5.0])) == 0.0

    def test_squared_hinge_hand_value(self):
        assert model.sub_cost(HINGE, pt([2.0], 1.0), np.array([0.25])) == pytest.approx(0.25)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            model.sub_cost(RIDGE, pt([1.0, 2.0, 3.0], 1.0), np.zeros(2))

    @given(st.sampled_from(list(Loss)), st.floats(-20, 20), st.sampled_from([-1.0, 1.0]))
    def test_matches_scalar_oracle(self, loss, z, y):
        p = pt([1.0], y)
        assert model.sub_cost(ProblemSpec(loss), p, np.array([z])) == pytest.approx(scalar_loss(loss, z, y), rel=1e-12, abs=1e-12)

    def test_logistic_is_stable_for_large_margins(self):
        v = model.sub_cost(LOGISTIC, pt([1.0], 1.0), np.array([-800.0]))
        assert v == pytest.approx(800.0)


class TestSubGradient:
    def test_ridge_zero_residual(self):
        g = model.sub_gradient(RIDGE, pt([1.0, 0.0], 3.0), np.array([3.0, 5.0]))
        assert np.all(g.toarray(2) == 0.0)

    def test_logistic_at_origin(self):
        g = model.sub_gradient(LOGISTIC, pt([1.0], 1.0), np.array([0.0]))
        np.testing.assert_allclose(g.toarray(1), [-0.5])

    def test_hinge_inactive(self):
        g = model.sub_gradient(HINGE, pt([1.0], 1.0), np.array([2.0]))
        np.testing.assert_array_equal(g.toarray(1), [0.0])

    def test_support_is_subset(self):
        p = DataPoint(np.array([1, 4]), np.array([2.0, -1.0]), 1.0)
        g = model.sub_gradient(LOGISTIC, p, np.ones(6))
        assert set(g.indices.tolist()) <= {1, 4}

    @given(st.sampled_from(list(Loss)), st.integers(0, 2**32 - 1))
    def test_finite_differences(self, loss, seed):
        rng = np.random.default_rng(seed)
        spec = ProblemSpec(loss)
        d = int(rng.integers(1, 5))
        x, w = rng.normal(size=d), rng.normal(size=d)
        y = float(rng.normal()) if loss == Loss.RIDGE else float(rng.choice([-1.0, 1.0]))
        p = pt(x, y)
        if loss == Loss.SQUARED_HINGE and abs(1 - y * p.dot(w)) < 1e-3:
            return
        got = model.sub_gradient(spec, p, w).toarray(d)
        want = fd_gradient(spec, p, w)
        assert np.linalg.norm(got - want) <= 1e-5 * max(np.linalg.norm(want), 1.0)


class TestFullCostAndGradient:
    def test_single_point(self):
        spec = ProblemSpec(Loss.LOGISTIC, "l1", 0.3)
        data = Dataset.from_dense([[1.0, -2.0]], [1.0])
        w = np.array([0.5, 0.25])
        assert model.full_cost(spec, data, w) == pytest.approx(
            model.sub_cost(spec, data.point(0), w) + 0.3 * 0.75)

    def test_zero_gradients(self):
        data = Dataset.from_dense([[1.0, 0.0], [0.0, 2.0]], [1.0, 4.0])
        np.testing.assert_allclose(model.full_gradient(RIDGE, data, np.array([1.0, 2.0])), 0.0)

    def test_two_point_ridge_mean(self):
        X = np.array([[1.0, 2.0], [-1.0, 0.5]])
        y = np.array([0.3, -2.0])
        w = np.array([0.7, -0.1])
        data = Dataset.from_dense(X, y)
        brute = sum((X[i] @ w - y[i]) * X[i] for i in range(2)) / 2
        np.testing.assert_allclose(model.full_gradient(RIDGE, data, w), brute, rtol=1e-14)

    def test_dimension_mismatch(self):
        data = Dataset.from_dense([[1.0, 0.0]], [1.0])
        with pytest.raises(ContractViolation):
            model.full_cost(RIDGE, data, np.zeros(3))


class TestRegularizer:
    def test_l1_sign_convention(self):
        spec = ProblemSpec(Loss.RIDGE, "l1", 1.0)
        np.testing.assert_array_equal(model.reg_subgradient(spec, np.array([-2.0, 0.0, 3.0])), [-1.0, 0.0, 1.0])

    def test_l2_identity(self):
        spec = ProblemSpec(Loss.RIDGE, "l2", 1.0)
        np.testing.assert_array_equal(model.reg_subgradient(spec, np.array([1.0, 2.0])), [1.0, 2.0])

    def test_none_zero(self):
        np.testing.assert_array_equal(model.reg_subgradient(RIDGE, np.array([5.0, -1.0])), [0.0, 0.0])

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigurationError):
            ProblemSpec(Loss.RIDGE, "l1", -1.0)

    def test_parse_aliases(self):
        assert Loss.parse("squared-hinge") is Loss.SQUARED_HINGE
        assert Regularizer.parse(None) is Regularizer.NONE
        with pytest.raises(ConfigurationError):
            Loss.parse("hinge3")


class TestProx:
    def test_soft_threshold(self):
        spec = ProblemSpec(Loss.RIDGE, "l1", 1.0)
        np.testing.assert_allclose(model.prox(spec, np.array([1.2, -0.3, 0.5]), 0.5), [0.7, 0.0, 0.0])

    def test_zero_lambda_identity(self):
        spec = ProblemSpec(Loss.RIDGE, "l1", 0.0)
        v = np.array([1.0, -2.0])
        np.testing.assert_array_equal(model.prox(spec, v, 3.0), v)

    def test_l2_closed_form(self):
        spec = ProblemSpec(Loss.RIDGE, "l2", 1.0)
        np.testing.assert_allclose(model.prox(spec, np.array([2.0]), 1.0), [1.0])

    def test_step_must_be_positive(self):
        with pytest.raises(ContractViolation):
            model.prox(RIDGE, np.zeros(1), 0.0)

    @given(st.sampled_from(["l1", "l2", "none"]), st.floats(0, 3), st.floats(0.01, 3),
           st.floats(-5, 5))
    def test_one_dimensional_grid_oracle(self, reg, lam, step, v):
        spec = ProblemSpec(Loss.RIDGE, reg, lam)
        grid = np.linspace(v - 20, v + 20, 400_001)
        r = {"l1": np.abs(grid), "l2": 0.5 * grid ** 2, "none": 0.0 * grid}[reg]
        obj = lam * r + (grid - v) ** 2 / (2 * step)
        z = model.prox(spec, np.array([v]), step)[0]
        assert abs(z - grid[np.argmin(obj)]) <= 2e-4


class TestConvexityAndSmoothness:
    @given(st.sampled_from(list(Loss)), st.integers(0, 2**32 - 1))
    def test_convexity(self, loss, seed):
        rng = np.random.default_rng(seed)
        spec = ProblemSpec(loss)
        x = rng.normal(size=3)
        p = pt(x, float(rng.choice([-1.0, 1.0])))
        w1, w2 = rng.normal(size=3) * 3, rng.normal(size=3) * 3
        t = float(rng.random())
        lhs = model.sub_cost(spec, p, t * w1 + (1 - t) * w2)
        assert lhs <= t * model.sub_cost(spec, p, w1) + (1 - t) * model.sub_cost(spec, p, w2) + 1e-12

    @given(st.sampled_from(list(Loss)), st.integers(0, 2**32 - 1))
    def test_smoothness_upper_bound(self, loss, seed):
        rng = np.random.default_rng(seed)
        spec = ProblemSpec(loss)
        x = rng.normal(size=3)
        p = pt(x, float(rng.choice([-1.0, 1.0])))
        data = Dataset.from_points([p], d=3)
        L = model.smoothness_profile(spec, data).per_point[0]
        a, b = rng.normal(size=3) * 2, rng.normal(size=3) * 2
        g = model.sub_gradient(spec, p, a).toarray(3)
        rhs = model.sub_cost(spec, p, a) + g @ (b - a) + L * (b - a) @ (b - a)
        assert model.sub_cost(spec, p, b) <= rhs + 1e-9


class TestSmoothnessProfile:
    def test_identical_rows(self):
        data = Dataset.from_dense(np.ones((4, 3)), np.ones(4))
        assert model.smoothness_profile(RIDGE, data).tau == pytest.approx(1.0)

    def test_hand_ratio(self):
        data = Dataset.from_dense([[1.0, 0.0], [1.0, math.sqrt(2.0)]], [0.0, 0.0])
        prof = model.smoothness_profile(RIDGE, data)
        assert prof.tau == pytest.approx(1.5)
        assert prof.max == pytest.approx(3.0) and prof.mean == pytest.approx(2.0)

    def test_loss_factors(self):
        data = Dataset.from_dense([[2.0, 0.0]], [1.0])
        assert model.smoothness_profile(LOGISTIC, data).per_point[0] == pytest.approx(1.0)
        assert model.smoothness_profile(HINGE, data).per_point[0] == pytest.approx(8.0)

    def test_scaling_a_row_raises_tau(self, rng):
        X = rng.normal(size=(10, 3))
        y = rng.normal(size=10)
        before = model.smoothness_profile(RIDGE, Dataset.from_dense(X, y))
        X2 = X.copy()
        X2[0] *= 10
        after = model.smoothness_profile(RIDGE, Dataset.from_dense(X2, y))
        assert after.per_point[0] == pytest.approx(100 * before.per_point[0])
        assert after.tau > before.tau


class TestGradientBound:
    def test_logistic(self):
        assert model.gradient_bound(LOGISTIC, pt([3.0, 4.0], 1.0)) == pytest.approx(5.0)

    def test_zero_vector(self):
        assert model.gradient_bound(RIDGE, pt([0.0, 0.0], 0.0)) == 0.0

    def test_ridge_radius(self):
        assert model.gradient_bound(RIDGE, pt([1.0], 0.0), radius=2.0) == pytest.approx(2.0)

    def test_missing_radius(self):
        spec = ProblemSpec(Loss.RIDGE, radius=None)
        with pytest.raises(ConfigurationError):
            model.gradient_bound(spec, pt([1.0], 0.0))

    @pytest.mark.parametrize("loss", list(Loss))
    def test_soundness_inside_radius(self, loss, rng):
        spec = ProblemSpec(loss, radius=3.0)
        data = random_dataset(rng, 6, 4, loss)
        G = model.gradient_bounds(spec, data)
        for _ in range(10_000 // 50):
            W = rng.normal(size=(50, 4))
            W *= (3.0 * rng.random((50, 1)) ** 0.25) / np.linalg.norm(W, axis=1, keepdims=True)
            for w in W:
                assert np.all(model.gradient_norms(spec, data, w) <= G * (1 + 1e-12))
        for i in range(data.n):
            assert model.gradient_bound(spec, data.point(i)) == pytest.approx(G[i])


class TestDataset:
    def test_points_roundtrip(self):
        pts = [DataPoint(np.array([0, 2]), np.array([1.0, -1.0]), 1.0),
               DataPoint(np.array([1]), np.array([3.0]), -1.0)]
        data = Dataset.from_points(pts)
        assert data.n == 2 and data.d == 3
        np.testing.assert_array_equal(data.point(1).values, [3.0])

    def test_immutable(self):
        data = Dataset.from_dense([[1.0]], [1.0])
        with pytest.raises(ValueError):
            data.y[0] = 2.0

    def test_point_validation(self):
        with pytest.raises(ContractViolation):
            DataPoint(np.array([2, 1]), np.array([1.0, 1.0]), 1.0)
        with pytest.raises(ContractViolation):
            DataPoint(np.array([0]), np.array([0.0]), 1.0)
