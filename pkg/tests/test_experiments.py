import numpy as np
import pytest

from mabsgd import model
from mabsgd.data_io import SyntheticConfig, generate_synthetic
from mabsgd.errors import ConfigurationError
from mabsgd.experiments import (
    TAU_COLUMNS,
    is_blown_up,
    largest_stable_gamma,
    reference_optimum,
    run_repeats,
    stability_sweep,
    summarize,
    tau_sweep,
)
from mabsgd.model import ProblemSpec


def ridge_problem(seed=0, n=30):
    return ProblemSpec("ridge"), generate_synthetic(SyntheticConfig(n=n, d=4, seed=seed))


class TestReferenceOptimum:
    def test_matches_least_squares(self):
        spec, data = ridge_problem(seed=2)
        X = data.X.toarray()
        w_ls = np.linalg.lstsq(X, data.y, rcond=None)[0]
        opt = reference_optimum(spec, data)
        assert opt.converged
        assert opt.F == pytest.approx(model.full_cost(spec, data, w_ls), abs=1e-9)

    def test_l1_optimality(self):
        spec = ProblemSpec("logistic", "l1", 0.05)
        data = generate_synthetic(SyntheticConfig(n=40, d=4, seed=3, classification=True))
        opt = reference_optimum(spec, data)
        assert opt.converged
        g = model.full_gradient(ProblemSpec("logistic"), data, opt.w)
        nz = opt.w != 0
        # subgradient conditions of the L1 problem
        np.testing.assert_allclose(g[nz], -0.05 * np.sign(opt.w[nz]), atol=1e-7)
        assert np.all(np.abs(g[~nz]) <= 0.05 + 1e-7)


class TestRepeats:
    def test_seed_per_repeat(self):
        spec, data = ridge_problem()
        traces = run_repeats(spec, data, "sgd", "mabs", 1e-3, T=50, repeats=3, seed=10)
        from mabsgd.optimize import run
        for r, tr in enumerate(traces):
            np.testing.assert_array_equal(tr.i, run(spec, data, "sgd", "mabs", 1e-3, T=50, seed=10 + r).i)

    def test_workers_do_not_change_results(self):
        spec, data = ridge_problem()
        one = run_repeats(spec, data, "saga", "mabs", 1e-3, T=60, repeats=3, seed=1, workers=1)
        two = run_repeats(spec, data, "saga", "mabs", 1e-3, T=60, repeats=3, seed=1, workers=2)
        for a, b in zip(one, two):
            np.testing.assert_array_equal(a.final_w, b.final_w)
            np.testing.assert_array_equal(a.i, b.i)

    def test_rejects_bad_input(self):
        spec, data = ridge_problem()
        with pytest.raises(ConfigurationError):
            run_repeats(spec, data, "sgd", "uniform", 1e-3, T=5, repeats=0)
        with pytest.raises(ConfigurationError):
            run_repeats(spec, data, "adam", "uniform", 1e-3, T=5, repeats=1)

    def test_summary(self):
        spec, data = ridge_problem()
        traces = run_repeats(spec, data, "sgd", "uniform", 1e-3, T=40, repeats=4)
        s = summarize(traces, F_star=0.0)
        assert s["repeats"] == 4 and len(s["final_F"]) == 4
        assert s["mean_F"] == pytest.approx(np.mean(s["final_F"]))
        assert s["mean_gap"] == pytest.approx(s["mean_F"])


class TestSweeps:
    def test_tau_sweep_rows(self):
        rows = tau_sweep(SyntheticConfig(n=31, d=3, seed=0), [0.0, 8.0], T=200, repeats=2)
        assert len(rows) == 6
        assert [r.sampler for r in rows[:3]] == ["uniform", "is-smoothness", "mabs"]
        assert rows[0].scale_c == 1.0
        assert rows[3].tau == pytest.approx(8.0, rel=1e-6)
        assert all(r.mean_gap >= -1e-9 for r in rows)
        assert set(TAU_COLUMNS) <= set(rows[0].__dataclass_fields__)

    def test_tau_sweep_needs_synthetic(self):
        with pytest.raises(ConfigurationError):
            tau_sweep("w8a", [10.0])

    def test_tiny_step_never_blows_up(self):
        spec, data = ridge_problem(n=20)
        rows = stability_sweep(spec, data, [1e-6], T=100, repeats=3)
        assert all(r.diverged_fraction == 0 for r in rows)
        assert largest_stable_gamma(rows, "mabs") == 1e-6

    def test_huge_step_blows_up(self):
        spec, data = ridge_problem(n=20)
        rows = stability_sweep(spec, data, [1e-4, 50.0], samplers=("uniform",), T=100, repeats=2)
        assert [r.diverged_fraction for r in rows] == [0.0, 1.0]
        assert largest_stable_gamma(rows, "uniform") == 1e-4
        assert largest_stable_gamma(rows, "mabs") is None

    def test_blowup_rule(self):
        class T:
            diverged = False
            final_F = 11.0
        assert is_blown_up(T, 1.0) and not is_blown_up(T, 2.0)
        T.final_F = float("nan")
        assert is_blown_up(T, 1.0)
