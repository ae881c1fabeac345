"""Self-checks run by ``mabsgd verify``: each suite compares library code with an
independent oracle on seeded random instances and reports counterexamples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics, model
from .data_io import SyntheticConfig, generate_synthetic
from .model import Dataset, Loss, ProblemSpec
from .optimize import EstimatorKind, SamplerConfig, build_sampler, estimate_gradient, init_state, run
from .sampling import WeightTree, mabs_T_condition

MAX_REPORTED = 5


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: list = field(default_factory=list)
    n_failed: int = 0
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.n_failed == 0

    def fail(self, **example):
        self.n_failed += 1
        if len(self.failures) < MAX_REPORTED:
            self.failures.append({k: _plain(v) for k, v in example.items()})

    def to_dict(self):
        return {"suite": self.name, "passed": self.passed, "cases": self.cases,
                "failed": self.n_failed, "counterexamples": self.failures,
                "details": {k: _plain(v) for k, v in self.details.items()}}


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def random_dataset(rng, n, d, loss, density=0.7):
    X = rng.normal(size=(n, d)) * (rng.random((n, d)) < density)
    X *= rng.uniform(0.2, 3.0, size=(n, 1))
    if loss == Loss.RIDGE:
        y = rng.normal(size=n)
    else:
        y = rng.choice([-1.0, 1.0], size=n)
    return Dataset.from_dense(X, y)


def random_simplex(rng, n, floor=0.0):
    p = rng.dirichlet(np.ones(n)) + floor
    return p / p.sum()


# --------------------------------------------------------------------------


def suite_unbiased(seed=0, cases=100, tol=1e-12):
    """Exact expectation sum_i p_i g(i) equals the full gradient for every estimator."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("unbiased")
    worst = 0.0
    for case in range(cases):
        n, d = int(rng.integers(1, 11)), int(rng.integers(1, 6))
        loss = Loss(int(rng.integers(0, 3)))
        spec = ProblemSpec(loss)
        data = random_dataset(rng, n, d, loss)
        w = rng.normal(size=d)
        p = random_simplex(rng, n, 0.01)
        target = model.full_gradient(spec, data, w)
        for kind in EstimatorKind:
            state = init_state(kind, spec, data, rng.normal(size=d))
            state.w = w.copy()
            expect = sum(p[i] * estimate_gradient(kind, state, i, p[i])[0] for i in range(n))
            err = float(np.max(np.abs(expect - target)))
            scale = max(1.0, float(np.max(np.abs(target))))
            worst = max(worst, err / scale)
            res.cases += 1
            if err > tol * scale:
                res.fail(case=case, estimator=kind.name, loss=loss.name, error=err)
    res.details["max_scaled_error"] = worst
    return res


def suite_variance(seed=0, cases=100, tol=1e-10):
    """Pseudo-variance (effective minus centering) against outcome enumeration."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("variance")
    worst = 0.0
    for case in range(cases):
        n, d = int(rng.integers(1, 11)), int(rng.integers(1, 6))
        loss = Loss(int(rng.integers(0, 3)))
        spec = ProblemSpec(loss)
        data = random_dataset(rng, n, d, loss)
        w = rng.normal(size=d)
        p = random_simplex(rng, n, 0.01)
        grad = model.full_gradient(spec, data, w)
        # plain SGD through the metrics module
        rep = metrics.pseudo_variance(spec, data, w, p)
        gs = [model.sub_gradient(spec, data.point(i), w).toarray(d) / (n * p[i]) for i in range(n)]
        brute = sum(p[i] * float((gs[i] - grad) @ (gs[i] - grad)) for i in range(n))
        checks = [("metrics", rep.pseudo, brute)]
        # variance-reduced estimators through the optimiser's own report
        from .optimize import estimator_report

        for kind in (EstimatorKind.PROX_SVRG, EstimatorKind.SAGA):
            state = init_state(kind, spec, data, rng.normal(size=d))
            state.w = w.copy()
            outs = [estimate_gradient(kind, state, i, p[i])[0] for i in range(n)]
            mean = sum(p[i] * outs[i] for i in range(n))
            brute_vr = sum(p[i] * float((outs[i] - mean) @ (outs[i] - mean)) for i in range(n))
            checks.append((kind.name, estimator_report(state, p)[2], brute_vr))
        for what, got, want in checks:
            res.cases += 1
            err = abs(got - want) / max(1.0, abs(want))
            worst = max(worst, err)
            if err > tol:
                res.fail(case=case, what=what, got=got, expected=want)
    res.details["max_relative_error"] = worst
    return res


def _grid_simplex3(step):
    k = int(round(1.0 / step))
    for i in range(1, k):
        for j in range(1, k - i):
            yield np.array([i, j, k - i - j], dtype=np.float64) / k


def suite_optimal(seed=0, cases=20, resolution=1e-3, tol=1e-6):
    """Closed-form optimal distributions against a simplex grid search (n = 3)."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("optimal")
    grid = np.array(list(_grid_simplex3(resolution)))
    spec = ProblemSpec(Loss.LOGISTIC)
    for case in range(cases):
        data = random_dataset(rng, 3, 4, Loss.LOGISTIC, density=1.0)
        w = rng.normal(size=4)
        a = model.gradient_norms(spec, data, w) ** 2 / 9.0
        p, _ = metrics.optimal_stepwise_p(spec, data, w)
        best = float(np.min((a / grid).sum(axis=1)))
        got = metrics.effective_variance(a, p)
        res.cases += 1
        if got > best + tol * max(1.0, best):
            res.fail(case=case, kind="stepwise", closed_form=got, grid=best)
        hist = rng.random((int(rng.integers(1, 20)), 3)) ** 3
        ps, _ = metrics.optimal_static_p(hist)
        A = hist.sum(axis=0)
        best = float(np.min((A / grid).sum(axis=1)))
        got = float(np.sum(A / ps))
        res.cases += 1
        if got > best + tol * max(1.0, best):
            res.fail(case=case, kind="static", closed_form=got, grid=best)
    return res


def bound_instance(seed, n=10):
    """Small logistic instance; logistic gradients are bounded by ||x_i|| for every w."""
    cfg = SyntheticConfig(n=n, d=5, seed=seed, classification=True)
    data = generate_synthetic(cfg)
    return ProblemSpec(Loss.LOGISTIC), data


def bound_run(seed, n=10, gamma=0.1):
    spec, data = bound_instance(seed, n)
    a_bounds = model.gradient_bounds(spec, data) ** 2 / n ** 2
    T = mabs_T_condition(n, a_bounds, 1.0)
    sampler = build_sampler(SamplerConfig("mabs"), spec, data, T)
    trace = run(spec, data, "sgd", sampler, f"constant:{gamma}", T=T, seed=seed, history=True)
    return metrics.regret_bound_check(trace.history_a, trace.history_p, a_bounds, T), trace


def suite_bound(seed=0, seeds=20, n=10):
    """Bandit regret bound on ``seeds`` MABS runs with a horizon meeting the T-condition."""
    res = SuiteResult("bound")
    ratios = []
    for s in range(seed, seed + seeds):
        rep, trace = bound_run(s, n)
        res.cases += 1
        ratios.append(rep.lhs / rep.rhs)
        if not (rep.satisfied and rep.precondition_ok):
            res.fail(seed=s, lhs=rep.lhs, oracle=rep.oracle, additive=rep.additive,
                     precondition_ok=rep.precondition_ok, T=trace.steps)
        if rep.oracle > rep.lhs + metrics.CHECK_TOL:
            res.fail(seed=s, reason="static oracle above the run", lhs=rep.lhs, oracle=rep.oracle)
    res.details["max_lhs_over_rhs"] = max(ratios)
    return res


def suite_lemma1(seed=0, cases=10_000):
    rng = np.random.default_rng(seed)
    res = SuiteResult("lemma1")
    for case in range(cases):
        n = int(rng.integers(1, 12))
        a = rng.random(n) * rng.choice([1e-2, 1.0, 10.0])
        p1 = random_simplex(rng, n, 0.05)
        p2 = random_simplex(rng, n, 0.05)
        zeta = float(rng.uniform(-1.0, 1.0))
        res.cases += 1
        if not metrics.lemma1_check(a, p1, p2, zeta):
            lhs, rhs = metrics.lemma1_sides(a, p1, p2, zeta)
            res.fail(case=case, a=a, p1=p1, p2=p2, zeta=zeta, lhs=lhs, rhs=rhs)
    return res


def linear_scan(weights, u):
    """Smallest i with u < prefix_sum[i]."""
    return int(np.searchsorted(np.cumsum(weights), u, side="right"))


def suite_tree(seed=0, operations=100_000, n=1024, visit_sizes=(16, 1024, 65536),
               visit_ops=2000):
    """Sum tree against a linear prefix-sum scan with shared uniforms.

    Integer weights keep every partial sum exact, so both sides must agree on
    every index.
    """
    rng = np.random.default_rng(seed)
    res = SuiteResult("tree")
    w = rng.integers(0, 1000, size=n).astype(np.float64)
    w[0] = 1.0
    tree = WeightTree(w)
    for op in range(operations):
        if op % 2 == 0:
            u = float(rng.random()) * tree.total()
            got = tree.sample(u)
            want = linear_scan(w, u)
            res.cases += 1
            if got != want:
                res.fail(op=op, u=u, tree=got, scan=want)
        else:
            i = int(rng.integers(0, n))
            w[i] = float(rng.integers(0, 1000))
            if not np.any(w > 0):
                w[i] = 1.0
            tree.update(i, w[i])
    max_visits = {}
    for m in visit_sizes:
        bound = 2 * (math.ceil(math.log2(m)) + 1)
        t = WeightTree(rng.random(m) + 1e-3)
        worst = 0
        for _ in range(visit_ops):
            t.sample(float(rng.random()) * t.total())
            worst = max(worst, t.last_visits)
            t.update(int(rng.integers(0, m)), float(rng.random()))
            worst = max(worst, t.last_visits)
        max_visits[m] = worst
        res.cases += 1
        if worst > bound:
            res.fail(n=m, visits=worst, bound=bound)
    res.details["max_visits"] = {str(k): v for k, v in max_visits.items()}
    return res


def fd_gradient(spec, point, w, h=1e-6):
    g = np.zeros_like(w)
    for k in range(w.size):
        e = np.zeros_like(w)
        e[k] = h
        g[k] = (model.sub_cost(spec, point, w + e) - model.sub_cost(spec, point, w - e)) / (2 * h)
    return g


def suite_gradient(seed=0, cases=300, tol=1e-5, prox_cases=30, perturbations=1000):
    """Sub-gradients against central differences; prox outputs against random perturbations."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("gradient")
    worst = 0.0
    for case in range(cases):
        loss = Loss(case % 3)
        spec = ProblemSpec(loss)
        d = int(rng.integers(1, 6))
        x = rng.normal(size=d)
        y = float(rng.normal()) if loss == Loss.RIDGE else float(rng.choice([-1.0, 1.0]))
        w = rng.normal(size=d)
        point = model.DataPoint.from_dense(x, y)
        if loss == Loss.SQUARED_HINGE:
            # keep clear of the kink at y <x, w> = 1
            while abs(1.0 - y * point.dot(w)) < 1e-3:
                w = rng.normal(size=d)
        got = model.sub_gradient(spec, point, w).toarray(d)
        want = fd_gradient(spec, point, w)
        err = float(np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-8))
        if np.linalg.norm(want) < 1e-8:
            err = float(np.linalg.norm(got - want))
        worst = max(worst, err)
        res.cases += 1
        if err > tol:
            res.fail(case=case, loss=loss.name, w=w, analytic=got, numeric=want)
    for case in range(prox_cases):
        reg = ("l1", "l2", "none")[case % 3]
        spec = ProblemSpec(Loss.RIDGE, reg, float(rng.uniform(0.0, 2.0)))
        v = rng.normal(size=4) * 2
        step = float(rng.uniform(0.05, 2.0))
        z = model.prox(spec, v, step)

        def obj(u):
            return spec.lam * model.reg_value(spec, u) + float((u - v) @ (u - v)) / (2 * step)

        base = obj(z)
        trials = z + rng.normal(size=(perturbations, 4)) * rng.choice([1e-4, 1e-2, 1.0], size=(perturbations, 1))
        better = [obj(u) for u in trials if obj(u) < base - 1e-12]
        res.cases += 1
        if better:
            res.fail(case=case, reg=reg, v=v, step=step, prox=z, improvement=base - min(better))
    res.details["max_fd_relative_error"] = worst
    return res


SUITES = {
    "unbiased": suite_unbiased,
    "variance": suite_variance,
    "optimal": suite_optimal,
    "bound": suite_bound,
    "lemma1": suite_lemma1,
    "tree": suite_tree,
    "gradient": suite_gradient,
}


def run_suites(names=None, seed=0):
    names = list(SUITES) if not names or names == ["all"] else names
    return [SUITES[name](seed=seed) for name in names]
