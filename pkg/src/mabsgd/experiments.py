"""Experiment drivers: repeated runs, the tau sweep and the step-size stability sweep."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import model
from .data_io import SyntheticConfig, generate_synthetic, scale_for_tau
from .errors import ConfigurationError
from .model import ProblemSpec
from .optimize import METHODS, SamplerConfig, StepSchedule, run

TAU_SAMPLERS = ("uniform", "is-smoothness", "mabs")


@dataclass(frozen=True)
class OptimumResult:
    w: np.ndarray
    F: float
    iterations: int
    residual: float
    converged: bool


def reference_optimum(spec, data, w0=None, tol=1e-10, max_iter=200_000):
    """Full-batch proximal gradient with backtracking.

    Stops when the gradient mapping ``(w - prox(w - s grad f)) / s`` has norm
    below ``tol``; for ``lam = 0`` that is the plain gradient norm.
    """
    w = np.zeros(data.d) if w0 is None else np.array(w0, dtype=np.float64)
    step = 1.0
    f = lambda v: model.full_cost(ProblemSpec(spec.loss, "none", 0.0), data, v)
    fw, g = f(w), model.full_gradient(spec, data, w)
    res = math.inf
    for it in range(1, max_iter + 1):
        step *= 2.0
        while True:
            w_new = model.prox(spec, w - step * g, step)
            diff = w_new - w
            f_new = f(w_new)
            if f_new <= fw + g @ diff + diff @ diff / (2.0 * step) or step < 1e-300:
                break
            step *= 0.5
        res = float(np.linalg.norm(diff)) / step
        w, fw = w_new, f_new
        g = model.full_gradient(spec, data, w)
        if res < tol:
            return OptimumResult(w, model.full_cost(spec, data, w), it, res, True)
    return OptimumResult(w, model.full_cost(spec, data, w), max_iter, res, False)


@dataclass(frozen=True)
class RunRequest:
    spec: ProblemSpec
    data: object
    method: str
    sampler: SamplerConfig
    schedule: StepSchedule
    T: int
    seed: int
    stride: int | None = None


def _execute(req):
    return run(req.spec, req.data, req.method, req.sampler, req.schedule, T=req.T,
               seed=req.seed, stride=req.stride)


def default_workers():
    return os.cpu_count() or 1


def run_repeats(spec, data, method, sampler, schedule, T, repeats, seed=0, stride=None,
                workers=1):
    """Repeat ``r`` uses seed ``seed + r``; results come back in repeat order."""
    if repeats < 1:
        raise ConfigurationError(f"repeats must be >= 1, got {repeats}")
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}")
    if isinstance(sampler, str):
        sampler = SamplerConfig(sampler)
    if not isinstance(schedule, StepSchedule):
        schedule = StepSchedule.parse(schedule)
    reqs = [RunRequest(spec, data, method, sampler, schedule, T, seed + r, stride)
            for r in range(repeats)]
    if workers > 1 and repeats > 1:
        with ProcessPoolExecutor(max_workers=min(workers, repeats)) as pool:
            return list(pool.map(_execute, reqs))
    return [_execute(r) for r in reqs]


def _mean_std(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    if not np.all(np.isfinite(v)):
        return math.inf, math.nan
    with np.errstate(over="ignore"):
        return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def summarize(traces, F_star=None):
    F = [t.final_F for t in traces]
    Ve = [t.final_Ve for t in traces]
    out = {
        "repeats": len(traces),
        "diverged": [bool(t.diverged) for t in traces],
        "final_F": F,
        "final_Ve": Ve,
    }
    out["mean_F"], out["std_F"] = _mean_std(F)
    out["mean_Ve"], out["std_Ve"] = _mean_std(Ve)
    if F_star is not None:
        gap = [f - F_star for f in F]
        out["F_star"] = F_star
        out["mean_gap"], out["std_gap"] = _mean_std(gap)
    return out


@dataclass(frozen=True)
class TauRow:
    tau_target: float
    tau: float
    scale_c: float
    sampler: str
    mean_gap: float
    std_gap: float
    mean_Ve: float
    std_Ve: float
    diverged: int
    F_star: float


TAU_COLUMNS = ("tau_target", "tau", "scale_c", "sampler", "mean_gap", "std_gap", "mean_Ve",
               "std_Ve", "diverged", "F_star")


def tau_sweep(base, taus, samplers=TAU_SAMPLERS, method="sgd", schedule=4e-3, T=3000,
              repeats=200, seed=0, eta=0.4, a_source="initial", stride=None, workers=1,
              spec=None):
    """Ridge SGD on synthetic data whose smoothness ratio is pushed to each ``tau``.

    One dataset per grid point, built from ``base`` with ``scale_c`` found by
    bisection; repeats differ only in the sampling stream.
    """
    if not isinstance(base, SyntheticConfig):
        raise ConfigurationError("tau sweep needs a synthetic dataset configuration")
    spec = spec or ProblemSpec("ridge", "none", 0.0)
    schedule = StepSchedule.parse(schedule) if not isinstance(schedule, StepSchedule) else schedule
    rows = []
    for tau in taus:
        c = scale_for_tau(base, float(tau))
        data = generate_synthetic(replace(base, scale_c=c))
        actual = model.smoothness_profile(spec, data).tau
        F_star = reference_optimum(spec, data).F
        for name in samplers:
            cfg = SamplerConfig(name, eta=eta, a_source=a_source)
            traces = run_repeats(spec, data, method, cfg, schedule, T, repeats, seed, stride, workers)
            s = summarize(traces, F_star)
            rows.append(TauRow(float(tau), actual, c, name, s["mean_gap"], s["std_gap"],
                               s["mean_Ve"], s["std_Ve"], sum(s["diverged"]), F_star))
    return rows


@dataclass(frozen=True)
class StabilityRow:
    gamma: float
    sampler: str
    estimator: str
    mean_F: float
    std_F: float
    diverged_fraction: float


STABILITY_COLUMNS = ("gamma", "sampler", "estimator", "mean_F", "std_F", "diverged_fraction")


def is_blown_up(trace, F0, blowup=10.0):
    """Non-finite iterate, or a final objective above ``blowup`` times the start value."""
    return trace.diverged or not math.isfinite(trace.final_F) or trace.final_F > blowup * F0


def stability_sweep(spec, data, gammas, samplers=("uniform", "mabs"), method="sgd", T=None,
                    repeats=50, seed=0, eta=0.4, a_source="bound", blowup=10.0, stride=None,
                    workers=1):
    """Final objective per constant step size; blown-up repeats are counted, never dropped."""
    T = 60 * data.n if T is None else int(T)
    F0 = model.full_cost(spec, data, np.zeros(data.d))
    rows = []
    for gamma in gammas:
        for name in samplers:
            cfg = SamplerConfig(name, eta=eta, a_source=a_source)
            traces = run_repeats(spec, data, method, cfg, StepSchedule.constant(gamma), T,
                                 repeats, seed, stride, workers)
            blown = [is_blown_up(t, F0, blowup) for t in traces]
            mean_F, std_F = _mean_std([t.final_F for t in traces])
            rows.append(StabilityRow(float(gamma), name, method, mean_F, std_F,
                                     sum(blown) / len(blown)))
    return rows


def largest_stable_gamma(rows, sampler, max_fraction=0.0):
    ok = [r.gamma for r in rows if r.sampler == sampler and r.diverged_fraction <= max_fraction]
    return max(ok) if ok else None
