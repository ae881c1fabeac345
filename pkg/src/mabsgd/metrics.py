"""Variance measures, optimal sampling distributions and bandit regret checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InfiniteVarianceError
from .model import coefficients

CLAMP_EPS = 1e-12
CHECK_TOL = 1e-9


@dataclass(frozen=True)
class VarianceReport:
    effective: float
    centering: float

    @property
    def pseudo(self):
        return self.effective - self.centering


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    oracle: float
    additive: float
    satisfied: bool
    precondition_ok: bool
    required_T: int
    factor: float = 3.0

    @property
    def rhs(self):
        return self.factor * self.oracle + self.additive


def _as_dist(p, n=None):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or (n is not None and p.size != n):
        raise ContractViolation("distribution has the wrong shape")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
        raise ContractViolation("p is not a probability vector")
    return p


def effective_variance(a, p):
    """sum_i a_i / p_i; terms with a_i = 0 contribute nothing."""
    a = np.asarray(a, dtype=np.float64)
    p = _as_dist(p, a.size)
    if np.any((p == 0) & (a > 0)):
        raise InfiniteVarianceError("zero probability on a point with positive feedback")
    live = a > 0
    return float(np.sum(a[live] / p[live]))


def ve_gradient(a, p):
    """Gradient of p -> sum a_i / p_i, i.e. -a_i / p_i**2."""
    a = np.asarray(a, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return -a / p ** 2


def pseudo_variance(spec, data, w, p):
    """Variance split of the plain SGD estimator sampled from ``p`` at ``w``."""
    p = _as_dist(p, data.n)
    coef = coefficients(spec, data, w)
    a = coef ** 2 * data.sq_norms / data.n ** 2
    eff = effective_variance(a, p)
    mean_grad = data.X.T @ coef / data.n
    return VarianceReport(eff, float(mean_grad @ mean_grad))


def _normalize_or_uniform(v):
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ContractViolation("weights must be finite and nonnegative")
    if not np.any(v > 0):
        return np.full(v.size, 1.0 / v.size), True
    v = np.where(v > 0, v, CLAMP_EPS)
    return v / v.sum(), False


def optimal_stepwise_p(spec, data, w):
    """p_i proportional to the gradient norm at ``w``; returns (p, degenerate)."""
    coef = coefficients(spec, data, w)
    return _normalize_or_uniform(np.abs(coef) * np.sqrt(data.sq_norms))


def optimal_static_p(history):
    """Minimiser of sum_t sum_i a_i^t / p_i over the simplex: p ~ sqrt(sum_t a^t)."""
    A = np.asarray(history, dtype=np.float64)
    if A.ndim == 2:
        A = A.sum(axis=0)
    return _normalize_or_uniform(np.sqrt(A))


def regret_additive(n, T, a_sq_mean, constant=50.0):
    return constant * math.sqrt(n ** 5 * T * a_sq_mean * math.log(n))


def regret_bound_check(a_hist, p_hist, a_bounds, T=None, constant=50.0, factor=3.0):
    """Compare cumulated effective variance of a run with the static oracle.

    ``a_hist`` and ``p_hist`` are (T, n) arrays holding every a^t and p^t.
    """
    from .sampling import mabs_T_condition

    a_hist = np.asarray(a_hist, dtype=np.float64)
    p_hist = np.asarray(p_hist, dtype=np.float64)
    if a_hist.shape != p_hist.shape or a_hist.ndim != 2:
        raise ContractViolation("a and p histories must be (T, n) arrays of equal shape")
    steps, n = a_hist.shape
    T = steps if T is None else int(T)
    a_bounds = np.asarray(a_bounds, dtype=np.float64)
    if np.any(p_hist[a_hist > 0] <= 0):
        raise InfiniteVarianceError("zero probability on a point with positive feedback")
    safe_p = np.where(p_hist > 0, p_hist, 1.0)
    lhs = float(np.sum(a_hist / safe_p))
    p_star, _ = optimal_static_p(a_hist)
    oracle = float(np.sum(a_hist.sum(axis=0) / p_star))
    additive = regret_additive(n, T, float(np.mean(a_bounds ** 2)), constant)
    required = mabs_T_condition(n, a_bounds)
    return BoundReport(lhs, oracle, additive, lhs <= factor * oracle + additive + CHECK_TOL,
                       T >= required, required, factor)


def lemma1_sides(a, p1, p2, zeta):
    a = np.asarray(a, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    v1 = float(np.sum(a / p1))
    v2 = float(np.sum(a / p2))
    g = ve_gradient(a, p1)
    lhs = (1.0 - 2.0 * zeta) * v1 - (1.0 - zeta) * v2
    rhs = float((p1 - p2) @ g) + zeta * float(p2 @ g)
    return lhs, rhs


def lemma1_check(a, p1, p2, zeta, tol=CHECK_TOL):
    """Inequality linking V_e at two full-support distributions, for zeta <= 1."""
    if zeta > 1:
        raise ContractViolation(f"zeta must be <= 1, got {zeta!r}")
    lhs, rhs = lemma1_sides(a, p1, p2, zeta)
    return lhs <= rhs + tol
