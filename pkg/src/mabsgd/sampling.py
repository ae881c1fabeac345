"""Datapoint samplers: uniform, importance sampling and the two bandit samplers.

The bandit samplers keep one multiplicative weight per datapoint in a sum tree,
so drawing and reweighting cost O(log n). The drawn probability is mixed with a
floor distribution (uniform for MABS, ``q ~ a**(2/5)`` for MABS2) with weight ``eta``.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError, ContractViolation

DEFAULT_ETA = 0.4
CLAMP_EPS = 1e-12


class WeightTree:
    """Binary sum tree over nonnegative leaf weights.

    ``last_visits`` holds the number of nodes touched by the most recent
    :meth:`sample` or :meth:`update`.
    """

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.size == 0:
            raise ContractViolation("weight tree needs at least one leaf")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ContractViolation("tree weights must be finite and nonnegative")
        if not np.any(w > 0):
            raise ContractViolation("tree needs at least one positive weight")
        self.capacity = w.size
        self.size = K.tree_size(w.size)
        self.nodes = np.zeros(2 * self.size)
        self.nodes[self.size:self.size + w.size] = w
        K.tree_rebuild(self.nodes, self.size)
        self.last_visits = 0

    def total(self):
        return float(self.nodes[1])

    def leaf(self, i):
        return float(self.nodes[self.size + i])

    def leaves(self):
        return self.nodes[self.size:self.size + self.capacity].copy()

    def sample(self, u):
        if not 0.0 <= u < self.nodes[1]:
            raise ContractViolation(f"u={u!r} outside [0, {self.nodes[1]!r})")
        i, self.last_visits = K.tree_find(self.nodes, self.size, float(u))
        return int(i)

    def update(self, i, weight):
        if not 0 <= i < self.capacity:
            raise ContractViolation(f"leaf index {i} out of range [0, {self.capacity})")
        if not (weight >= 0.0 and math.isfinite(weight)):
            raise ContractViolation(f"leaf weight must be finite and nonnegative, got {weight!r}")
        self.last_visits = K.tree_set(self.nodes, self.size, int(i), float(weight))

    def fill(self, value):
        K.tree_fill(self.nodes, self.size, self.capacity, float(value))

    def max_relative_inconsistency(self):
        """Largest |parent - (left + right)| / max(|parent|, tiny) over internal nodes."""
        k = np.arange(1, self.size)
        kids = self.nodes[2 * k] + self.nodes[2 * k + 1]
        denom = np.maximum(np.abs(self.nodes[k]), np.finfo(float).tiny)
        return float(np.max(np.abs(self.nodes[k] - kids) / denom)) if k.size else 0.0


def tree_build(weights):
    return WeightTree(weights)


def _normalize_clamped(v, what):
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0 or not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ConfigurationError(f"{what} must be finite and nonnegative")
    if not np.any(v > 0):
        raise ConfigurationError(f"{what} are all zero")
    v = np.where(v > 0, v, CLAMP_EPS)
    return v / v.sum()


class Sampler:
    """Common interface; subclasses set ``kind`` and implement the hooks."""

    kind = None

    def __init__(self, n):
        self.n = int(n)
        self.t = 0

    def draw(self, rng):
        u1, u2 = rng.random(2)
        return self.draw_from(u1, u2)

    def draw_from(self, u1, u2):
        i, p = K.sampler_draw(self.kind, self._nodes, self._size, self.n, self._eta,
                              self._mix_p, self._mix_cum, float(u1), float(u2))
        return int(i), float(p)

    def probabilities(self):
        out = np.empty(self.n)
        K.sampler_probs(self.kind, self._nodes, self._size, self.n, self._eta, self._mix_p, out)
        return out

    def prob(self, i):
        return float(self.probabilities()[i])

    def update(self, i, a, p=None):
        self.t += 1

    # arrays handed to the kernels
    _nodes = np.zeros(2)
    _size = 1
    _eta = 0.0
    _mix_p = np.zeros(1)
    _mix_cum = np.zeros(1)

    def kernel_args(self):
        return self.kind, self._eta, 0.0, 0, self._mix_p, self._mix_cum


class UniformSampler(Sampler):
    kind = K.UNIFORM

    def __init__(self, n):
        super().__init__(n)
        self._mix_p = np.full(self.n, 1.0 / self.n)
        self._mix_cum = np.cumsum(self._mix_p)


class ImportanceSampler(Sampler):
    """Fixed non-uniform distribution."""

    kind = K.IMPORTANCE

    def __init__(self, p):
        p = _normalize_clamped(p, "importance weights")
        super().__init__(p.size)
        self.p = p
        self._mix_p = p
        self._mix_cum = np.cumsum(p)


def is_init_from_smoothness(profile):
    """p_i proportional to the per-point smoothness constant."""
    return ImportanceSampler(profile.per_point)


def is_init_from_bounds(a):
    """p_i proportional to sqrt(a_i), the minimiser of sum_i a_i / p_i."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0):
        raise ConfigurationError("gradient bounds must be nonnegative")
    return ImportanceSampler(np.sqrt(a))


def mabs_delta(n, horizon, a_sq_mean, eta=DEFAULT_ETA, t_scale=1.0):
    return math.sqrt(eta ** 4 * math.log(n) / (horizon * n ** 5 * a_sq_mean)) / t_scale


def mabs2_delta(n, horizon, a_pow_mean, eta=DEFAULT_ETA, t_scale=1.0):
    # horizon in the denominator, mirroring the MABS step size
    return math.sqrt(eta ** 4 * math.log(n) / (horizon * n ** 5 * a_pow_mean ** 5)) / t_scale


class MabsSampler(Sampler):
    """EXP3-style bandit over datapoints with a uniform floor ``eta / n``.

    Reward feedback is ``a_i^t``; the drawn leaf is multiplied by
    ``exp(delta * a / p_i**3)`` where ``p_i`` is the draw-time probability.
    """

    kind = K.MABS

    def __init__(self, n, horizon, a_sq_mean, eta=DEFAULT_ETA, t_scale=1.0, reset_bin=None):
        n, horizon = int(n), int(horizon)
        problems = []
        if n < 2:
            problems.append(f"bandit sampling needs n >= 2, got {n}")
        if horizon < 1:
            problems.append(f"horizon must be >= 1, got {horizon}")
        if not (a_sq_mean > 0 and math.isfinite(a_sq_mean)):
            problems.append(f"a_sq_mean must be positive and finite, got {a_sq_mean!r}")
        if not 0 < eta < 0.5:
            problems.append(f"eta must lie in (0, 0.5), got {eta!r}")
        if not t_scale >= 1:
            problems.append(f"t_scale must be >= 1, got {t_scale!r}")
        if reset_bin is not None and int(reset_bin) < 1:
            problems.append(f"reset_bin must be a positive integer, got {reset_bin!r}")
        if problems:
            raise ConfigurationError("; ".join(problems), problems)
        super().__init__(n)
        self.horizon = horizon
        self.eta = float(eta)
        self.t_scale = float(t_scale)
        self.a_sq_mean = float(a_sq_mean)
        self.delta = mabs_delta(n, horizon, a_sq_mean, eta, t_scale)
        self.reset_bin = int(reset_bin) if reset_bin is not None else None
        self.tree = WeightTree(np.ones(n))
        self.max_leaf = 1.0
        self.overflow_log_scale = 0.0
        self._init_mixing()

    def _init_mixing(self):
        self._mix_p = np.full(self.n, 1.0 / self.n)
        self._mix_cum = np.cumsum(self._mix_p)

    @property
    def _nodes(self):
        return self.tree.nodes

    @property
    def _size(self):
        return self.tree.size

    @property
    def _eta(self):
        return self.eta

    def prob(self, i):
        return (1.0 - self.eta) * self.tree.leaf(i) / self.tree.total() + self.eta * self._mix_p[i]

    def update(self, i, a, p=None):
        if not 0 <= i < self.n:
            raise ContractViolation(f"index {i} out of range")
        if not a >= 0:
            raise ContractViolation(f"bandit feedback must be nonnegative, got {a!r}")
        if p is None:
            p = self.prob(i)
        self.max_leaf, shift = K.bandit_update(self.tree.nodes, self.tree.size, self.n, int(i),
                                               float(a), float(p), self.delta, self.max_leaf)
        self.overflow_log_scale += shift
        self.t += 1
        if self.reset_bin is not None and self.t % self.reset_bin == 0:
            self.reset()

    def reset(self):
        self.tree.fill(1.0)
        self.max_leaf = 1.0

    def kernel_args(self):
        return self.kind, self.eta, self.delta, self.reset_bin or 0, self._mix_p, self._mix_cum


class Mabs2Sampler(MabsSampler):
    """Bandit sampler whose floor follows ``q_i ~ a_i**(2/5)`` from known bounds."""

    kind = K.MABS2

    def __init__(self, a, horizon, eta=DEFAULT_ETA, t_scale=1.0, reset_bin=None):
        a = np.asarray(a, dtype=np.float64).ravel()
        if a.size == 0 or np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ConfigurationError("MABS2 bounds must be finite and nonnegative")
        if not np.any(a > 0):
            raise ConfigurationError("MABS2 bounds are all zero")
        self.a = np.where(a > 0, a, CLAMP_EPS)
        pw = self.a ** 0.4
        self.q = pw / pw.sum()
        a_pow_mean = float(pw.mean())
        # the parent computes the MABS delta from sum a^2 / n; overwritten below
        super().__init__(a.size, horizon, float(np.mean(self.a ** 2)), eta, t_scale, reset_bin)
        self.delta = mabs2_delta(self.n, self.horizon, a_pow_mean, self.eta, self.t_scale)

    def _init_mixing(self):
        self._mix_p = self.q
        self._mix_cum = np.cumsum(self.q)


def mabs_init(n, horizon, a_sq_mean, eta=DEFAULT_ETA, t_scale=1.0, reset_bin=None):
    return MabsSampler(n, horizon, a_sq_mean, eta, t_scale, reset_bin)


def mabs2_init(a, horizon, eta=DEFAULT_ETA, t_scale=1.0, reset_bin=None):
    return Mabs2Sampler(a, horizon, eta, t_scale, reset_bin)


def mabs_update(state, i, a_it, p=None):
    state.update(i, a_it, p)


def mabs_reset(state):
    state.reset()


def sampler_draw(state, rng):
    return state.draw(rng)


def mabs_T_condition(n, a, c=1.0):
    """Smallest horizon for which the bandit regret guarantee applies."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0) or not np.any(a > 0):
        raise ConfigurationError("bounds must be nonnegative and not all zero")
    if c < 1:
        raise ConfigurationError(f"scale c must be >= 1, got {c!r}")
    mean_sq = float(np.mean(a ** 2))
    return int(math.ceil(25.0 * n * math.log(n) * float(a.max()) ** 2 / (4.0 * c * c * mean_sq)))


def mabs2_T_condition(n, a):
    a = np.asarray(a, dtype=np.float64)
    pw = np.where(a > 0, a, CLAMP_EPS) ** 0.4
    return int(math.ceil(25.0 * n * math.log(n) * pw.mean() / (4.0 * pw.min())))
