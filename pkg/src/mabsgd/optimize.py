"""Stochastic optimisers with pluggable datapoint samplers.

Each iteration draws ``(i, p_i)`` from the sampler, forms an unbiased gradient
estimate together with its bandit feedback ``a_i^t``, takes a (proximal) step
and hands ``a_i^t`` back to the sampler.

:func:`run` has two interchangeable back ends: the fused compiled loop in
:mod:`mabsgd._kernels`, and a plain numpy loop built from the step functions
below. Both consume the same pre-drawn uniform stream.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from . import _kernels as K
from . import model
from .errors import ConfigurationError, ContractViolation
from .sampling import (
    DEFAULT_ETA,
    ImportanceSampler,
    Mabs2Sampler,
    MabsSampler,
    UniformSampler,
    is_init_from_bounds,
    is_init_from_smoothness,
)


class EstimatorKind(enum.IntEnum):
    PLAIN_SGD = K.PLAIN
    PROX_SVRG = K.SVRG
    SAGA = K.SAGA


# CLI-facing method names -> (estimator, proximal step)
METHODS = {
    "sgd": (EstimatorKind.PLAIN_SGD, False),
    "prox-sgd": (EstimatorKind.PLAIN_SGD, True),
    "prox-svrg": (EstimatorKind.PROX_SVRG, True),
    "saga": (EstimatorKind.SAGA, True),
}

SAMPLER_KINDS = ("uniform", "is-smoothness", "is-bound", "mabs", "mabs2")


@dataclass(frozen=True)
class StepSchedule:
    """``constant``: gamma; ``inverse``: 2 / (mu t); ``shifted``: 1 / (alpha + mu t)."""

    kind: str = "constant"
    gamma: float = 0.0
    mu: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind == "constant":
            ok = self.gamma > 0
        elif self.kind == "inverse":
            ok = self.mu > 0
        elif self.kind == "shifted":
            ok = self.mu >= 0 and self.alpha + self.mu > 0 and self.alpha >= 0
        else:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if not ok:
            raise ConfigurationError(f"schedule {self} does not give positive step sizes")

    @classmethod
    def constant(cls, gamma):
        return cls("constant", gamma=float(gamma))

    @classmethod
    def inverse_strong(cls, mu):
        return cls("inverse", mu=float(mu))

    @classmethod
    def shifted(cls, alpha, mu):
        return cls("shifted", mu=float(mu), alpha=float(alpha))

    @classmethod
    def parse(cls, text):
        """``0.1``, ``constant:0.1``, ``inverse:MU`` or ``shifted:ALPHA,MU``."""
        text = str(text).strip()
        kind, _, rest = text.partition(":")
        if not rest:
            try:
                return cls.constant(float(kind))
            except ValueError:
                raise ConfigurationError(f"cannot parse schedule {text!r}") from None
        try:
            vals = [float(v) for v in rest.split(",")]
            if kind == "constant" and len(vals) == 1:
                return cls.constant(vals[0])
            if kind == "inverse" and len(vals) == 1:
                return cls.inverse_strong(vals[0])
            if kind == "shifted" and len(vals) == 2:
                return cls.shifted(*vals)
        except ValueError:
            pass
        raise ConfigurationError(f"cannot parse schedule {text!r}")

    def kernel_args(self):
        if self.kind == "constant":
            return K.CONSTANT, self.gamma, 0.0
        if self.kind == "inverse":
            return K.INVERSE_STRONG, self.mu, 0.0
        return K.SHIFTED, self.alpha, self.mu

    def __call__(self, t):
        if self.kind == "constant":
            return self.gamma
        if self.kind == "inverse":
            return 2.0 / (self.mu * t)
        return 1.0 / (self.alpha + self.mu * t)

    def describe(self):
        if self.kind == "constant":
            return f"constant:{self.gamma!r}"
        if self.kind == "inverse":
            return f"inverse:{self.mu!r}"
        return f"shifted:{self.alpha!r},{self.mu!r}"


# --------------------------------------------------------------------------
# optimiser states


class SgdState:
    """Iterate and step counter; anchors are identically zero."""

    kind = EstimatorKind.PLAIN_SGD

    def __init__(self, spec, data, w0):
        self.spec = spec
        self.data = data
        self.w = np.array(w0, dtype=np.float64)
        if self.w.shape != (data.d,):
            raise ContractViolation(f"initial point must have shape ({data.d},)")
        self.t = 1
        self.diverged = False

    @property
    def anchor_coef(self):
        return np.zeros(self.data.n)

    @property
    def anchor_mean(self):
        return np.zeros(self.data.d)


class ProxSvrgState(SgdState):
    """Snapshot anchor refreshed every ``n`` steps to the previous bin's mean iterate."""

    kind = EstimatorKind.PROX_SVRG

    def __init__(self, spec, data, w0):
        super().__init__(spec, data, w0)
        self.bin_size = data.n
        self.bin_sum = np.zeros(data.d)
        self._set_snapshot(self.w.copy())

    def _set_snapshot(self, w_snap):
        self.snapshot = w_snap
        self.snapshot_coef = model.coefficients(self.spec, self.data, w_snap)
        self.snapshot_full_gradient = self.data.X.T @ self.snapshot_coef / self.data.n

    @property
    def anchor_coef(self):
        return self.snapshot_coef

    @property
    def anchor_mean(self):
        return self.snapshot_full_gradient


class SagaState(SgdState):
    """Table of last-seen gradients, stored as one margin derivative per point."""

    kind = EstimatorKind.SAGA

    def __init__(self, spec, data, w0):
        super().__init__(spec, data, w0)
        self.table_coef = model.coefficients(spec, data, self.w)
        self.table_mean = data.X.T @ self.table_coef / data.n

    def table_gradient(self, i):
        p = self.data.point(i)
        return model.SparseVector(p.indices, self.table_coef[i] * p.values)

    @property
    def anchor_coef(self):
        return self.table_coef

    @property
    def anchor_mean(self):
        return self.table_mean


_STATES = {EstimatorKind.PLAIN_SGD: SgdState, EstimatorKind.PROX_SVRG: ProxSvrgState,
           EstimatorKind.SAGA: SagaState}


def init_state(kind, spec, data, w0=None):
    kind = EstimatorKind(kind)
    if w0 is None:
        w0 = np.zeros(data.d)
    return _STATES[kind](spec, data, w0)


# --------------------------------------------------------------------------
# one iteration


def estimate_gradient(kind, state, i, p_i):
    """Unbiased estimate of the estimator's target and its feedback ``a_i^t``.

    ``g = (grad phi_i(w) - anchor_i) / (n p_i) + mean(anchors)``, with zero
    anchors for plain SGD; ``a = ||grad phi_i(w) - anchor_i||^2 / n^2``.
    """
    if not p_i > 0:
        raise ContractViolation(f"sampling probability must be positive, got {p_i!r}")
    if EstimatorKind(kind) != state.kind:
        raise ContractViolation(f"state is for {state.kind.name}, not {EstimatorKind(kind).name}")
    data = state.data
    n = data.n
    s, e = data.indptr[i], data.indptr[i + 1]
    idx, vals = data.indices[s:e], data.data[s:e]
    c = float(K.loss_coef(int(state.spec.loss), float(vals @ state.w[idx]), float(data.y[i])))
    corr = c - state.anchor_coef[i]
    a = corr * corr * data.sq_norms[i] / (n * n)
    g = state.anchor_mean.copy()
    g[idx] += (corr / (n * p_i)) * vals
    return g, a


def _check_finite(state, a=0.0):
    if not (math.isfinite(a) and np.all(np.isfinite(state.w))):
        state.diverged = True
    return not state.diverged


def sgd_step(state, g_hat, schedule, spec):
    """w <- w - gamma_t (g_hat + lam * subgrad r(w))."""
    gamma = schedule(state.t)
    state.w = state.w - gamma * (g_hat + spec.lam * model.reg_subgradient(spec, state.w))
    state.t += 1
    return _check_finite(state)


def prox_sgd_step(state, g_hat, schedule, spec):
    """w <- prox_{gamma_t lam r}(w - gamma_t g_hat)."""
    gamma = schedule(state.t)
    state.w = model.prox(spec, state.w - gamma * g_hat, gamma)
    state.t += 1
    return _check_finite(state)


def prox_svrg_epoch_update(state, data, spec):
    """Move the snapshot to the mean of the last ``n`` iterates and recompute its full gradient."""
    if (state.t - 1) % state.bin_size != 0:
        raise ContractViolation(f"step {state.t - 1} is not a bin boundary")
    state._set_snapshot(state.bin_sum / state.bin_size)
    state.bin_sum = np.zeros(data.d)


def saga_step(state, i, g_hat, a_i_t, schedule, spec):
    """Proximal step, then replace table entry ``i`` by the gradient at the pre-step iterate."""
    data = state.data
    s, e = data.indptr[i], data.indptr[i + 1]
    idx, vals = data.indices[s:e], data.data[s:e]
    c = float(K.loss_coef(int(spec.loss), float(vals @ state.w[idx]), float(data.y[i])))
    ok = prox_sgd_step(state, g_hat, schedule, spec)
    state.table_mean[idx] += ((c - state.table_coef[i]) / data.n) * vals
    state.table_coef[i] = c
    return ok


def estimator_a_vector(state, w=None):
    """``a_i^t`` for every point at ``w`` (default: the current iterate)."""
    data = state.data
    w = state.w if w is None else w
    corr = model.coefficients(state.spec, data, w) - state.anchor_coef
    return corr * corr * data.sq_norms / (data.n * data.n)


def estimator_report(state, p):
    """(F, V_e, pseudo-variance) of the state's estimator under distribution ``p``."""
    data = state.data
    corr = model.coefficients(state.spec, data, state.w) - state.anchor_coef
    a = corr * corr * data.sq_norms / (data.n * data.n)
    ve = float(np.sum(a / p))
    cbar = data.X.T @ corr / data.n
    return model.full_cost(state.spec, data, state.w), ve, ve - float(cbar @ cbar)


# --------------------------------------------------------------------------
# sampler configuration


@dataclass(frozen=True)
class SamplerConfig:
    """How to build a sampler for one run.

    ``a_source`` selects the per-point bound vector feeding ``is-bound``,
    ``mabs`` and ``mabs2``: ``"bound"`` uses the analytic gradient bounds (with
    the problem's iterate radius), ``"initial"`` uses the feedback values at the
    starting point.
    """

    kind: str = "uniform"
    eta: float = DEFAULT_ETA
    t_scale: float = 1.0
    reset_bin: int | None = None
    a_source: str = "bound"

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigurationError(f"unknown sampler {self.kind!r}; choose from {SAMPLER_KINDS}")
        if self.a_source not in ("bound", "initial"):
            raise ConfigurationError(f"unknown a_source {self.a_source!r}")


def feedback_bounds(spec, data, kind=EstimatorKind.PLAIN_SGD, radius=None):
    """Per-point ``a_i >= sup_t a_i^t`` from the gradient bounds ``G_i``.

    Variance-reduced feedback is a squared difference of two gradients, hence
    the factor 4.
    """
    G = model.gradient_bounds(spec, data, radius)
    a = G * G / (data.n * data.n)
    if EstimatorKind(kind) != EstimatorKind.PLAIN_SGD:
        a = 4.0 * a
    return a


def build_sampler(cfg, spec, data, horizon, kind=EstimatorKind.PLAIN_SGD, w0=None):
    if isinstance(cfg, str):
        cfg = SamplerConfig(cfg)
    if cfg.kind == "uniform":
        return UniformSampler(data.n)
    if cfg.kind == "is-smoothness":
        return is_init_from_smoothness(model.smoothness_profile(spec, data))
    if cfg.a_source == "bound":
        a = feedback_bounds(spec, data, kind)
    else:
        w0 = np.zeros(data.d) if w0 is None else w0
        a = model.gradient_norms(spec, data, w0) ** 2 / data.n ** 2
        if EstimatorKind(kind) != EstimatorKind.PLAIN_SGD:
            a = 4.0 * a
    if cfg.kind == "is-bound":
        return is_init_from_bounds(a)
    horizon = max(int(horizon), 1)
    if cfg.kind == "mabs":
        a_sq = float(np.mean(a * a))
        if not a_sq > 0:
            raise ConfigurationError("all feedback bounds are zero; MABS step size undefined")
        return MabsSampler(data.n, horizon, a_sq, cfg.eta, cfg.t_scale, cfg.reset_bin)
    return Mabs2Sampler(a, horizon, cfg.eta, cfg.t_scale, cfg.reset_bin)


# --------------------------------------------------------------------------
# run harness


@dataclass
class RunTrace:
    """Per-iteration and periodic records of one run.

    ``t/i/p/a`` hold one entry per executed step. ``rec_*`` are the periodic
    records (step 0, every ``stride`` steps, the last step, and a ``+inf``
    sentinel if the run diverged).
    """

    t: np.ndarray
    i: np.ndarray
    p: np.ndarray
    a: np.ndarray
    rec_t: np.ndarray
    rec_F: np.ndarray
    rec_Ve: np.ndarray
    rec_Vp: np.ndarray
    final_w: np.ndarray
    weighted_sum: np.ndarray
    steps: int
    diverged: bool = False
    iterates: np.ndarray | None = None
    history_a: np.ndarray | None = None
    history_p: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def final_F(self):
        return float(self.rec_F[-1])

    @property
    def final_Ve(self):
        return float(self.rec_Ve[-1])

    @property
    def weighted_average(self):
        return weighted_average_iterate(self)


def weighted_average_iterate(trace):
    """2 / (T (T + 1)) * sum_t t * w^t over the iterates at which steps were taken."""
    T = trace.steps
    if T == 0:
        return trace.final_w.copy()
    if trace.iterates is not None and trace.iterates.shape[0] == T:
        tt = np.arange(1, T + 1, dtype=np.float64)
        return 2.0 / (T * (T + 1)) * (tt @ trace.iterates)
    return 2.0 / (T * (T + 1)) * trace.weighted_sum


def _uniform_stream(seed, T):
    return np.random.default_rng(seed).random((T, 2))


def run(spec, data, method="sgd", sampler="uniform", schedule=None, T=1000, seed=0,
        stride=None, w0=None, store_iterates=False, history=False, backend=None):
    """Run ``T`` iterations of ``method`` with the given sampler.

    ``sampler`` is a kind name, a :class:`SamplerConfig`, or a fresh sampler
    instance. ``history=True`` stores the full feedback vector and sampling
    distribution at every step (O(nT) memory; meant for small verification runs).
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    kind, proximal = METHODS[method]
    if schedule is None:
        raise ConfigurationError("a step schedule is required")
    if not isinstance(schedule, StepSchedule):
        schedule = StepSchedule.parse(schedule)
    T = int(T)
    if T < 0:
        raise ConfigurationError(f"T must be nonnegative, got {T}")
    stride = data.n if stride is None else int(stride)
    if stride < 1:
        raise ConfigurationError(f"stride must be positive, got {stride}")
    w = np.zeros(data.d) if w0 is None else np.array(w0, dtype=np.float64)
    if w.shape != (data.d,):
        raise ContractViolation(f"initial point must have shape ({data.d},)")
    if not hasattr(sampler, "draw_from"):
        sampler = build_sampler(sampler, spec, data, T, kind, w)
    elif sampler.n != data.n:
        raise ConfigurationError("sampler size does not match the dataset")

    uniforms = _uniform_stream(seed, T)
    backend = _accel.resolve_backend(backend)
    if backend == "numba":
        trace = _run_compiled(spec, data, kind, proximal, sampler, schedule, w, uniforms, stride,
                              store_iterates, history)
    else:
        trace = _run_numpy(spec, data, kind, proximal, sampler, schedule, w, uniforms, stride,
                           store_iterates, history)
    trace.meta.update(method=method, sampler=type(sampler).__name__, seed=seed, T=T,
                      stride=stride, schedule=schedule.describe(), backend=backend)
    return trace


def _n_records(T, stride):
    return T // stride + 3


def _run_compiled(spec, data, kind, proximal, sampler, schedule, w, uniforms, stride,
                  store_iterates, history):
    T = uniforms.shape[0]
    n, d = data.n, data.d
    if isinstance(sampler, MabsSampler) and sampler.t != 0:
        raise ConfigurationError("the compiled loop needs a fresh bandit sampler")
    skind, eta, delta, reset_bin, mix_p, mix_cum = sampler.kernel_args()
    sched_kind, sched_a, sched_b = schedule.kernel_args()
    out_i = np.zeros(T, dtype=np.int64)
    out_p = np.zeros(T)
    out_a = np.zeros(T)
    m = _n_records(T, stride)
    rec_t = np.zeros(m, dtype=np.int64)
    rec = np.zeros((3, m))
    wsum = np.zeros(d)
    iterates = np.zeros((T if store_iterates else 0, d))
    hist_a = np.zeros((T if history else 0, n))
    hist_p = np.zeros((T if history else 0, n))
    w = w.copy()
    bandit = isinstance(sampler, MabsSampler)
    if bandit:
        nodes = sampler.tree.nodes
        state = np.array([sampler.max_leaf, 0.0])
    else:
        nodes = np.zeros(2 * K.tree_size(n))
        state = np.array([1.0, 0.0])
    steps, diverged, nrec = K.run_loop(
        data.indptr, data.indices, data.data, data.y, data.sq_norms,
        int(spec.loss), int(spec.reg), spec.lam, int(kind), bool(proximal),
        sched_kind, sched_a, sched_b,
        skind, eta, delta, reset_bin, np.ascontiguousarray(mix_p, dtype=np.float64),
        np.ascontiguousarray(mix_cum, dtype=np.float64),
        nodes, state, w, uniforms, stride, out_i, out_p, out_a, rec_t, rec[0], rec[1], rec[2],
        wsum, iterates, hist_a, hist_p)
    steps = int(steps)
    if bandit:
        # leave the sampler as the object loop would have
        sampler.max_leaf = float(state[0])
        sampler.overflow_log_scale += float(state[1])
        sampler.t = steps - int(diverged)
    return RunTrace(
        t=np.arange(1, steps + 1), i=out_i[:steps], p=out_p[:steps], a=out_a[:steps],
        rec_t=rec_t[:nrec], rec_F=rec[0, :nrec], rec_Ve=rec[1, :nrec], rec_Vp=rec[2, :nrec],
        final_w=w, weighted_sum=wsum, steps=steps, diverged=bool(diverged),
        iterates=iterates[:steps] if store_iterates else None,
        history_a=hist_a[:steps] if history else None,
        history_p=hist_p[:steps] if history else None)


def _run_numpy(spec, data, kind, proximal, sampler, schedule, w, uniforms, stride,
               store_iterates, history):
    T = uniforms.shape[0]
    n, d = data.n, data.d
    state = init_state(kind, spec, data, w)
    out_i = np.zeros(T, dtype=np.int64)
    out_p = np.zeros(T)
    out_a = np.zeros(T)
    wsum = np.zeros(d)
    iterates = np.zeros((T, d)) if store_iterates else None
    hist_a = np.zeros((T, n)) if history else None
    hist_p = np.zeros((T, n)) if history else None
    recs = [(0, *estimator_report(state, sampler.probabilities()))]
    steps = 0
    for s in range(T):
        t = s + 1
        if kind == EstimatorKind.PROX_SVRG:
            if s > 0 and s % n == 0:
                prox_svrg_epoch_update(state, data, spec)
            state.bin_sum += state.w
        i, p = sampler.draw_from(uniforms[s, 0], uniforms[s, 1])
        if history:
            hist_p[s] = sampler.probabilities()
            hist_a[s] = estimator_a_vector(state)
        g, a = estimate_gradient(kind, state, i, p)
        out_i[s], out_p[s], out_a[s] = i, p, a
        if store_iterates:
            iterates[s] = state.w
        wsum += t * state.w
        if kind == EstimatorKind.SAGA:
            saga_step(state, i, g, a, schedule, spec)
        elif proximal:
            prox_sgd_step(state, g, schedule, spec)
        else:
            sgd_step(state, g, schedule, spec)
        steps = t
        if not _check_finite(state, a):
            recs.append((t, math.inf, math.inf, math.inf))
            break
        sampler.update(i, a, p)
        if t % stride == 0 or t == T:
            recs.append((t, *estimator_report(state, sampler.probabilities())))
    rec = np.array(recs, dtype=np.float64).reshape(-1, 4)
    return RunTrace(
        t=np.arange(1, steps + 1), i=out_i[:steps], p=out_p[:steps], a=out_a[:steps],
        rec_t=rec[:, 0].astype(np.int64), rec_F=rec[:, 1].copy(), rec_Ve=rec[:, 2].copy(),
        rec_Vp=rec[:, 3].copy(), final_w=state.w, weighted_sum=wsum, steps=steps,
        diverged=state.diverged,
        iterates=iterates[:steps] if store_iterates else None,
        history_a=hist_a[:steps] if history else None,
        history_p=hist_p[:steps] if history else None)
