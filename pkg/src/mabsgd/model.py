"""Datasets, sub-cost families and regularisers for sparse linear models.

Every sub-cost here depends on ``w`` only through the margin ``z = <x_i, w>``,
so ``grad phi_i(w) = coef_i(w) * x_i`` with a scalar ``coef_i``. The optimisers
exploit that: anchors and gradient tables store one scalar per point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import _kernels as K
from .errors import ConfigurationError, ContractViolation

DEFAULT_RADIUS = 10.0


class Loss(enum.IntEnum):
    LOGISTIC = K.LOGISTIC
    SQUARED_HINGE = K.SQUARED_HINGE
    RIDGE = K.RIDGE

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"logistic": cls.LOGISTIC, "squared_hinge": cls.SQUARED_HINGE,
                   "svm": cls.SQUARED_HINGE, "hinge2": cls.SQUARED_HINGE, "ridge": cls.RIDGE,
                   "squared": cls.RIDGE}
        if key not in aliases:
            raise ConfigurationError(f"unknown loss {value!r}")
        return aliases[key]

    @property
    def is_classification(self):
        return self is not Loss.RIDGE


class Regularizer(enum.IntEnum):
    NONE = K.REG_NONE
    L1 = K.REG_L1
    L2 = K.REG_L2

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        key = str(value).strip().lower()
        aliases = {"none": cls.NONE, "l1": cls.L1, "l2": cls.L2, "": cls.NONE}
        if key not in aliases:
            raise ConfigurationError(f"unknown regularizer {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class ProblemSpec:
    """Loss family, regulariser and its weight ``lam``.

    ``radius`` bounds the iterate norm; it only matters for gradient bounds of
    the losses whose gradient grows with ``w`` (ridge, squared hinge).
    """

    loss: Loss
    reg: Regularizer = Regularizer.NONE
    lam: float = 0.0
    radius: float | None = DEFAULT_RADIUS

    def __post_init__(self):
        object.__setattr__(self, "loss", Loss.parse(self.loss))
        object.__setattr__(self, "reg", Regularizer.parse(self.reg))
        lam = float(self.lam)
        if not lam >= 0.0:
            raise ConfigurationError(f"lambda must be nonnegative, got {self.lam!r}")
        object.__setattr__(self, "lam", lam)


class SparseVector(NamedTuple):
    indices: np.ndarray
    values: np.ndarray

    def toarray(self, d):
        out = np.zeros(d)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True)
class DataPoint:
    indices: np.ndarray
    values: np.ndarray
    label: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or idx.shape != val.shape:
            raise ContractViolation("indices and values must be 1-d arrays of equal length")
        if idx.size and (idx[0] < 0 or np.any(np.diff(idx) <= 0)):
            raise ContractViolation("feature indices must be nonnegative and strictly increasing")
        if np.any(val == 0.0):
            raise ContractViolation("explicit zero stored in sparse features")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "label", float(self.label))

    @classmethod
    def from_dense(cls, x, label):
        x = np.asarray(x, dtype=np.float64)
        nz = np.flatnonzero(x)
        return cls(nz, x[nz], label)

    def dot(self, w):
        return float(np.dot(self.values, w[self.indices]))

    @property
    def sq_norm(self):
        return float(np.dot(self.values, self.values))


class Dataset:
    """Immutable CSR feature matrix with labels."""

    def __init__(self, X, y, d=None):
        X = sp.csr_matrix(X, dtype=np.float64)
        X.eliminate_zeros()
        X.sort_indices()
        if d is not None:
            d = int(d)
            if X.shape[1] > d:
                if X.nnz and X.indices.max() >= d:
                    raise ContractViolation(f"feature index exceeds dimension {d}")
            X = sp.csr_matrix((X.data, X.indices, X.indptr), shape=(X.shape[0], d))
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ContractViolation("dataset needs n >= 1 points and d >= 1 features")
        if y.shape[0] != X.shape[0]:
            raise ContractViolation("label count does not match row count")
        self.X = X
        self.indptr = X.indptr.astype(np.int64)
        self.indices = X.indices.astype(np.int64)
        self.data = X.data
        self.y = y
        self.sq_norms = np.asarray(X.multiply(X).sum(axis=1)).ravel()
        for arr in (self.indptr, self.indices, self.data, self.y, self.sq_norms):
            arr.setflags(write=False)

    @classmethod
    def from_points(cls, points, d=None):
        points = list(points)
        if not points:
            raise ContractViolation("dataset needs at least one point")
        indptr = np.zeros(len(points) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([p.indices.size for p in points])
        indices = np.concatenate([p.indices for p in points])
        values = np.concatenate([p.values for p in points])
        if d is None:
            d = int(indices.max()) + 1 if indices.size else 1
        elif indices.size and indices.max() >= d:
            raise ContractViolation(f"feature index exceeds dimension {d}")
        X = sp.csr_matrix((values, indices, indptr), shape=(len(points), d))
        return cls(X, [p.label for p in points])

    @classmethod
    def from_dense(cls, X, y):
        return cls(sp.csr_matrix(np.atleast_2d(np.asarray(X, dtype=np.float64))), y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def point(self, i):
        s, e = self.indptr[i], self.indptr[i + 1]
        return DataPoint(self.indices[s:e].copy(), self.data[s:e].copy(), self.y[i])

    @property
    def points(self):
        return [self.point(i) for i in range(self.n)]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.X.shape == other.X.shape
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.data, other.data)
                and np.array_equal(self.y, other.y))

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d}, nnz={self.X.nnz})"


def _check_w(w, d):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (d,):
        raise ContractViolation(f"expected w of shape ({d},), got {w.shape}")
    return w


def _check_point_w(point, w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or (point.indices.size and point.indices[-1] >= w.shape[0]):
        raise ContractViolation("w is shorter than the point's feature support")
    return w


# --------------------------------------------------------------------------
# vectorised loss pieces (margin -> value / derivative)


def loss_values(loss, z, y):
    if loss == Loss.LOGISTIC:
        return np.logaddexp(0.0, -y * z)
    if loss == Loss.SQUARED_HINGE:
        return np.maximum(1.0 - y * z, 0.0) ** 2
    return 0.5 * (z - y) ** 2


def loss_coefs(loss, z, y):
    if loss == Loss.LOGISTIC:
        return -y * expit(-y * z)
    if loss == Loss.SQUARED_HINGE:
        return -2.0 * y * np.maximum(1.0 - y * z, 0.0)
    return z - y


def margins(data, w):
    return data.X @ _check_w(w, data.d)


def coefficients(spec, data, w):
    """Per-point scalar ``coef_i`` with ``grad phi_i(w) = coef_i * x_i``."""
    return loss_coefs(spec.loss, margins(data, w), data.y)


def gradient_norms(spec, data, w):
    return np.abs(coefficients(spec, data, w)) * np.sqrt(data.sq_norms)


# --------------------------------------------------------------------------
# public operations


def sub_cost(spec, point, w):
    w = _check_point_w(point, w)
    return float(loss_values(spec.loss, point.dot(w), point.label))


def sub_gradient(spec, point, w):
    w = _check_point_w(point, w)
    c = float(loss_coefs(spec.loss, point.dot(w), point.label))
    return SparseVector(point.indices.copy(), c * point.values)


def reg_value(spec, w):
    w = np.asarray(w, dtype=np.float64)
    if spec.reg == Regularizer.L1:
        return float(np.abs(w).sum())
    if spec.reg == Regularizer.L2:
        return 0.5 * float(w @ w)
    return 0.0


def reg_subgradient(spec, w):
    w = np.asarray(w, dtype=np.float64)
    if spec.reg == Regularizer.L1:
        return np.sign(w)
    if spec.reg == Regularizer.L2:
        return w.copy()
    return np.zeros_like(w)


def full_cost(spec, data, w):
    z = margins(data, w)
    return float(loss_values(spec.loss, z, data.y).mean()) + spec.lam * reg_value(spec, w)


def full_gradient(spec, data, w):
    """Gradient of the unregularised mean ``f``."""
    return data.X.T @ coefficients(spec, data, w) / data.n


def prox(spec, v, step):
    """argmin_w  lam * r(w) + ||w - v||^2 / (2 * step)."""
    if not step > 0:
        raise ContractViolation(f"prox step must be positive, got {step!r}")
    v = np.asarray(v, dtype=np.float64)
    if spec.reg == Regularizer.L1:
        thr = step * spec.lam
        return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)
    if spec.reg == Regularizer.L2:
        return v / (1.0 + step * spec.lam)
    return v.copy()


@dataclass(frozen=True)
class SmoothnessProfile:
    per_point: np.ndarray = field(repr=False)
    max: float
    mean: float
    tau: float


_SMOOTHNESS_FACTOR = {Loss.LOGISTIC: 0.25, Loss.SQUARED_HINGE: 2.0, Loss.RIDGE: 1.0}


def smoothness_profile(spec, data):
    L = _SMOOTHNESS_FACTOR[spec.loss] * np.asarray(data.sq_norms, dtype=np.float64)
    mean = float(L.mean())
    mx = float(L.max())
    tau = mx / mean if mean > 0 else 1.0
    return SmoothnessProfile(L, mx, mean, tau)


def gradient_bound(spec, point, radius=None):
    """Upper bound ``G_i`` on ``||grad phi_i(w)||`` over ``||w|| <= radius``."""
    norm = float(np.sqrt(point.sq_norm))
    if spec.loss == Loss.LOGISTIC:
        return norm
    R = spec.radius if radius is None else radius
    if R is None:
        raise ConfigurationError(f"{spec.loss.name.lower()} gradients are unbounded without an iterate radius")
    if spec.loss == Loss.RIDGE:
        return norm * (R * norm + abs(point.label))
    return 2.0 * norm * (1.0 + R * norm)


def gradient_bounds(spec, data, radius=None):
    norms = np.sqrt(data.sq_norms)
    if spec.loss == Loss.LOGISTIC:
        return norms
    R = spec.radius if radius is None else radius
    if R is None:
        raise ConfigurationError(f"{spec.loss.name.lower()} gradients are unbounded without an iterate radius")
    if spec.loss == Loss.RIDGE:
        return norms * (R * norms + np.abs(data.y))
    return 2.0 * norms * (1.0 + R * norms)
