"""Compiled-kernel switch.

Hot loops in :mod:`mabsgd._kernels` are decorated with :func:`njit`. When numba
is importable and ``MABSGD_DISABLE_NUMBA`` is unset, they are compiled; otherwise
the decorator is a no-op and the same source runs as plain Python/numpy.
The flag is read once, at import time.
"""

import os

_FLAG = "MABSGD_DISABLE_NUMBA"
DISABLED_BY_ENV = os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if DISABLED_BY_ENV:
        raise ImportError(f"numba disabled by {_FLAG}")
    import numba
    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False


def njit(*args, **kwargs):
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def default_backend():
    return "numba" if HAS_NUMBA else "numpy"


def resolve_backend(backend=None):
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable or disabled")
    return backend
