"""LIBSVM parsing, synthetic regression data, and trace/summary files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, LibsvmParseError, TraceSchemaError
from .model import Dataset

TRACE_SCHEMA_VERSION = 1
SUMMARY_SCHEMA_VERSION = 1
TRACE_COLUMNS = ("t", "i", "p_i", "a_it", "F", "Ve", "Vpseudo")

_POSITIVE = {"+1", "1", "+1.0", "1.0"}
_NEGATIVE = {"-1", "0", "-1.0", "0.0"}


def _open_text(source, mode="r"):
    if isinstance(source, (str, os.PathLike)):
        return open(source, mode, encoding="utf-8", newline="" if "w" in mode else None), True
    return source, False


def parse_libsvm(source, n_features=None, classification=True):
    """Read a LIBSVM text file into a :class:`Dataset`.

    Indices are 1-based on disk and 0-based in memory. With ``classification``
    labels must be one of +1/1, -1/0 (mapped to +-1); otherwise they are kept as
    real values. Explicit zero values are dropped.
    """
    fh, close = _open_text(source)
    labels, indptr, indices, values = [], [0], [], []
    try:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            lab = tokens[0]
            if classification:
                if lab in _POSITIVE:
                    labels.append(1.0)
                elif lab in _NEGATIVE:
                    labels.append(-1.0)
                else:
                    raise LibsvmParseError(lineno, f"label {lab!r} is not one of +1, -1, 0")
            else:
                try:
                    labels.append(float(lab))
                except ValueError:
                    raise LibsvmParseError(lineno, f"bad label {lab!r}") from None
            prev = 0
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise LibsvmParseError(lineno, f"malformed feature token {tok!r}")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise LibsvmParseError(lineno, f"malformed feature token {tok!r}") from None
                if idx < 1:
                    raise LibsvmParseError(lineno, f"feature index {idx} is not 1-based")
                if idx <= prev:
                    raise LibsvmParseError(lineno, f"feature index {idx} does not increase after {prev}")
                if not math.isfinite(val):
                    raise LibsvmParseError(lineno, f"non-finite value in {tok!r}")
                prev = idx
                if val != 0.0:
                    indices.append(idx - 1)
                    values.append(val)
            indptr.append(len(indices))
    finally:
        if close:
            fh.close()
    if not labels:
        raise LibsvmParseError(0, "no datapoints found")
    max_idx = max(indices) + 1 if indices else 1
    d = max_idx if n_features is None else int(n_features)
    if d < max_idx:
        raise LibsvmParseError(0, f"feature index {max_idx} exceeds declared dimension {d}")
    X = sp.csr_matrix((np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int64),
                       np.asarray(indptr, dtype=np.int64)), shape=(len(labels), d))
    return Dataset(X, labels)


def write_libsvm(data, sink):
    fh, close = _open_text(sink, "w")
    try:
        for i in range(data.n):
            s, e = data.indptr[i], data.indptr[i + 1]
            feats = " ".join(f"{j + 1}:{v!r}" for j, v in zip(data.indices[s:e].tolist(),
                                                              data.data[s:e].tolist()))
            label = data.y[i]
            lab = f"{label:+g}" if label in (1.0, -1.0) else repr(float(label))
            fh.write(f"{lab} {feats}".rstrip() + "\n")
    finally:
        if close:
            fh.close()


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    """Gaussian regression data with one point's features scaled by ``scale_c``.

    Column means are drawn from N(0, 1) and column standard deviations from
    |N(0, 1)| + 0.1. With ``classification`` the labels are replaced by their sign.
    """

    n: int = 101
    d: int = 5
    beta_std: float = 10.0
    noise_std: float = 1.0
    scale_c: float = 1.0
    seed: int = 0
    classification: bool = False

    def __post_init__(self):
        problems = []
        if self.n < 2:
            problems.append(f"synthetic n must be >= 2, got {self.n}")
        if self.d < 1:
            problems.append(f"synthetic d must be >= 1, got {self.d}")
        if not self.scale_c >= 1:
            problems.append(f"scale_c must be >= 1, got {self.scale_c}")
        if problems:
            raise ConfigurationError("; ".join(problems), problems)

    def to_dict(self):
        return asdict(self)


def _synthetic_parts(cfg):
    rng = np.random.default_rng(cfg.seed)
    beta = rng.normal(0.0, cfg.beta_std, cfg.d)
    col_mean = rng.normal(0.0, 1.0, cfg.d)
    col_std = np.abs(rng.normal(0.0, 1.0, cfg.d)) + 0.1
    X = rng.normal(col_mean, col_std, size=(cfg.n, cfg.d))
    y = X @ beta + rng.normal(0.0, cfg.noise_std, cfg.n)
    return X, y, beta


def generate_synthetic(cfg, return_beta=False):
    X, y, beta = _synthetic_parts(cfg)
    if cfg.scale_c != 1.0:
        j = int(np.argmax(np.einsum("ij,ij->i", X, X)))
        X[j] *= cfg.scale_c
    if cfg.classification:
        y = np.where(y >= 0, 1.0, -1.0)
    data = Dataset.from_dense(X, y)
    return (data, beta) if return_beta else data


def synthetic_tau(cfg, smoothness_factor=1.0):
    """Smoothness ratio max/mean of the generated data (factor cancels; kept for clarity)."""
    data = generate_synthetic(cfg)
    L = smoothness_factor * data.sq_norms
    return float(L.max() / L.mean())


def scale_for_tau(cfg, tau, tol=1e-10, max_iter=200):
    """Bisect ``scale_c`` so the generated dataset hits smoothness ratio ``tau``.

    Returns 1.0 when ``tau`` is at or below the unscaled ratio. Ratios at or
    above ``n`` are unreachable (a single point cannot exceed ``n`` times the mean).
    """
    from dataclasses import replace

    base = synthetic_tau(replace(cfg, scale_c=1.0))
    if tau <= base:
        return 1.0
    if tau >= cfg.n:
        raise ConfigurationError(f"tau={tau} is unreachable with n={cfg.n}")
    lo, hi = 1.0, 2.0
    while synthetic_tau(replace(cfg, scale_c=hi)) < tau:
        lo, hi = hi, hi * 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if synthetic_tau(replace(cfg, scale_c=mid)) < tau:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return hi


# --------------------------------------------------------------------------
# traces


def _fmt(x):
    return repr(float(x))


def trace_write(trace, sink):
    """CSV trace: comment line with JSON metadata, header, one row per step."""
    from .optimize import RunTrace  # noqa: F401  (type reference only)

    meta = {
        "schema_version": TRACE_SCHEMA_VERSION,
        "steps": int(trace.steps),
        "diverged": bool(trace.diverged),
        "final_w": [float(v) for v in trace.final_w],
        "weighted_sum": [float(v) for v in trace.weighted_sum],
        "meta": trace.meta,
    }
    fh, close = _open_text(sink, "w")
    try:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        recs = {int(t): k for k, t in enumerate(trace.rec_t)}
        rec_rows = []
        for t, k in sorted(recs.items()):
            rec_rows.append((t, k))
        rec_iter = iter(rec_rows)
        nxt = next(rec_iter, None)

        def periodic(t):
            nonlocal nxt
            if nxt is not None and nxt[0] == t:
                k = nxt[1]
                nxt = next(rec_iter, None)
                return [_fmt(trace.rec_F[k]), _fmt(trace.rec_Ve[k]), _fmt(trace.rec_Vp[k])]
            return ["", "", ""]

        writer.writerow(["0", "", "", ""] + periodic(0))
        for s in range(trace.steps):
            t = s + 1
            writer.writerow([str(t), str(int(trace.i[s])), _fmt(trace.p[s]), _fmt(trace.a[s])]
                            + periodic(t))
    finally:
        if close:
            fh.close()


def trace_read(source):
    from .optimize import RunTrace

    fh, close = _open_text(source)
    try:
        first = fh.readline()
        if not first.startswith("# "):
            raise TraceSchemaError("missing trace metadata line")
        try:
            meta = json.loads(first[2:])
        except json.JSONDecodeError as exc:
            raise TraceSchemaError(f"unreadable trace metadata: {exc}") from None
        version = meta.get("schema_version")
        if version != TRACE_SCHEMA_VERSION:
            raise TraceSchemaError(f"trace schema_version {version!r}, expected {TRACE_SCHEMA_VERSION}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != TRACE_COLUMNS:
            raise TraceSchemaError(f"unexpected trace columns {header!r}")
        ts, idx, ps, as_ = [], [], [], []
        rec_t, rec_F, rec_Ve, rec_Vp = [], [], [], []
        for row in reader:
            t = int(row[0])
            if row[1] != "":
                ts.append(t)
                idx.append(int(row[1]))
                ps.append(float(row[2]))
                as_.append(float(row[3]))
            if row[4] != "":
                rec_t.append(t)
                rec_F.append(float(row[4]))
                rec_Ve.append(float(row[5]))
                rec_Vp.append(float(row[6]))
    finally:
        if close:
            fh.close()
    return RunTrace(
        t=np.asarray(ts, dtype=np.int64), i=np.asarray(idx, dtype=np.int64),
        p=np.asarray(ps, dtype=np.float64), a=np.asarray(as_, dtype=np.float64),
        rec_t=np.asarray(rec_t, dtype=np.int64), rec_F=np.asarray(rec_F, dtype=np.float64),
        rec_Ve=np.asarray(rec_Ve, dtype=np.float64), rec_Vp=np.asarray(rec_Vp, dtype=np.float64),
        final_w=np.asarray(meta["final_w"], dtype=np.float64),
        weighted_sum=np.asarray(meta["weighted_sum"], dtype=np.float64),
        steps=int(meta["steps"]), diverged=bool(meta["diverged"]), meta=meta.get("meta", {}))


def summary_write(summary, sink):
    doc = dict(summary)
    doc["schema_version"] = SUMMARY_SCHEMA_VERSION
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    fh, close = _open_text(sink, "w")
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()


def summary_read(source):
    fh, close = _open_text(source)
    try:
        doc = json.load(fh)
    finally:
        if close:
            fh.close()
    if doc.get("schema_version") != SUMMARY_SCHEMA_VERSION:
        raise TraceSchemaError(f"summary schema_version {doc.get('schema_version')!r}, "
                               f"expected {SUMMARY_SCHEMA_VERSION}")
    return doc


def dumps_trace(trace):
    buf = io.StringIO()
    trace_write(trace, buf)
    return buf.getvalue()
