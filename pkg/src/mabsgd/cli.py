"""Command-line harness: ``run``, ``tau-sweep``, ``stability-sweep``, ``verify``, ``parse-check``.

Settings come from an optional YAML file (``--config``); any flag given on the
command line overrides the file. Exit codes: 0 success, 2 configuration error,
3 verification failure, 4 I/O or input-format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from . import experiments, model
from .data_io import SyntheticConfig, generate_synthetic, parse_libsvm, summary_write, trace_write
from .errors import ConfigurationError, LibsvmParseError, TraceSchemaError
from .model import Loss, ProblemSpec
from .optimize import METHODS, SAMPLER_KINDS, SamplerConfig, StepSchedule
from .verify import SUITES, run_suites

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_IO = 0, 2, 3, 4

DEFAULT_TAUS = (0.0, 10.0, 20.0, 40.0, 80.0)
DEFAULT_GAMMAS = (0.1, 0.5, 1.0, 2.0, 5.0)


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    synthetic: dict = field(default_factory=dict)
    loss: str | None = None
    reg: str = "none"
    lam: float = 0.0
    radius: float | None = model.DEFAULT_RADIUS
    estimator: str = "sgd"
    sampler: str = "uniform"
    samplers: list | None = None
    eta: float = 0.4
    t_scale: float = 1.0
    reset_bin: int | None = None
    a_source: str | None = None
    schedule: str | None = None
    T: int | None = None
    repeats: int = 1
    seed: int = 0
    stride: int | None = None
    out: str = "out"
    workers: int | None = None
    taus: list | None = None
    gammas: list | None = None
    blowup: float = 10.0

    def is_synthetic(self):
        return self.dataset == "synthetic"


# config-file keys -> ExperimentConfig fields
_ALIASES = {"lambda": "lam", "t-scale": "t_scale", "reset-bin": "reset_bin",
            "a-source": "a_source", "gamma": "schedule", "tau_grid": "taus", "gamma_grid": "gammas"}


def _flatten(doc):
    out = {}
    for key, value in (doc or {}).items():
        key = _ALIASES.get(key, key.replace("-", "_"))
        if key == "problem" and isinstance(value, dict):
            out.update(_flatten(value))
        elif key == "sampler" and isinstance(value, dict):
            inner = dict(value)
            if "kind" in inner:
                out["sampler"] = inner.pop("kind")
            out.update(_flatten(inner))
        else:
            out[key] = value
    return out


def load_config_file(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
    if doc is not None and not isinstance(doc, dict):
        raise ConfigurationError(f"config {path} must be a mapping at the top level")
    return doc or {}, text


def build_config(file_doc, overrides):
    known = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}
    merged = _flatten(file_doc)
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "schedule" in merged and not isinstance(merged["schedule"], str):
        merged["schedule"] = str(merged["schedule"])
    cfg = ExperimentConfig(**merged)
    validate(cfg)
    return cfg


def validate(cfg):
    problems = []
    if not cfg.is_synthetic() and not os.path.isfile(cfg.dataset):
        problems.append(f"dataset file {cfg.dataset!r} does not exist")
    if cfg.estimator not in METHODS:
        problems.append(f"estimator must be one of {sorted(METHODS)}, got {cfg.estimator!r}")
    for s in [cfg.sampler] + list(cfg.samplers or []):
        if s not in SAMPLER_KINDS:
            problems.append(f"sampler must be one of {list(SAMPLER_KINDS)}, got {s!r}")
    if cfg.T is not None and int(cfg.T) < 0:
        problems.append(f"T must be >= 0, got {cfg.T}")
    if int(cfg.repeats) < 1:
        problems.append(f"repeats must be >= 1, got {cfg.repeats}")
    if cfg.stride is not None and int(cfg.stride) < 1:
        problems.append(f"stride must be >= 1, got {cfg.stride}")
    if cfg.workers is not None and int(cfg.workers) < 1:
        problems.append(f"workers must be >= 1, got {cfg.workers}")
    if cfg.a_source not in (None, "bound", "initial"):
        problems.append(f"a_source must be 'bound' or 'initial', got {cfg.a_source!r}")
    if not 0 < float(cfg.eta) < 0.5:
        problems.append(f"eta must lie in (0, 0.5), got {cfg.eta}")
    if not float(cfg.t_scale) >= 1:
        problems.append(f"t-scale must be >= 1, got {cfg.t_scale}")
    if cfg.reset_bin is not None and int(cfg.reset_bin) < 1:
        problems.append(f"reset-bin must be >= 1, got {cfg.reset_bin}")
    if not float(cfg.lam) >= 0:
        problems.append(f"lambda must be >= 0, got {cfg.lam}")
    if cfg.schedule is not None:
        try:
            StepSchedule.parse(cfg.schedule)
        except ConfigurationError as exc:
            problems.append(str(exc))
    try:
        Loss.parse(cfg.loss or "ridge")
        model.Regularizer.parse(cfg.reg)
    except ConfigurationError as exc:
        problems.append(str(exc))
    if cfg.is_synthetic():
        allowed = set(SyntheticConfig.__dataclass_fields__)
        bad = sorted(set(cfg.synthetic) - allowed)
        if bad:
            problems.append(f"unknown synthetic keys: {', '.join(bad)}")
        else:
            try:
                SyntheticConfig(**cfg.synthetic)
            except ConfigurationError as exc:
                problems.extend(exc.problems or [str(exc)])
    if problems:
        raise ConfigurationError("; ".join(problems), problems)


def resolve_problem(cfg):
    loss = cfg.loss or ("ridge" if cfg.is_synthetic() else "logistic")
    return ProblemSpec(loss, cfg.reg, float(cfg.lam), cfg.radius)


def load_dataset(cfg, spec):
    if cfg.is_synthetic():
        syn = dict(cfg.synthetic)
        syn.setdefault("classification", spec.loss.is_classification)
        return generate_synthetic(SyntheticConfig(**syn))
    return parse_libsvm(cfg.dataset, classification=spec.loss.is_classification)


def default_schedule(cfg):
    if cfg.schedule is not None:
        return StepSchedule.parse(cfg.schedule)
    if cfg.is_synthetic():
        return StepSchedule.constant(4e-3)
    # real-data protocol: gamma = 1, Prox-SVRG uses the larger step 2
    return StepSchedule.constant(2.0 if cfg.estimator == "prox-svrg" else 1.0)


def _workers(cfg):
    return int(cfg.workers) if cfg.workers is not None else experiments.default_workers()


def config_echo(cfg, raw_text=None):
    echo = {"resolved": asdict(cfg)}
    if raw_text is not None:
        echo["file"] = raw_text
    return echo


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(getattr(row, c)) for c in columns])


# --------------------------------------------------------------------------
# commands


def cmd_run(cfg, raw_text=None):
    spec = resolve_problem(cfg)
    data = load_dataset(cfg, spec)
    schedule = default_schedule(cfg)
    T = int(cfg.T) if cfg.T is not None else (3000 if cfg.is_synthetic() else 30 * data.n)
    sampler = SamplerConfig(cfg.sampler, cfg.eta, cfg.t_scale, cfg.reset_bin, cfg.a_source or "bound")
    traces = experiments.run_repeats(spec, data, cfg.estimator, sampler, schedule, T,
                                     int(cfg.repeats), int(cfg.seed), cfg.stride, _workers(cfg))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for r, tr in enumerate(traces):
        trace_write(tr, out / f"trace_{r:04d}.csv")
    summary = experiments.summarize(traces)
    summary.update(command="run", config=config_echo(cfg, raw_text), T=T, n=data.n, d=data.d,
                   schedule=schedule.describe())
    summary_write(summary, out / "summary.json")
    flagged = sum(summary["diverged"])
    print(f"run: {len(traces)} repeats, mean final F {summary['mean_F']!r}, "
          f"mean final Ve {summary['mean_Ve']!r}, diverged {flagged}")
    return EXIT_OK


def cmd_tau_sweep(cfg, raw_text=None):
    if not cfg.is_synthetic():
        raise ConfigurationError("tau-sweep runs on the synthetic generator; use --dataset synthetic")
    spec = ProblemSpec(cfg.loss or "ridge", cfg.reg, float(cfg.lam), cfg.radius)
    if spec.loss != Loss.RIDGE:
        raise ConfigurationError("tau-sweep is defined for the ridge sub-cost")
    base = SyntheticConfig(**{k: v for k, v in cfg.synthetic.items() if k != "scale_c"})
    schedule = default_schedule(cfg)
    rows = experiments.tau_sweep(
        base, cfg.taus or DEFAULT_TAUS, tuple(cfg.samplers or experiments.TAU_SAMPLERS),
        cfg.estimator, schedule, int(cfg.T) if cfg.T is not None else 3000, int(cfg.repeats),
        int(cfg.seed), float(cfg.eta), cfg.a_source or "initial", cfg.stride, _workers(cfg), spec)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "tau_sweep.csv", experiments.TAU_COLUMNS, rows)
    summary_write({"command": "tau-sweep", "config": config_echo(cfg, raw_text),
                   "rows": [asdict(r) for r in rows]}, out / "summary.json")
    for r in rows:
        print(f"tau={r.tau:.2f} {r.sampler:<14} gap={r.mean_gap:.4g} Ve={r.mean_Ve:.4g}")
    return EXIT_OK


def cmd_stability_sweep(cfg, raw_text=None):
    spec = resolve_problem(cfg)
    data = load_dataset(cfg, spec)
    if cfg.schedule is not None:
        raise ConfigurationError("stability-sweep sets its own constant steps; use --gammas")
    rows = experiments.stability_sweep(
        spec, data, cfg.gammas or DEFAULT_GAMMAS, tuple(cfg.samplers or ("uniform", "mabs")),
        cfg.estimator, cfg.T, int(cfg.repeats), int(cfg.seed), float(cfg.eta),
        cfg.a_source or "bound", float(cfg.blowup), cfg.stride, _workers(cfg))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "stability.csv", experiments.STABILITY_COLUMNS, rows)
    largest = {s: experiments.largest_stable_gamma(rows, s) for s in sorted({r.sampler for r in rows})}
    summary_write({"command": "stability-sweep", "config": config_echo(cfg, raw_text),
                   "rows": [asdict(r) for r in rows], "largest_stable_gamma": largest},
                  out / "summary.json")
    for r in rows:
        print(f"gamma={r.gamma:g} {r.sampler:<14} F={r.mean_F:.6g} diverged={r.diverged_fraction:.2f}")
    return EXIT_OK


def cmd_verify(suites, seed, out=None):
    results = run_suites(suites, seed)
    report = {"passed": all(r.passed for r in results), "suites": [r.to_dict() for r in results]}
    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
    print(text)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "verify.json").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def _json_default(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    raise TypeError(f"not serialisable: {type(v).__name__}")


def cmd_parse_check(path, loss="logistic"):
    spec = ProblemSpec(loss)
    data = parse_libsvm(path, classification=spec.loss.is_classification)
    prof = model.smoothness_profile(spec, data)
    print(json.dumps({"path": str(path), "n": data.n, "d": data.d, "nnz": int(data.X.nnz),
                      "tau": prof.tau}, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _common(p):
    p.add_argument("--config", help="YAML experiment file; flags override its values")
    p.add_argument("--dataset", help="LIBSVM file path, or 'synthetic'")
    p.add_argument("--loss", choices=["logistic", "squared-hinge", "ridge"])
    p.add_argument("--reg", choices=["none", "l1", "l2"])
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--radius", type=float, help="iterate-norm bound used by gradient bounds")
    p.add_argument("--estimator", choices=sorted(METHODS))
    p.add_argument("--sampler", choices=list(SAMPLER_KINDS))
    p.add_argument("--samplers", type=lambda s: s.split(","), help="comma-separated sampler list")
    p.add_argument("--eta", type=float)
    p.add_argument("--t-scale", dest="t_scale", type=float)
    p.add_argument("--reset-bin", dest="reset_bin", type=int)
    p.add_argument("--a-source", dest="a_source", choices=["bound", "initial"])
    p.add_argument("--T", dest="T", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gamma", type=float, help="constant step size")
    g.add_argument("--schedule", help="constant:G | inverse:MU | shifted:ALPHA,MU")
    p.add_argument("--stride", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--synthetic-seed", dest="synthetic_seed", type=int)
    p.add_argument("--synthetic-n", dest="synthetic_n", type=int)


def make_parser():
    parser = argparse.ArgumentParser(prog="mabsgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="repeated optimisation runs with per-repeat traces")
    _common(p)
    p = sub.add_parser("tau-sweep", help="synthetic ridge sweep over the smoothness ratio")
    _common(p)
    p.add_argument("--taus", type=lambda s: [float(v) for v in s.split(",")])
    p = sub.add_parser("stability-sweep", help="final objective across constant step sizes")
    _common(p)
    p.add_argument("--gammas", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--blowup", type=float)
    p = sub.add_parser("verify", help="run the self-check suites")
    p.add_argument("--suite", action="append", choices=["all"] + list(SUITES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p = sub.add_parser("parse-check", help="validate a LIBSVM file")
    p.add_argument("path")
    p.add_argument("--loss", default="logistic", choices=["logistic", "squared-hinge", "ridge"])
    return parser


def _overrides(args):
    ov = {k: v for k, v in vars(args).items()
          if k not in ("command", "config", "gamma", "synthetic_seed", "synthetic_n")}
    if getattr(args, "gamma", None) is not None:
        ov["schedule"] = f"constant:{args.gamma!r}"
    return ov


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "verify":
            return cmd_verify(args.suite, args.seed, args.out)
        if args.command == "parse-check":
            return cmd_parse_check(args.path, args.loss)
        file_doc, raw = ({}, None)
        if args.config:
            file_doc, raw = load_config_file(args.config)
        cfg = build_config(file_doc, _overrides(args))
        syn = dict(cfg.synthetic)
        if args.synthetic_seed is not None:
            syn["seed"] = args.synthetic_seed
        if args.synthetic_n is not None:
            syn["n"] = args.synthetic_n
        if syn != cfg.synthetic:
            cfg = replace(cfg, synthetic=syn)
            validate(cfg)
        handler = {"run": cmd_run, "tau-sweep": cmd_tau_sweep,
                   "stability-sweep": cmd_stability_sweep}[args.command]
        return handler(cfg, raw)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, LibsvmParseError, TraceSchemaError) as exc:
        print(f"input/output error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
