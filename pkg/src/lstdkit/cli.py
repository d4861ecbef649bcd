"""Command line front end: ``run``, ``verify`` and ``generate``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure (run) or
failed assertion (verify).
"""

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import estimators as est
from .exceptions import ConfigError, MaxItersExceeded, SingularGram, SingularSystem, Unsupported
from .instances import generate_problem
from .mrp import (
    Mrp,
    RewardNoise,
    episodic_matrices,
    exact_value,
    sample_episodes,
    sample_trajectory,
    stationary_weights,
)
from .regularizers import RegularizationSpec, apply_regularizer
from .serialization import Problem, dump_problem, dumps, load_json, load_problem, problem_from_dict
from .verification import run_suite, suite_passed

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

CSV_COLUMNS = ("estimator_id", "N", "seed", "weight_error_inf", "value_error_xi",
               "condition_number", "wall_time_ms")

SAMPLE_ESTIMATORS = ("lstd_sample", "lstd_pinv", "brm_sample", "lds", "td_iterate")
DESIGN_ESTIMATORS = ("lstd_design", "brm_design")
EPISODIC_ESTIMATORS = ("episodic",)
NUMERIC_ERRORS = (SingularSystem, SingularGram, MaxItersExceeded, np.linalg.LinAlgError)

CONFIG_FIELDS = {"problem", "problem_file", "generator", "estimators", "sample_sizes",
                 "repetitions", "seed", "format", "output", "timing", "jobs"}


# ---------------------------------------------------------------------------
# config

@dataclass
class RunConfig:
    problem: Problem
    estimators: list
    sample_sizes: list
    repetitions: int = 1
    seed: int = 0
    format: str = "csv"
    output: str | None = None
    timing: bool = False
    jobs: int = 1


def _int_field(doc, key, default=None, minimum=None):
    val = doc.get(key, default)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"config.{key}: must be an integer, got {val!r}")
    if minimum is not None and val < minimum:
        raise ConfigError(f"config.{key}: must be >= {minimum}, got {val}")
    return val


def _problem_source(doc, base):
    given = [k for k in ("problem", "problem_file", "generator") if k in doc]
    if len(given) != 1:
        raise ConfigError("config: give exactly one of 'problem', 'problem_file', 'generator'")
    key = given[0]
    if key == "problem":
        return problem_from_dict(doc["problem"], where="config.problem")
    if key == "problem_file":
        path = Path(doc["problem_file"])
        if not path.is_absolute():
            path = base / path
        return load_problem(path)
    gen = doc["generator"]
    if not isinstance(gen, dict):
        raise ConfigError("config.generator: must be an object")
    unknown = set(gen) - {"states", "features", "transient", "seed", "gamma", "noise_std"}
    if unknown:
        raise ConfigError(f"config.generator: unknown fields {sorted(unknown)}")
    try:
        inst = generate_problem(int(gen.get("states", 0)), int(gen.get("features", 0)),
                                int(gen.get("transient", 0)), int(gen.get("seed", 0)),
                                gen.get("gamma"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.generator: {exc}") from None
    std = float(gen.get("noise_std", 0.0))
    mrp = inst.mrp
    if std > 0:
        mrp = Mrp(mrp.transition, mrp.mean_reward, mrp.discount,
                  RewardNoise("gaussian", std=[std]))
    return Problem(inst.fmap, mrp=mrp)


def _estimator_entry(entry, i, problem):
    where = f"config.estimators[{i}]"
    if isinstance(entry, dict):
        try:
            spec = RegularizationSpec.from_dict(entry)
            spec.check_dimension(problem.fmap.n_features)
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
        return spec.estimator_id, spec
    if not isinstance(entry, str):
        raise ConfigError(f"{where}: must be an estimator id or a regularization object")
    allowed = EPISODIC_ESTIMATORS if problem.is_episodic else SAMPLE_ESTIMATORS + DESIGN_ESTIMATORS
    if entry not in allowed:
        kind = "episodic" if problem.is_episodic else "continuing"
        raise ConfigError(f"{where}: {entry!r} is not available for a {kind} problem; "
                          f"choose from {', '.join(allowed)}")
    return entry, None


def parse_config(doc, base=Path(".")):
    if not isinstance(doc, dict):
        raise ConfigError("config: must be a JSON object")
    unknown = set(doc) - CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"config: unknown fields {sorted(unknown)}")
    problem = _problem_source(doc, base)
    ests = doc.get("estimators")
    if not isinstance(ests, list) or not ests:
        raise ConfigError("config.estimators: must be a non-empty list")
    estimators = [_estimator_entry(e, i, problem) for i, e in enumerate(ests)]
    sizes = doc.get("sample_sizes")
    if not isinstance(sizes, list) or not sizes:
        raise ConfigError("config.sample_sizes: must be a non-empty list of integers")
    for i, n in enumerate(sizes):
        if isinstance(n, bool) or not isinstance(n, int) or n < 2:
            raise ConfigError(f"config.sample_sizes[{i}]: must be an integer >= 2, got {n!r}")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError("config.sample_sizes: must be strictly increasing")
    reps = _int_field(doc, "repetitions", 1, minimum=1)
    seed = _int_field(doc, "seed", 0, minimum=0)
    jobs = _int_field(doc, "jobs", 1, minimum=1)
    fmt = doc.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"config.format: must be 'csv' or 'json', got {fmt!r}")
    timing = doc.get("timing", False)
    if not isinstance(timing, bool):
        raise ConfigError("config.timing: must be true or false")
    return RunConfig(problem, estimators, sizes, reps, seed, fmt, doc.get("output"), timing, jobs)


def load_config(path):
    path = Path(path)
    return parse_config(load_json(path), base=path.parent)


# ---------------------------------------------------------------------------
# run

class _Reference:
    """Design-form weights, true values and state weights for the error columns."""

    def __init__(self, problem):
        phi = problem.fmap.phi
        if problem.is_episodic:
            e = problem.episodic
            self.w = est.episodic_lstd_design(e, problem.fmap).w
            self.v = est.episodic_value(e)
            self.xi = episodic_matrices(e)[2].weights[:e.n_states]
            self.gamma = e.discount
        else:
            m = problem.mrp
            xi = stationary_weights(m)
            self.w = est.lstd_design(m, problem.fmap, xi).w
            self.v = exact_value(m)
            self.xi = xi.weights
            self.gamma = m.discount
        self.phi = phi


def _estimate(eid, spec, problem, data, n, gamma):
    if spec is not None:
        if problem.is_episodic:
            system = est.episodic_system(data.head(n), gamma)
        else:
            system = est.sample_system(data.head(n), gamma)
        return apply_regularizer(system, spec)
    if eid == "episodic":
        return est.episodic_lstd(data.head(n), gamma)
    if eid == "lstd_design":
        return est.lstd_design(problem.mrp, problem.fmap)
    if eid == "brm_design":
        return est.brm_design(problem.mrp, problem.fmap)
    traj = data.head(n)
    if eid == "lstd_sample":
        return est.lstd_sample(traj, gamma)
    if eid == "lstd_pinv":
        return est.lstd_pinv(traj, gamma)
    if eid == "brm_sample":
        return est.brm_sample(traj, gamma)
    if eid == "lds":
        return est.lds_sample(traj, gamma)[2]
    return est.td_iterate_sample(traj, gamma)[0]


def _repetition(cfg, ref, rep):
    seed = cfg.seed + rep
    n_max = cfg.sample_sizes[-1]
    p = cfg.problem
    if p.is_episodic:
        data = sample_episodes(p.episodic, p.fmap, n_max, seed=seed)
    else:
        data = sample_trajectory(p.mrp, p.fmap, n_max, seed=seed, with_alt=True)
    rows, failures = [], []
    for eid, spec in cfg.estimators:
        for n in cfg.sample_sizes:
            start = time.perf_counter()
            try:
                w = _estimate(eid, spec, p, data, n, ref.gamma)
            except NUMERIC_ERRORS as exc:
                failures.append(f"{eid} N={n} seed={seed}: {exc}")
                rows.append({"estimator_id": eid, "N": n, "seed": seed,
                             "weight_error_inf": np.nan, "value_error_xi": np.nan,
                             "condition_number": np.nan, "wall_time_ms": None})
                continue
            elapsed = (time.perf_counter() - start) * 1e3
            diff = ref.phi @ w.w - ref.v
            rows.append({
                "estimator_id": eid, "N": n, "seed": seed,
                "weight_error_inf": float(np.max(np.abs(w.w - ref.w))),
                "value_error_xi": float(np.sqrt(np.sum(ref.xi * diff ** 2))),
                "condition_number": float(w.diagnostics.get("condition_number", np.nan)),
                "wall_time_ms": elapsed if cfg.timing else None,
            })
    return rows, failures


def _fmt(val):
    if val is None:
        return ""
    if isinstance(val, float):
        return dumps(val)
    return str(val)


def format_rows(rows, fmt):
    if fmt == "json":
        return dumps(rows, indent=2) + "\n"
    lines = [",".join(CSV_COLUMNS)]
    lines += [",".join(_fmt(r[c]) for c in CSV_COLUMNS) for r in rows]
    return "\n".join(lines) + "\n"


def execute(cfg):
    """Run every (estimator, N, repetition); returns ``(rows, failures)`` in key order."""
    ref = _Reference(cfg.problem)
    reps = range(cfg.repetitions)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(lambda r: _repetition(cfg, ref, r), reps))
    else:
        results = [_repetition(cfg, ref, r) for r in reps]
    order = {eid: i for i, (eid, _) in enumerate(cfg.estimators)}
    rows = [row for res in results for row in res[0]]
    rows.sort(key=lambda r: (order[r["estimator_id"]], r["N"], r["seed"]))
    failures = [f for res in results for f in res[1]]
    return rows, failures


def cmd_run(args):
    cfg = load_config(args.config)
    if args.format:
        cfg.format = args.format
    if args.timing:
        cfg.timing = True
    rows, failures = execute(cfg)
    text = format_rows(rows, cfg.format)
    out = args.out or cfg.output
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    for f in failures:
        print(f"numeric failure: {f}", file=sys.stderr)
    return EXIT_NUMERIC if failures else EXIT_OK


def cmd_verify(args):
    if args.count < 0:
        raise ConfigError("--count must be non-negative")
    reports = run_suite(args.suite, args.count, args.seed)
    text = "".join(r.to_json() + "\n" for r in reports)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if suite_passed(reports) else EXIT_NUMERIC


def cmd_generate(args):
    if args.gamma is not None and not 0.0 <= args.gamma < 1.0:
        raise ConfigError("--gamma must lie in [0, 1)")
    inst = generate_problem(args.states, args.features, args.transient, args.seed, args.gamma)
    text = dump_problem(Problem(inst.fmap, mrp=inst.mrp))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="lstdkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run estimators on sampled data from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output file (default: config 'output' or stdout)")
    run.add_argument("--format", choices=("csv", "json"))
    run.add_argument("--timing", action="store_true",
                     help="fill wall_time_ms (output is then no longer reproducible)")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run verification checks, JSON lines out")
    ver.add_argument("--suite", default="all", help="'all' or comma-separated check ids")
    ver.add_argument("--count", type=int, default=200)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out")
    ver.set_defaults(func=cmd_verify)

    gen = sub.add_parser("generate", help="write a random problem as JSON")
    gen.add_argument("--states", type=int, required=True)
    gen.add_argument("--features", type=int, required=True)
    gen.add_argument("--transient", type=int, default=0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--gamma", type=float)
    gen.add_argument("--out")
    gen.set_defaults(func=cmd_generate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, Unsupported) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
