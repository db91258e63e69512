"""Command-line experiment runner: ``owbo {run,bench,pdf,list}``.

Exit codes: 0 success, 1 invalid configuration, 2 some seeds failed,
3 I/O failure.
"""
from __future__ import annotations

import argparse
import copy
import gc
import json
import logging
import math
import multiprocessing
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__, benchfns, precursor
from .acquisition import KINDS, AcquisitionSpec
from .bo import BoLoop, Truth
from .core import ExperimentConfig, InputPrior, make_rng

log = logging.getLogger("owbo")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_IO = 0, 1, 2, 3
BENCH_TIMINGS = 3  # best-of-n per seeded repeat
FMT = "%.12g"
CSV_HEADER = "iter,simple_regret,distance,observation_regret,wall_seconds"
METRICS = ("simple_regret", "distance", "observation_regret")
FUNCTIONS = benchfns.NAMES + ("precursor",)

DEFAULTS = {
    "function": "ackley",
    "dim": None,
    "acq": "lcb-lw",
    "iters": 60,
    "init": 3,
    "repeats": 20,
    "seed": 0,
    "noise": 1e-3,
    "ngmm": 2,
    "nsamples": 100_000,
    "n_fit_samples": 10_000,
    "xi": 0.01,
    "kappa": 1.0,
    "tau": 50.0,
    "out": "results",
    "jobs": 1,
}
_TYPES = {k: type(v) for k, v in DEFAULTS.items() if v is not None}
_TYPES["dim"] = int
_ALIASES = {
    "n_init": "init",
    "n_iter": "iters",
    "acquisition": "acq",
    "noise_variance": "noise",
    "n_gmm": "ngmm",
    "n_samples_kde": "nsamples",
    "objective": "function",
}


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# configuration


def read_config_file(path: str) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = _ALIASES.get(key, key)
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def _coerce(key: str, value):
    if value is None:
        return None
    try:
        if _TYPES.get(key) is int:
            return int(float(value)) if isinstance(value, str) and "e" in value.lower() else int(value)
        return _TYPES.get(key, str)(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def merged_settings(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    settings = {k: _coerce(k, v) for k, v in settings.items()}
    if settings["function"] not in FUNCTIONS:
        raise ConfigError(f"unknown function {settings['function']!r}; choose from {', '.join(FUNCTIONS)}")
    if settings["repeats"] < 1 or settings["jobs"] < 1:
        raise ConfigError("repeats and jobs must be >= 1")
    return settings


@dataclass
class Problem:
    domain: object
    objective: Callable
    truth: Optional[Truth]
    noise_scale: Optional[float]
    prior: Optional[InputPrior]
    dim: int


def build_problem(function: str, dim: Optional[int], seed: int, tau: float = 50.0) -> Problem:
    if function == "precursor":
        if dim not in (None, 2):
            raise ConfigError("precursor search space is 2-D")
        system = precursor.DynSystem()
        prob = precursor.precursor_objective(precursor.build_subspace(system), system, tau)
        dom = prob.domain
        return Problem(dom, lambda u: prob.objective(dom.from_unit(u)), None, None, prob.prior, 2)
    try:
        bench = benchfns.make(function, dim)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    var0 = benchfns.output_variance(bench, make_rng(seed))
    truth = Truth(bench.true_minimizers, bench.true_min_value)
    return Problem(bench.domain, bench.unit_objective(), truth, var0, None, bench.dim)


def make_config(s: dict, problem: Problem) -> ExperimentConfig:
    try:
        spec = AcquisitionSpec(s["acq"], s["xi"], s["kappa"])
        return ExperimentConfig(
            objective=s["function"],
            domain=problem.domain,
            acquisition=spec,
            n_init=s["init"],
            n_iter=s["iters"],
            noise_variance=s["noise"],
            n_gmm=s["ngmm"],
            n_samples_kde=s["nsamples"],
            n_fit_samples=s["n_fit_samples"],
            seed=s["seed"],
            prior=problem.prior,
            objective_params={"dim": problem.dim, "tau": s["tau"]} if s["function"] == "precursor"
            else {"dim": problem.dim},
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# run


def _run_repeat(job):
    settings, repeat = job
    problem = build_problem(settings["function"], settings["dim"], settings["seed"], settings["tau"])
    cfg = make_config(settings, problem)
    trace = BoLoop(cfg, problem.objective, problem.truth, problem.noise_scale, repeat).run()
    rows = [(r.iteration, r.simple_regret, r.distance, r.observation_regret, r.wall_seconds) for r in trace.records]
    return repeat, rows, trace.failed, trace.error, trace.noise_variance


def format_rows(rows) -> str:
    lines = [CSV_HEADER]
    for it, *vals in rows:
        lines.append(",".join([str(int(it))] + [FMT % v for v in vals]))
    return "\n".join(lines) + "\n"


def read_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header in {path}")
        return np.array([[float(v) for v in line.split(",")] for line in fh if line.strip()]).reshape(-1, 5)


def aggregate(tables: list) -> dict:
    """Per-iteration median and MAD/4 band for each metric."""
    out = {}
    for j, name in enumerate(METRICS, start=1):
        if not tables:
            out[name] = {"median": [], "band": []}
            continue
        A = np.array([t[:, j] for t in tables])
        med = np.median(A, axis=0)
        mad = np.median(np.abs(A - med), axis=0)
        out[name] = {"median": _jsonable(med), "band": _jsonable(mad / 4.0)}
    return out


def _jsonable(a) -> list:
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]


def source_revision() -> str:
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            dirty = subprocess.run(["git", "status", "--porcelain"], cwd=here, capture_output=True, text=True,
                                   timeout=5).stdout.strip()
            return rev.stdout.strip() + ("+dirty" if dirty else "")
    except (OSError, subprocess.SubprocessError):
        pass
    return f"owbo-{__version__}"


def _map(fn, jobs: list, n_workers: int):
    if n_workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    ctx = multiprocessing.get_context("spawn")
    with ctx.Pool(min(n_workers, len(jobs))) as pool:
        return pool.map(fn, jobs)


def cmd_run(args) -> int:
    s = merged_settings(args)
    problem = build_problem(s["function"], s["dim"], s["seed"], s["tau"])
    make_config(s, problem)  # validate before spending any compute
    s["dim"] = problem.dim
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    results = _map(_run_repeat, [(s, r) for r in range(s["repeats"])], s["jobs"])

    files, tables, failed, noise = [], [], [], []
    stem = f"{s['function']}_d{problem.dim}_{s['acq']}_s{s['seed']}"
    for repeat, rows, was_failed, error, noise_var in sorted(results, key=lambda t: t[0]):
        path = out / f"{stem}_r{repeat:03d}.csv"
        text = format_rows(rows)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        files.append(str(path))
        noise.append(noise_var)
        if was_failed:
            failed.append({"repeat": repeat, "error": error})
        else:
            tables.append(read_csv(path))  # aggregate what was written, not the unrounded floats

    manifest = {
        "config": s,
        "revision": source_revision(),
        "version": __version__,
        "started": started,
        "elapsed_seconds": time.time() - started,
        "files": files,
        "noise_variance": noise,
        "aggregate": aggregate(tables),
        "failed_seeds": failed,
    }
    mpath = out / f"{stem}_manifest.json"
    with open(mpath, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(files)} traces and {mpath}")
    if failed:
        print(f"{len(failed)} seed(s) failed: {[f['repeat'] for f in failed]}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def _bench_one(job, n_timings: int = BENCH_TIMINGS) -> float:
    """Wall time of one iteration after the initial design, best of ``n_timings``.

    Each timing advances a fresh copy of the same initialized loop, so every
    copy does identical work and the minimum strips scheduler noise.
    """
    settings, repeat = job
    problem = build_problem(settings["function"], settings["dim"], settings["seed"], settings["tau"])
    cfg = make_config(settings, problem)
    loop = BoLoop(cfg, problem.objective, problem.truth, problem.noise_scale, repeat)
    loop.initialize()
    best = math.inf
    for _ in range(n_timings):
        trial = copy.deepcopy(loop)
        # as in timeit: keep cyclic GC passes over unrelated live objects out of the measurement
        gc.collect()
        was_enabled = gc.isenabled()
        gc.disable()
        try:
            t0 = time.perf_counter()
            trial.advance()
            best = min(best, time.perf_counter() - t0)
        finally:
            if was_enabled:
                gc.enable()
    return best


def bench_sweep(settings: dict, param: str, values, acqs, repeats: int) -> list:
    """Median single-iteration seconds per (value, acquisition).

    Repeats are the outer loop so that slow drift in machine speed hits every
    cell of the sweep alike instead of whole values at a time.
    """
    key = {"n_samples": "nsamples", "n_gmm": "ngmm", "d": "dim"}[param]
    cells = [(value, acq) for value in values for acq in acqs]
    times = {c: [] for c in cells}
    for r in range(repeats):
        for value, acq in cells:
            s = dict(settings, acq=acq)
            s[key] = int(value)
            times[value, acq].append(_bench_one((s, r)))
    return [(param, value, acq, float(np.median(times[value, acq]))) for value, acq in cells]


def cmd_bench(args) -> int:
    s = merged_settings(args)
    if args.init is None:
        s["init"] = 10
    values = [int(float(v)) for v in args.values.split(",")]
    acqs = [a.strip() for a in (args.acqs or s["acq"]).split(",")]
    for a in acqs:
        if a not in KINDS:
            raise ConfigError(f"unknown acquisition {a!r}")
    if args.sweep == "d" and s["function"] in ("branin", "bukin", "hartmann6", "precursor"):
        raise ConfigError(f"{s['function']} has a fixed dimension")
    rows = bench_sweep(s, args.sweep, values, acqs, s["repeats"])
    text = "param,value,acq,median_seconds\n" + "".join(f"{p},{v},{a},{FMT % t}\n" for p, v, a, t in rows)
    _write_text(Path(s["out"]), "bench.csv", text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# pdf / list


def cmd_pdf(args) -> int:
    s = merged_settings(args)
    if s["function"] not in benchfns.NAMES:
        raise ConfigError(f"pdf needs a benchmark function, not {s['function']!r}")
    try:
        bench = benchfns.make(s["function"], s["dim"])
        kde = benchfns.output_pdf(bench, s["nsamples"], make_rng(s["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    lines = ["value,density"] + [f"{FMT % g},{FMT % p}" for g, p in zip(kde.grid, kde.density)]
    _write_text(Path(s["out"]), f"pdf_{s['function']}_d{bench.dim}.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_list(args) -> int:
    print("functions:", ", ".join(FUNCTIONS))
    print("acquisitions:", ", ".join(KINDS))
    print("fixtures:", benchfns.fixture_path())
    return EXIT_OK


def _write_text(out: Path, name: str, text: str):
    if out.suffix == ".csv":
        path = out
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        out.mkdir(parents=True, exist_ok=True)
        path = out / name
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(f"wrote {path}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="owbo", description="Output-weighted Bayesian optimization experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key=value file; flags override it")
        sp.add_argument("--function", help=f"one of {', '.join(FUNCTIONS)}")
        sp.add_argument("--dim", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--nsamples", type=lambda v: int(float(v)), help="posterior-mean samples for the KDE")
        sp.add_argument("--out")
        sp.add_argument("-v", "--verbose", action="store_true")

    def loop_flags(sp):
        sp.add_argument("--acq", choices=KINDS)
        sp.add_argument("--iters", type=int)
        sp.add_argument("--init", type=int)
        sp.add_argument("--repeats", type=int)
        sp.add_argument("--noise", type=float, help="sigma_eps^2 before rescaling")
        sp.add_argument("--ngmm", type=int)
        sp.add_argument("--jobs", type=int)

    r = sub.add_parser("run", help="seeded BO runs with per-seed CSVs and a JSON manifest")
    common(r)
    loop_flags(r)
    r.set_defaults(handler=cmd_run)

    b = sub.add_parser("bench", help="single-iteration timing sweep")
    common(b)
    loop_flags(b)
    b.add_argument("--sweep", choices=("n_samples", "n_gmm", "d"), required=True)
    b.add_argument("--values", required=True, help="comma-separated sweep values")
    b.add_argument("--acqs", help="comma-separated acquisitions (default: --acq)")
    b.set_defaults(handler=cmd_bench)

    d = sub.add_parser("pdf", help="KDE of the output under uniform inputs")
    common(d)
    d.set_defaults(handler=cmd_pdf)

    ls = sub.add_parser("list", help="available functions and acquisitions")
    ls.set_defaults(handler=cmd_list)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"owbo: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"owbo: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"owbo: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
