"""Command-line entry point.

Exit codes: 0 success / nominal recovery, 1 usage or runtime error,
2 recovery hit epsilon_bar (failure indicator), 3 observation not rationalizable.
Global flags may also come from IDRO_TOL, IDRO_EPS_BAR, IDRO_ENGINE, IDRO_JOBS
and IDRO_SEED; an explicit flag wins over the environment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from .ambiguity import corner_distances, read_samples, write_samples
from .dcopf import PowerSystem, SystemSchemaError, builtin_system_path, generate_samples, load_system, to_cc_lp
from .forward import assemble, solve_forward
from .inverse import (
    ENGINES,
    ConfigError,
    ObservationNotRationalizable,
    RecoveryConfig,
    RecoveryError,
    diagnose,
    recover,
)
from .model import load_model
from .solver import SolverError

ENV_PREFIX = "IDRO_"
EXIT_OK, EXIT_ERROR, EXIT_FAILED, EXIT_NOT_RATIONALIZABLE = 0, 1, 2, 3


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # exit 2 is reserved for the recovery failure indicator
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _nonneg(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return v


def _env(name: str, cast, default=None):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None or raw == "":
        return default
    try:
        return cast(raw)
    except (TypeError, ValueError, argparse.ArgumentTypeError):
        raise CliError(f"bad value for {ENV_PREFIX}{name}: {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, default):
        parser.add_argument("--tol", type=float, default=default, help="bisection tolerance on epsilon (default 1e-6)")
        parser.add_argument("--eps-bar", type=float, default=default, help="upper bound epsilon_bar (default 100)")
        parser.add_argument("--engine", choices=ENGINES, default=default, help="recovery engine (default bisection)")
        parser.add_argument("--jobs", type=_positive_int, default=default, help="worker processes (default: logical cores)")
        parser.add_argument("--seed", type=int, default=default, help="sample generator seed")

    # global flags are accepted before or after the subcommand
    common = _Parser(add_help=False)
    global_flags(common, argparse.SUPPRESS)
    p = _Parser(prog="idro", description="Wasserstein DRO chance-constrained LPs and radius recovery.")
    global_flags(p, None)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def problem_args(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--system", help="power system JSON, or a built-in name (ieee5, synth11)")
        src.add_argument("--model", help="generic model JSON")
        sp.add_argument("--samples", help="sample CSV (bounds in <stem>.bounds.json)")
        sp.add_argument("--bounds", help="explicit bounds JSON for --samples")
        sp.add_argument("--n-samples", type=_positive_int, default=100, help="generated sample count")

    f = sub.add_parser("forward", parents=[common], help="solve the forward program at one radius")
    problem_args(f)
    f.add_argument("--eps", type=_nonneg, required=True)
    f.add_argument("--out", help="solution JSON path (default stdout)")

    i = sub.add_parser("inverse", parents=[common], help="recover the radius from an observed decision")
    problem_args(i)
    i.add_argument("--observation", required=True, help="JSON with key 'x' (e.g. a forward output) or a bare list")
    i.add_argument("--out", help="report JSON path (default stdout)")

    e = sub.add_parser("experiment", parents=[common], help="reproduce the recovery tables on a power system")
    e.add_argument("--system", default="ieee5")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--tables", default="123", help="subset of 1, 2, 3")
    e.add_argument("--n-samples", type=_positive_int, default=100)

    m = sub.add_parser("epsmax", parents=[common], help="print epsilon_max of a sample set")
    m.add_argument("--samples", required=True)
    m.add_argument("--bounds")

    g = sub.add_parser("gen-samples", parents=[common], help="draw line-limit deviations for a power system")
    g.add_argument("--system", required=True)
    g.add_argument("--n-samples", type=_positive_int, default=100)
    g.add_argument("--out", required=True, help="CSV path; bounds go next to it")
    return p


def _config(args) -> RecoveryConfig:
    tol = args.tol if args.tol is not None else _env("TOL", float, 1e-6)
    bar = args.eps_bar if args.eps_bar is not None else _env("EPS_BAR", float, 100.0)
    engine = args.engine or _env("ENGINE", str, "bisection")
    try:
        return RecoveryConfig(epsilon_bar=bar, bisection_tol=tol, engine=engine)
    except ConfigError as exc:
        raise CliError(str(exc)) from None


def _jobs(args) -> int:
    return args.jobs or _env("JOBS", int, None) or os.cpu_count() or 1


def _seed(args) -> Optional[int]:
    return args.seed if args.seed is not None else _env("SEED", int, None)


def _system(ref: str) -> PowerSystem:
    path = Path(ref)
    if not path.exists() and builtin_system_path(ref).exists():
        path = builtin_system_path(ref)
    if not path.exists():
        raise CliError(f"no such system file: {ref}")
    return load_system(path)


def _problem(args):
    """(model, samples, system or None)."""
    if args.system:
        system = _system(args.system)
        model, _ = to_cc_lp(system)
    else:
        if not Path(args.model).exists():
            raise CliError(f"no such model file: {args.model}")
        system, model = None, load_model(args.model).check()
    if args.samples:
        if not Path(args.samples).exists():
            raise CliError(f"no such sample file: {args.samples}")
        samples = read_samples(args.samples, args.bounds)
    elif system is not None:
        seed = _seed(args)
        if seed is None:
            raise CliError("give --samples or a --seed to generate them")
        samples = generate_samples(system, args.n_samples, seed)
    else:
        raise CliError("--samples is required with --model")
    return model, samples, system


def _emit(obj: dict, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_forward(args) -> int:
    model, samples, _ = _problem(args)
    t0 = time.perf_counter()
    sol = solve_forward(assemble(model, samples, args.eps))
    elapsed = time.perf_counter() - t0
    _emit(sol.to_dict(), args.out)
    print(
        f"objective {sol.objective:.10g}  cvar_binding {sol.cvar_binding}  time {elapsed:.2f}s",
        file=sys.stderr if not args.out else sys.stdout,
    )
    return EXIT_OK


def _read_observation(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such observation file: {path}")
    data = json.loads(p.read_text())
    if isinstance(data, dict):
        if "x" not in data:
            raise CliError("observation JSON needs an 'x' entry")
        data = data["x"]
    return np.asarray(data, dtype=float)


def cmd_inverse(args) -> int:
    model, samples, _ = _problem(args)
    cfg = _config(args)
    x0 = _read_observation(args.observation)
    try:
        rep = recover(model, samples, x0, cfg)
    except ObservationNotRationalizable as exc:
        print(f"not rationalizable: {exc}", file=sys.stderr)
        return EXIT_NOT_RATIONALIZABLE
    out = rep.to_dict()
    out["diagnosis"] = diagnose(rep, samples).to_dict()
    _emit(out, args.out)
    if args.out:
        print(f"epsilon_star {rep.epsilon_star:.10g}  failed {rep.failed}")
    return EXIT_FAILED if rep.failed else EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import ExperimentSpec, run_experiment, scarce_regime

    seed = _seed(args)
    if seed is None:
        raise CliError("experiments need an explicit --seed (or IDRO_SEED)")
    spec = ExperimentSpec(
        system=_system(args.system),
        seed=seed,
        n_samples=args.n_samples,
        recovery=_config(args),
        out_dir=Path(args.out_dir),
    )
    tables = [t for t in args.tables if t in "123"]
    if not tables:
        raise CliError("--tables must name at least one of 1, 2, 3")
    res = run_experiment(spec, tables=tables, jobs=_jobs(args))
    for name, rows in res.items():
        bad = sum(1 for r in rows if r["status"] != "ok")
        print(f"{name}: {len(rows)} rows{f', {bad} errors' if bad else ''} -> {Path(args.out_dir) / (name + '.csv')}")
    if "scarce_scan" in res:
        n = scarce_regime(res["scarce_scan"])
        print("scarce regime: " + (f"failures from N_s = {n} down" if n else "none found"))
    return EXIT_OK


def cmd_epsmax(args) -> int:
    if not Path(args.samples).exists():
        raise CliError(f"no such sample file: {args.samples}")
    s = read_samples(args.samples, args.bounds)
    up, down = corner_distances(s)
    print(f"epsilon_max {max(up, down):.10g}")
    print(f"distance_to_upper {up:.10g}")
    print(f"distance_to_lower {down:.10g}")
    return EXIT_OK


def cmd_gen_samples(args) -> int:
    seed = _seed(args)
    if seed is None:
        raise CliError("gen-samples needs an explicit --seed (or IDRO_SEED)")
    s = generate_samples(_system(args.system), args.n_samples, seed)
    side = write_samples(s, args.out)
    print(f"wrote {s.n_samples} samples to {args.out} (bounds {side})")
    return EXIT_OK


COMMANDS = {
    "forward": cmd_forward,
    "inverse": cmd_inverse,
    "experiment": cmd_experiment,
    "epsmax": cmd_epsmax,
    "gen-samples": cmd_gen_samples,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help and usage errors
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (CliError, ConfigError, SystemSchemaError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"idro: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (RecoveryError, SolverError, OSError) as exc:
        print(f"idro: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
