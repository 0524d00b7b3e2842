"""Batch harness for the radius-recovery tables on a power system."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .ambiguity import SampleSet, epsilon_max
from .dcopf import PowerSystem, generate_samples, to_cc_lp
from .forward import assemble, kkt_residuals, solve_forward
from .inverse import RecoveryConfig, RecoveryError, recover
from .solver import SolverError

EPS_GRID = (0.0, 0.01, 0.05, 0.1, 0.2)
FMAX_GRID = (0.9, 1.0, 1.1, 3.0, 5.0)
N_GRID = (100, 75, 50, 25, 15, 10)


@dataclass(frozen=True)
class ExperimentSpec:
    system: PowerSystem
    seed: int
    n_samples: int = 100
    eps_grid: Sequence[float] = EPS_GRID
    fmax_multipliers: Sequence[float] = FMAX_GRID
    n_grid: Sequence[int] = N_GRID
    scan_from: int = 25
    eps_table23: float = 0.01
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    out_dir: Optional[Path] = None

    def __post_init__(self):
        if not (self.eps_grid and self.fmax_multipliers and self.n_grid):
            raise ValueError("experiment grids must be non-empty")
        if self.seed is None:
            raise ValueError("experiments need an explicit seed")


def run_point(system: PowerSystem, samples: SampleSet, eps_true: float, cfg: RecoveryConfig) -> Dict:
    """Forward solve at eps_true, then recover the radius from the dispatch."""
    model, _ = to_cc_lp(system)
    row = {"eps_true": float(eps_true), "epsilon_max": epsilon_max(samples), "n_samples": samples.n_samples}
    try:
        fwd = solve_forward(assemble(model, samples, eps_true), cfg.tol)
        row["cvar_binding"] = fwd.cvar_binding
        row["objective"] = fwd.objective
        row["kkt_residual"] = kkt_residuals(fwd.instance, fwd.point).max()
        rep = recover(model, samples, fwd.x_opt, cfg)
        row.update(eps_star=rep.epsilon_star, failed=rep.failed, status="ok")
        if rep.per_engine:
            row["per_engine"] = rep.per_engine
    except (RecoveryError, SolverError, ValueError) as exc:
        row.update(eps_star=float("nan"), failed=None, status=f"error: {type(exc).__name__}: {exc}")
    return row


def _task(args):
    key, system, samples, eps, cfg, extra = args
    row = run_point(system, samples, eps, cfg)
    row.update(extra)
    return key, row


def _run_all(tasks, jobs: int) -> List[Dict]:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_task, tasks))
    else:
        done = [_task(t) for t in tasks]
    # workers may finish in any order; emit by key
    return [row for _, row in sorted(done, key=lambda kv: kv[0])]


def table_eps(spec: ExperimentSpec, jobs: int = 1) -> List[Dict]:
    samples = generate_samples(spec.system, spec.n_samples, spec.seed)
    emax = epsilon_max(samples)
    points = [(f"{e:g}", e) for e in spec.eps_grid]
    points += [("epsilon_max", emax), ("beyond", 0.5 * max(1.0, 2.0 * emax))]
    tasks = [(i, spec.system, samples, e, spec.recovery, {"row": label}) for i, (label, e) in enumerate(points)]
    return _run_all(tasks, jobs)


def table_fmax(spec: ExperimentSpec, jobs: int = 1) -> List[Dict]:
    # one sample set drawn on the nominal limits; only the limits are rescaled
    samples = generate_samples(spec.system, spec.n_samples, spec.seed)
    tasks = [
        (i, spec.system.with_fmax_scaled(k), samples, spec.eps_table23, spec.recovery, {"multiplier": k})
        for i, k in enumerate(spec.fmax_multipliers)
    ]
    return _run_all(tasks, jobs)


def table_samples(spec: ExperimentSpec, jobs: int = 1) -> List[Dict]:
    # nested prefixes of one seeded stream
    full = generate_samples(spec.system, max(max(spec.n_grid), spec.n_samples), spec.seed)
    tasks = [
        (i, spec.system, full.head(n), spec.eps_table23, spec.recovery, {"n": n})
        for i, n in enumerate(spec.n_grid)
    ]
    return _run_all(tasks, jobs)


def scarce_scan(spec: ExperimentSpec, jobs: int = 1) -> List[Dict]:
    """Every sample size from scan_from down to 1 at the table radius."""
    full = generate_samples(spec.system, max(spec.scan_from, spec.n_samples), spec.seed)
    sizes = range(spec.scan_from, 0, -1)
    tasks = [
        (i, spec.system, full.head(n), spec.eps_table23, spec.recovery, {"n": n}) for i, n in enumerate(sizes)
    ]
    return _run_all(tasks, jobs)


def scarce_regime(scan: List[Dict]) -> Optional[int]:
    """Largest scanned sample size whose recovery failed, if any."""
    bad = [r["n"] for r in scan if r.get("failed")]
    return max(bad) if bad else None


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else f"{float(v):.10g}"
    if v is None:
        return ""
    return str(v)


COLUMNS = {
    "table1": ["row", "eps_true", "eps_star", "failed", "cvar_binding", "kkt_residual", "epsilon_max", "status"],
    "table2": ["multiplier", "eps_true", "eps_star", "failed", "cvar_binding", "kkt_residual", "epsilon_max", "status"],
    "table3": ["n", "eps_true", "eps_star", "failed", "cvar_binding", "kkt_residual", "epsilon_max", "status"],
    "scarce_scan": ["n", "eps_true", "eps_star", "failed", "cvar_binding", "kkt_residual", "epsilon_max", "status"],
}


def write_table(rows: List[Dict], name: str, out_dir) -> Path:
    path = Path(out_dir) / f"{name}.csv"
    cols = COLUMNS[name]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])
    return path


def run_experiment(spec: ExperimentSpec, tables=("1", "2", "3"), jobs: Optional[int] = None) -> Dict[str, List[Dict]]:
    jobs = jobs or os.cpu_count() or 1
    out: Dict[str, List[Dict]] = {}
    if "1" in tables:
        out["table1"] = table_eps(spec, jobs)
    if "2" in tables:
        out["table2"] = table_fmax(spec, jobs)
    if "3" in tables:
        out["table3"] = table_samples(spec, jobs)
        out["scarce_scan"] = scarce_scan(spec, jobs)
    if spec.out_dir is not None:
        Path(spec.out_dir).mkdir(parents=True, exist_ok=True)
        for name, rows in out.items():
            write_table(rows, name, spec.out_dir)
    return out


def with_recovery(spec: ExperimentSpec, cfg: RecoveryConfig) -> ExperimentSpec:
    return replace(spec, recovery=cfg)
