"""Recover the ambiguity radius from an observed optimal decision."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .ambiguity import SampleSet, corner_distances
from .config import DEFAULT_TOLERANCES, Tolerances
from .forward import (
    FdroInstance,
    ForwardInfeasible,
    assemble,
    cvar_bound_slack,
    restriction_feasible,
    solve_forward,
)
from .model import CcLinearProgram, Observation

ENGINES = ("bisection", "milp", "both")
VERDICT_RANK = {"feasible_only": 0, "optimal": 1, "infeasible": 2}


class RecoveryError(RuntimeError):
    pass


class ObservationNotRationalizable(RecoveryError):
    """x0 is not optimal for any radius in [0, epsilon_bar]."""


class ConfigError(RecoveryError):
    pass


class EmptyInput(RecoveryError):
    pass


@dataclass(frozen=True)
class RecoveryConfig:
    epsilon_bar: float = 100.0
    bisection_tol: float = 1e-6
    engine: str = "bisection"
    big_m_scale: float = 10.0
    noise_weight: float = 1e3
    # KKT-MILP limits
    node_limit: int = 20_000
    max_pairs: int = 400
    # when False, bisection probes skip the free forward solve and log only feasibility
    full_trace: bool = True
    tol: Tolerances = DEFAULT_TOLERANCES

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if not self.epsilon_bar > 0:
            raise ConfigError("epsilon_bar must be positive")
        if not self.bisection_tol > 0:
            raise ConfigError("bisection_tol must be positive")
        if not self.big_m_scale >= 1:
            raise ConfigError("big_m_scale must be at least 1")


@dataclass
class RecoveryReport:
    epsilon_star: float
    failed: bool
    engine: str
    iterations: int
    epsilon_bar: float
    epsilon_max: float
    n_samples: int
    gamma: float
    binding_at_star: Optional[bool] = None
    cvar_slack_at_bar: Optional[float] = None
    per_engine: Optional[dict] = None
    total_slack: Optional[float] = None
    trace: List[Tuple[float, str]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def trace_is_monotone(self) -> bool:
        """Verdicts, sorted by radius, never step back (feasible_only < optimal < infeasible)."""
        labels = [v for _, v in sorted(self.trace)]
        infeasible = [v == "infeasible" for v in labels]
        if any(a > b for a, b in zip(infeasible, infeasible[1:])):
            return False
        # "feasible" probes carry no optimality information
        ranks = [VERDICT_RANK[v] for v in labels if v in VERDICT_RANK]
        return all(a <= b for a, b in zip(ranks, ranks[1:]))

    def to_dict(self) -> dict:
        return {
            "epsilon_star": self.epsilon_star,
            "failed": self.failed,
            "engine": self.engine,
            "iterations": self.iterations,
            "epsilon_bar": self.epsilon_bar,
            "epsilon_max": self.epsilon_max,
            "n_samples": self.n_samples,
            "gamma": self.gamma,
            "binding_at_star": self.binding_at_star,
            "cvar_slack_at_bar": self.cvar_slack_at_bar,
            "per_engine": self.per_engine,
            "total_slack": self.total_slack,
            "trace": [[e, v] for e, v in self.trace],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _prepare(model: CcLinearProgram, samples: SampleSet, x0, cfg: RecoveryConfig):
    obs = x0 if isinstance(x0, Observation) else Observation(x0)
    obs.check_against(model)
    eps_max = max(corner_distances(samples))
    if cfg.epsilon_bar < eps_max:
        raise ConfigError(f"epsilon_bar={cfg.epsilon_bar:g} is below epsilon_max={eps_max:.6g}")
    return obs.x0, eps_max


def _base_report(cfg, eps_max, samples, model, engine) -> RecoveryReport:
    return RecoveryReport(
        epsilon_star=float("nan"),
        failed=False,
        engine=engine,
        iterations=0,
        epsilon_bar=cfg.epsilon_bar,
        epsilon_max=eps_max,
        n_samples=samples.n_samples,
        gamma=model.gamma,
    )


def _forward_objective(inst: FdroInstance, tol) -> Tuple[Optional[float], Optional[object]]:
    try:
        f = solve_forward(inst, tol)
    except ForwardInfeasible:
        return None, None
    return f.objective, f


def _within(cost: float, obj: Optional[float], tol: Tolerances) -> bool:
    # an infeasible forward program cannot beat x0
    return obj is None or cost <= obj + tol.objective * (1.0 + abs(obj))


def _binding(inst: FdroInstance, x0: np.ndarray, tol) -> Optional[bool]:
    slack = cvar_bound_slack(inst, x0, tol)
    return None if slack is None else slack <= tol.binding


def binding_at(inst: FdroInstance, x0: np.ndarray, eps: float, cfg: RecoveryConfig) -> Optional[bool]:
    """Whether the chance row holds x0 at radius ``eps`` to within the radius resolution.

    Only the chance row depends on the radius, so x0 losing feasibility one
    resolution step above ``eps`` means that row is what stops it.
    """
    if eps >= cfg.epsilon_bar - cfg.bisection_tol:
        return _binding(inst.with_epsilon(cfg.epsilon_bar), x0, cfg.tol)
    ok, _ = restriction_feasible(inst.with_epsilon(eps + cfg.bisection_tol), x0, cfg.tol)
    return (not ok) or bool(_binding(inst.with_epsilon(eps), x0, cfg.tol))


def recover_bisection(
    model: CcLinearProgram, samples: SampleSet, x0, cfg: RecoveryConfig = RecoveryConfig()
) -> RecoveryReport:
    """Largest radius at which x0 stays optimal, found by bisection on the restriction.

    Once x0 is optimal at some radius it stays optimal for as long as it stays
    feasible (the feasible set only shrinks), so the search direction is decided
    by feasibility of the x0-restriction alone.
    """
    x0, eps_max = _prepare(model, samples, x0, cfg)
    tol = cfg.tol
    rep = _base_report(cfg, eps_max, samples, model, "bisection")
    inst = assemble(model, samples, 0.0)
    cost = float(model.c @ x0)
    calls = 0

    def probe(eps: float, full: bool):
        nonlocal calls
        calls += 1
        e_inst = inst.with_epsilon(eps)
        ok, _ = restriction_feasible(e_inst, x0, tol)
        if not ok:
            rep.trace.append((eps, "infeasible"))
            return "infeasible", None
        if not full:
            rep.trace.append((eps, "feasible"))
            return "feasible", None
        obj, fwd = _forward_objective(e_inst, tol)
        label = "optimal" if _within(cost, obj, tol) else "feasible_only"
        rep.trace.append((eps, label))
        return label, fwd

    bar = cfg.epsilon_bar
    e_bar = inst.with_epsilon(bar)
    _, fwd_bar = _forward_objective(e_bar, tol)
    if fwd_bar is not None:
        rep.cvar_slack_at_bar = fwd_bar.cvar_slack
    v_bar, _ = probe(bar, True)
    if v_bar == "optimal":
        rep.epsilon_star, rep.failed = bar, True
        rep.binding_at_star = _binding(e_bar, x0, tol)
        rep.iterations = calls
        return rep
    if v_bar == "feasible_only":
        raise ObservationNotRationalizable(
            "x0 is feasible at epsilon_bar but never attains the forward optimum"
        )
    v0, _ = probe(0.0, cfg.full_trace)
    if v0 == "infeasible":
        raise ObservationNotRationalizable("x0 violates the constraints already at epsilon = 0")

    lo, hi = 0.0, bar
    while hi - lo > cfg.bisection_tol:
        mid = 0.5 * (lo + hi)
        v, _ = probe(mid, cfg.full_trace)
        if v == "infeasible":
            hi = mid
        else:
            lo = mid
    star = 0.5 * (lo + hi)

    # x0 must attain the optimum somewhere at or below the feasibility frontier
    obj_hi, _ = _forward_objective(inst.with_epsilon(hi), tol)
    calls += 1
    if not _within(cost, obj_hi, tol):
        raise ObservationNotRationalizable(
            f"x0 costs {cost:.9g} but the forward optimum is {obj_hi:.9g} at the feasibility frontier"
        )
    rep.epsilon_star = star
    # x0 is already known to be infeasible at hi
    rep.binding_at_star = True
    rep.iterations = calls
    return rep


def recover(
    model: CcLinearProgram, samples: SampleSet, x0, cfg: RecoveryConfig = RecoveryConfig()
) -> RecoveryReport:
    """Run the configured engine (or both, reporting the bisection value with both in per_engine)."""
    if cfg.engine == "bisection":
        return recover_bisection(model, samples, x0, cfg)
    from .kkt_milp import recover_kkt_milp

    if cfg.engine == "milp":
        return recover_kkt_milp(model, samples, x0, cfg)
    a = recover_bisection(model, samples, x0, cfg)
    b = recover_kkt_milp(model, samples, x0, cfg)
    a.engine = "both"
    a.per_engine = {"bisection": a.epsilon_star, "milp": b.epsilon_star}
    a.iterations += b.iterations
    gap = abs(a.epsilon_star - b.epsilon_star)
    if gap > 10 * cfg.bisection_tol:
        a.notes.append(f"engines disagree by {gap:.3g}")
    return a


def _recover_task(args):
    model, samples, x0, cfg = args
    return recover(model, samples, x0, cfg)


def recover_data_driven(
    models: Union[CcLinearProgram, Sequence[CcLinearProgram]],
    sample_windows: Sequence[SampleSet],
    observations: Sequence,
    cfg: RecoveryConfig = RecoveryConfig(),
    jobs: int = 1,
) -> Tuple[RecoveryReport, List[RecoveryReport]]:
    """Per-period recovery; the final radius is the smallest non-failed one."""
    if len(sample_windows) == 0 or len(observations) == 0:
        raise EmptyInput("no periods to recover from")
    if len(sample_windows) != len(observations):
        raise ValueError("sample_windows and observations differ in length")
    if isinstance(models, CcLinearProgram):
        models = [models] * len(observations)
    if len(models) != len(observations):
        raise ValueError("models and observations differ in length")
    tasks = list(zip(models, sample_windows, observations, [cfg] * len(observations)))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            periods = list(pool.map(_recover_task, tasks))
    else:
        periods = [_recover_task(t) for t in tasks]

    good = [p for p in periods if not p.failed]
    first = periods[0]
    final = RecoveryReport(
        epsilon_star=min(p.epsilon_star for p in good) if good else cfg.epsilon_bar,
        failed=not good,
        engine=first.engine,
        iterations=sum(p.iterations for p in periods),
        epsilon_bar=cfg.epsilon_bar,
        epsilon_max=max(p.epsilon_max for p in periods),
        n_samples=min(p.n_samples for p in periods),
        gamma=first.gamma,
    )
    if good:
        best = min(good, key=lambda p: p.epsilon_star)
        final.binding_at_star = best.binding_at_star
    stars = [p.epsilon_star for p in periods]
    spread = max(stars) - min(stars)
    if spread > 10 * cfg.bisection_tol:
        final.notes.append(
            f"per-period radii vary by {spread:.6g}: at least one correctness condition "
            "(binding chance constraint, radius below epsilon_max) does not hold in every period"
        )
    return final, periods


@dataclass(frozen=True)
class Diagnosis:
    labels: List[str]
    evidence: dict

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "evidence": dict(self.evidence)}


def diagnose(report: RecoveryReport, samples: SampleSet, binding_tol: float = DEFAULT_TOLERANCES.binding) -> Diagnosis:
    """Candidate explanations for a failed recovery.

    The observer sees only x0 and the samples, so every explanation that the
    evidence cannot rule out is listed; nothing here picks a single cause.
    """
    n = samples.n_samples
    scarce_at = max(20, math.ceil(1.0 / report.gamma)) if report.gamma > 0 else 20
    evidence = {
        "epsilon_star": report.epsilon_star,
        "epsilon_bar": report.epsilon_bar,
        "epsilon_max": report.epsilon_max,
        "n_samples": n,
        "scarce_threshold": scarce_at,
        "cvar_slack_at_bar": report.cvar_slack_at_bar,
        "binding_at_star": report.binding_at_star,
    }
    if not report.failed:
        return Diagnosis(["recovery nominal"], evidence)
    labels = ["radius may be at or beyond epsilon_max"]
    slack = report.cvar_slack_at_bar
    if slack is None or abs(slack) > binding_tol:
        labels.append("chance constraint not binding")
    if n <= scarce_at:
        labels.append("samples may lack representativeness")
    return Diagnosis(labels, evidence)


def with_engine(cfg: RecoveryConfig, engine: str) -> RecoveryConfig:
    return replace(cfg, engine=engine)
