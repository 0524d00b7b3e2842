"""Chance-constrained DC optimal power flow on top of the generic model.

Decision vector is ``[x; r]`` (dispatch and reserve per generator, MW).  The
random vector is the line-limit deviation ``df`` (one entry per line), and the
two-sided flow limits ``-f_max - df <= flow <= f_max + df`` become the chance
block after moving ``df`` to the left-hand side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .ambiguity import SampleSet
from .model import CcLinearProgram

SAMPLE_HALF_WIDTH = 0.1  # default fraction of f_max


class SystemSchemaError(ValueError):
    def __init__(self, problems: List[str], source: str = "system"):
        self.problems = list(problems)
        super().__init__(f"{source}: " + "; ".join(self.problems))


@dataclass(frozen=True, eq=False)
class PowerSystem:
    ptdf: np.ndarray  # (lines, buses), MW per MW
    gen_bus_map: np.ndarray  # (buses, generators), 0/1
    cost: np.ndarray  # $/MWh
    x_min: np.ndarray
    x_max: np.ndarray
    f_max: np.ndarray
    net_load: np.ndarray  # MW per bus
    gamma: float = 0.05
    reserve_fraction: float = 0.05
    sample_half_width: float = SAMPLE_HALF_WIDTH
    name: str = ""
    bus_ids: tuple = ()
    line_ends: tuple = ()

    def __post_init__(self):
        for f in ("ptdf", "gen_bus_map", "cost", "x_min", "x_max", "f_max", "net_load"):
            a = np.array(getattr(self, f), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, f, a)
        problems = self.problems()
        if problems:
            raise SystemSchemaError(problems, self.name or "system")

    @property
    def n_bus(self) -> int:
        return self.ptdf.shape[1]

    @property
    def n_line(self) -> int:
        return self.ptdf.shape[0]

    @property
    def n_gen(self) -> int:
        return self.gen_bus_map.shape[1]

    @property
    def reserve(self) -> float:
        return self.reserve_fraction * float(self.net_load.sum())

    def problems(self) -> List[str]:
        out = []
        S = self.gen_bus_map
        if self.ptdf.ndim != 2 or self.ptdf.shape[0] == 0:
            return ["ptdf: expected a non-empty (lines x buses) matrix"]
        nl, nb = self.ptdf.shape
        if S.ndim != 2 or S.shape[0] != nb or S.shape[1] == 0:
            return [f"gen_bus_map: expected ({nb} x generators)"]
        ng = S.shape[1]
        if not np.isin(S, (0.0, 1.0)).all() or not (S.sum(axis=0) == 1).all():
            out.append("gen_bus_map: each generator must sit on exactly one bus")
        for f, size in (("cost", ng), ("x_min", ng), ("x_max", ng), ("f_max", nl), ("net_load", nb)):
            a = getattr(self, f)
            if a.shape != (size,):
                out.append(f"{f}: expected {size} entries, got shape {a.shape}")
            elif not np.isfinite(a).all():
                out.append(f"{f}: non-finite entries")
        if out:
            return out
        if (self.x_min < 0).any():
            out.append(f"x_min: negative at generators {np.flatnonzero(self.x_min < 0).tolist()}")
        if (self.x_min > self.x_max).any():
            out.append(f"x_min > x_max at generators {np.flatnonzero(self.x_min > self.x_max).tolist()}")
        if (self.f_max <= 0).any():
            out.append(f"f_max: nonpositive at lines {np.flatnonzero(self.f_max <= 0).tolist()}")
        if not 0 < self.gamma < 1:
            out.append(f"gamma out of (0,1): {self.gamma}")
        if not self.reserve_fraction >= 0:
            out.append("reserve_fraction must be nonnegative")
        if not 0 < self.sample_half_width < 1:
            out.append("sample_half_width must lie in (0,1)")
        need = float(self.net_load.sum()) + self.reserve
        if float(self.x_max.sum()) < need:
            out.append(f"capacity {self.x_max.sum():g} MW below load plus reserve {need:g} MW")
        return out

    def with_fmax_scaled(self, factor: float) -> "PowerSystem":
        return replace(self, f_max=self.f_max * factor)


@dataclass
class DcopfDecision:
    dispatch: np.ndarray
    reserve: np.ndarray

    @classmethod
    def from_vector(cls, sys: PowerSystem, z) -> "DcopfDecision":
        z = np.asarray(z, dtype=float)
        return cls(z[: sys.n_gen].copy(), z[sys.n_gen :].copy())


def compute_ptdf(n_bus: int, lines, reactances, slack: int = 0) -> np.ndarray:
    """Injection-shift factors with the slack bus absorbing every injection."""
    nl = len(lines)
    Bf = np.zeros((nl, n_bus))
    Bbus = np.zeros((n_bus, n_bus))
    for k, ((f, t), x) in enumerate(zip(lines, reactances)):
        if not x > 0:
            raise SystemSchemaError([f"lines[{k}]: reactance must be positive"])
        b = 1.0 / x
        Bf[k, f], Bf[k, t] = b, -b
        Bbus[f, f] += b
        Bbus[t, t] += b
        Bbus[f, t] -= b
        Bbus[t, f] -= b
    keep = [i for i in range(n_bus) if i != slack]
    P = np.zeros((nl, n_bus))
    try:
        P[:, keep] = Bf[:, keep] @ np.linalg.inv(Bbus[np.ix_(keep, keep)])
    except np.linalg.LinAlgError:
        raise SystemSchemaError(["lines: network is not connected"]) from None
    return P


def system_from_dict(data: dict, source: str = "system") -> PowerSystem:
    problems = []
    for key in ("buses", "lines", "generators", "loads"):
        if key not in data:
            problems.append(f"{key}: missing")
    if problems:
        raise SystemSchemaError(problems, source)
    raw = data["buses"]
    ids = [b["id"] if isinstance(b, dict) else b for b in raw]
    if len(set(ids)) != len(ids) or not ids:
        raise SystemSchemaError(["buses: ids must be unique and non-empty"], source)
    pos = {b: i for i, b in enumerate(ids)}

    def bus(ref, where):
        if ref not in pos:
            problems.append(f"{where}: unknown bus {ref!r}")
            return 0
        return pos[ref]

    lines, react, fmax = [], [], []
    for k, ln in enumerate(data["lines"]):
        try:
            lines.append((bus(ln["from"], f"lines[{k}].from"), bus(ln["to"], f"lines[{k}].to")))
            react.append(float(ln.get("reactance", "nan")))
            fmax.append(float(ln["f_max"]))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"lines[{k}]: {exc}")
    gens = data["generators"]
    S = np.zeros((len(ids), len(gens)))
    cost, xmin, xmax = [], [], []
    for g, gen in enumerate(gens):
        try:
            S[bus(gen["bus"], f"generators[{g}].bus"), g] = 1.0
            cost.append(float(gen["cost"]))
            xmin.append(float(gen.get("x_min", 0.0)))
            xmax.append(float(gen["x_max"]))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"generators[{g}]: {exc}")
    load = np.zeros(len(ids))
    for k, ld in enumerate(data["loads"]):
        try:
            load[bus(ld["bus"], f"loads[{k}].bus")] += float(ld["p"])
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"loads[{k}]: {exc}")
    if problems:
        raise SystemSchemaError(problems, source)
    if "ptdf" in data:
        P = np.asarray(data["ptdf"], dtype=float)
    else:
        slack = bus(data.get("slack_bus", ids[0]), "slack_bus")
        if problems:
            raise SystemSchemaError(problems, source)
        if any(not np.isfinite(x) for x in react):
            raise SystemSchemaError(["lines: reactance required when no ptdf is given"], source)
        P = compute_ptdf(len(ids), lines, react, slack)
    try:
        return PowerSystem(
            ptdf=P,
            gen_bus_map=S,
            cost=cost,
            x_min=xmin,
            x_max=xmax,
            f_max=fmax,
            net_load=load,
            gamma=float(data.get("gamma", 0.05)),
            reserve_fraction=float(data.get("reserve_fraction", 0.05)),
            sample_half_width=float(data.get("sample_half_width", SAMPLE_HALF_WIDTH)),
            name=str(data.get("name", source)),
            bus_ids=tuple(ids),
            line_ends=tuple((ids[f], ids[t]) for f, t in lines),
        )
    except SystemSchemaError as exc:
        raise SystemSchemaError(exc.problems, source) from None


def load_system(path) -> PowerSystem:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SystemSchemaError([f"not valid JSON ({exc})"], str(path)) from None
    if not isinstance(data, dict):
        raise SystemSchemaError(["top level must be an object"], str(path))
    return system_from_dict(data, str(path))


def builtin_system_path(name: str) -> Path:
    return Path(__file__).with_name("data") / f"{name}.json"


def load_builtin(name: str) -> PowerSystem:
    return load_system(builtin_system_path(name))


@dataclass(frozen=True)
class IndexLegend:
    variables: List[str] = field(default_factory=list)
    ordinary_rows: List[str] = field(default_factory=list)
    chance_rows: List[str] = field(default_factory=list)
    uncertainty: List[str] = field(default_factory=list)


def to_cc_lp(sys: PowerSystem):
    """Map the system to (CcLinearProgram, IndexLegend)."""
    ng, nl = sys.n_gen, sys.n_line
    I = np.eye(ng)
    Z = np.zeros(ng)
    one = np.ones(ng)
    total = float(sys.net_load.sum())
    A = np.vstack(
        [
            np.r_[one, Z],
            -np.r_[one, Z],
            np.hstack([I, I]),
            -np.hstack([I, I]),
            -np.r_[Z, one],
        ]
    )
    h = np.r_[total, -total, sys.x_max, -sys.x_min, -sys.reserve]
    PS = sys.ptdf @ sys.gen_bus_map
    flow0 = sys.ptdf @ sys.net_load
    pad = np.zeros((nl, ng))
    B = np.vstack([np.hstack([-PS, pad]), np.hstack([PS, pad])])
    D = -np.vstack([np.eye(nl), np.eye(nl)])
    d = np.r_[sys.f_max - flow0, sys.f_max + flow0]
    model = CcLinearProgram(
        c=np.r_[sys.cost, Z],
        A=A,
        h=h,
        B=B,
        D=D,
        d=d,
        gamma=sys.gamma,
        variable_lower=np.zeros(2 * ng),
        variable_upper=None,
    )
    legend = IndexLegend(
        variables=[f"x[{g}]" for g in range(ng)] + [f"r[{g}]" for g in range(ng)],
        ordinary_rows=["balance<=", "balance>="]
        + [f"cap[{g}]" for g in range(ng)]
        + [f"min[{g}]" for g in range(ng)]
        + ["reserve"],
        chance_rows=[f"flow>=-lim[{l}]" for l in range(nl)] + [f"flow<=lim[{l}]" for l in range(nl)],
        uncertainty=[f"df[{l}]" for l in range(nl)],
    )
    return model, legend


def sample_bounds(sys: PowerSystem):
    w = sys.sample_half_width * sys.f_max
    return -w, w


def generate_samples(sys: PowerSystem, n_samples: int, seed: int) -> SampleSet:
    """Zero-mean uniform line-limit deviations of half-width ``sample_half_width * f_max``."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    lo, hi = sample_bounds(sys)
    rng = np.random.default_rng(seed)
    xi = rng.uniform(lo, hi, size=(n_samples, sys.n_line))
    return SampleSet(xi, lo, hi, seed)


def zero_samples(sys: PowerSystem) -> SampleSet:
    lo, hi = sample_bounds(sys)
    return SampleSet(np.zeros((1, sys.n_line)), lo, hi)
