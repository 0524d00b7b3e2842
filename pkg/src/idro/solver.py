"""LP and mixed-binary solves with dual extraction.

Both entry points are thin, deterministic wrappers over HiGHS (through
``scipy.optimize``).  Rows are equilibrated before the call and every dual is
mapped back to the caller's (unscaled) rows, so

    c + G' y + E' v - dual_lower + dual_upper = 0

holds for the returned multipliers, with ``y, dual_lower, dual_upper >= 0``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .config import DEFAULT_TOLERANCES, Tolerances


class SolverError(RuntimeError):
    pass


class NumericalFailure(SolverError):
    """HiGHS could not reach the requested tolerances."""


class NodeLimitExceeded(SolverError):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


def _as_matrix(a, ncols: int):
    if a is None:
        return sp.csr_matrix((0, ncols))
    if sp.issparse(a):
        return a.tocsr()
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(0 if a.size == 0 else 1, -1) if a.size else np.zeros((0, ncols))
    return sp.csr_matrix(a)


@dataclass
class StandardLp:
    """min c'z  s.t.  G z <= g,  E z = e,  lower <= z <= upper."""

    objective: np.ndarray
    ineq_matrix: object = None
    ineq_rhs: Optional[np.ndarray] = None
    eq_matrix: object = None
    eq_rhs: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        n = self.objective.size
        self.ineq_matrix = _as_matrix(self.ineq_matrix, n)
        self.eq_matrix = _as_matrix(self.eq_matrix, n)
        self.ineq_rhs = np.asarray(
            self.ineq_rhs if self.ineq_rhs is not None else [], dtype=float
        ).ravel()
        self.eq_rhs = np.asarray(self.eq_rhs if self.eq_rhs is not None else [], dtype=float).ravel()
        self.lower = (
            np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        )
        self.upper = (
            np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        )
        self.validate()

    @property
    def n(self) -> int:
        return self.objective.size

    def validate(self) -> None:
        n = self.n
        G, E = self.ineq_matrix, self.eq_matrix
        if G.shape[1] != n or E.shape[1] != n:
            raise ValueError(f"matrix column count must equal {n}")
        if G.shape[0] != self.ineq_rhs.size:
            raise ValueError(f"ineq_matrix has {G.shape[0]} rows but ineq_rhs has {self.ineq_rhs.size}")
        if E.shape[0] != self.eq_rhs.size:
            raise ValueError(f"eq_matrix has {E.shape[0]} rows but eq_rhs has {self.eq_rhs.size}")
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bounds must have one entry per variable")
        for name, arr in (
            ("objective", self.objective),
            ("ineq_matrix", G.data),
            ("ineq_rhs", self.ineq_rhs),
            ("eq_matrix", E.data),
            ("eq_rhs", self.eq_rhs),
            ("lower", self.lower),
            ("upper", self.upper),
        ):
            if np.isnan(arr).any():
                raise ValueError(f"{name} contains NaN")

    def replace(self, **changes) -> "StandardLp":
        fields = dict(
            objective=self.objective,
            ineq_matrix=self.ineq_matrix,
            ineq_rhs=self.ineq_rhs,
            eq_matrix=self.eq_matrix,
            eq_rhs=self.eq_rhs,
            lower=self.lower,
            upper=self.upper,
        )
        fields.update(changes)
        return StandardLp(**fields)


@dataclass
class LpSolution:
    status: Status
    primal: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective_value: float = float("nan")
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass
class MixedBinaryLp:
    base: StandardLp
    binary_indices: np.ndarray
    big_m_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.binary_indices = np.asarray(self.binary_indices, dtype=int).ravel()
        self.big_m_values = np.asarray(self.big_m_values, dtype=float).ravel()
        self.validate()

    def validate(self) -> None:
        idx = self.binary_indices
        if idx.size and (idx.min() < 0 or idx.max() >= self.base.n):
            raise ValueError("binary index out of range")
        if np.unique(idx).size != idx.size:
            raise ValueError("duplicate binary index")
        if self.big_m_values.size and not (self.big_m_values > 0).all():
            raise ValueError("big-M values must be positive")


@dataclass
class MixedBinarySolution:
    lp: LpSolution
    binaries: np.ndarray
    nodes: int = 0


def _row_scale(M) -> np.ndarray:
    if M.shape[0] == 0:
        return np.ones(0)
    s = np.asarray(abs(M).max(axis=1).todense()).ravel()
    s[s == 0] = 1.0
    return s


def _highs_options(tol: Tolerances) -> dict:
    return {
        "primal_feasibility_tolerance": max(tol.feasibility, 1e-10),
        "dual_feasibility_tolerance": max(tol.feasibility, 1e-10),
        "presolve": True,
    }


def solve_lp(p: StandardLp, tol: Tolerances = DEFAULT_TOLERANCES) -> LpSolution:
    """Solve ``p`` and return primal and dual vectors in the caller's row scaling."""
    n = p.n
    sg = _row_scale(p.ineq_matrix)
    se = _row_scale(p.eq_matrix)
    G = sp.diags(1.0 / sg) @ p.ineq_matrix if sg.size else None
    E = sp.diags(1.0 / se) @ p.eq_matrix if se.size else None
    bounds = np.column_stack([p.lower, p.upper])
    bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi) for lo, hi in bounds]
    res = linprog(
        p.objective,
        A_ub=G,
        b_ub=p.ineq_rhs / sg if sg.size else None,
        A_eq=E,
        b_eq=p.eq_rhs / se if se.size else None,
        bounds=bounds,
        method="highs",
        options=_highs_options(tol),
    )
    if res.status == 2:
        return LpSolution(Status.INFEASIBLE, iterations=int(res.nit))
    if res.status == 3:
        return LpSolution(Status.UNBOUNDED, iterations=int(res.nit))
    if res.status != 0:
        raise NumericalFailure(f"HiGHS status {res.status}: {res.message}")
    y = -np.asarray(res.ineqlin.marginals) / sg if sg.size else np.zeros(0)
    v = -np.asarray(res.eqlin.marginals) / se if se.size else np.zeros(0)
    return LpSolution(
        status=Status.OPTIMAL,
        primal=np.asarray(res.x, dtype=float),
        dual_ineq=np.maximum(y, 0.0) if y.size else y,
        dual_eq=v,
        dual_lower=np.maximum(np.asarray(res.lower.marginals), 0.0),
        dual_upper=np.maximum(-np.asarray(res.upper.marginals), 0.0),
        objective_value=float(res.fun),
        iterations=int(res.nit),
    )


@dataclass
class LpResiduals:
    primal: float
    dual_sign: float
    stationarity: float
    complementarity: float
    gap: float


def lp_residuals(p: StandardLp, s: LpSolution) -> LpResiduals:
    """Contract residuals for an optimal solution (rows equilibrated as in solve_lp)."""
    z = s.primal
    sg, se = _row_scale(p.ineq_matrix), _row_scale(p.eq_matrix)
    slack = p.ineq_rhs - p.ineq_matrix @ z
    eq_res = p.eq_rhs - p.eq_matrix @ z
    lo_gap = np.where(np.isfinite(p.lower), z - p.lower, np.inf)
    hi_gap = np.where(np.isfinite(p.upper), p.upper - z, np.inf)
    primal = max(
        float(np.max(-slack / sg, initial=0.0)),
        float(np.max(np.abs(eq_res) / se, initial=0.0)),
        float(np.max(-lo_gap, initial=0.0)),
        float(np.max(-hi_gap, initial=0.0)),
    )
    dual_sign = float(
        max(
            np.max(-s.dual_ineq, initial=0.0),
            np.max(-s.dual_lower, initial=0.0),
            np.max(-s.dual_upper, initial=0.0),
        )
    )
    grad = (
        p.objective
        + p.ineq_matrix.T @ s.dual_ineq
        + p.eq_matrix.T @ s.dual_eq
        - s.dual_lower
        + s.dual_upper
    )
    comp = np.concatenate(
        [
            np.abs(s.dual_ineq * slack),  # invariant under row scaling
            np.abs(s.dual_lower * np.where(np.isfinite(lo_gap), lo_gap, 0.0)),
            np.abs(s.dual_upper * np.where(np.isfinite(hi_gap), hi_gap, 0.0)),
        ]
    )
    lo = np.where(np.isfinite(p.lower), p.lower, 0.0)
    hi = np.where(np.isfinite(p.upper), p.upper, 0.0)
    dual_obj = -p.ineq_rhs @ s.dual_ineq - p.eq_rhs @ s.dual_eq + lo @ s.dual_lower - hi @ s.dual_upper
    return LpResiduals(
        primal=primal,
        dual_sign=dual_sign,
        stationarity=float(np.max(np.abs(grad), initial=0.0)),
        complementarity=float(np.max(comp, initial=0.0)),
        gap=float(abs(p.objective @ z - dual_obj)),
    )


def solve_mixed_binary(
    p: MixedBinaryLp,
    tol: Tolerances = DEFAULT_TOLERANCES,
    node_limit: int = 1_000_000,
) -> MixedBinarySolution:
    """Global optimum over the binaries; duals come from the LP with binaries fixed."""
    base = p.base
    n = base.n
    integrality = np.zeros(n)
    integrality[p.binary_indices] = 1
    lower = base.lower.copy()
    upper = base.upper.copy()
    lower[p.binary_indices] = np.maximum(lower[p.binary_indices], 0.0)
    upper[p.binary_indices] = np.minimum(upper[p.binary_indices], 1.0)
    # no manual equilibration here: big-M rows mix scales on purpose, and
    # dividing them through shrinks the thin envelope regions below the MIP
    # feasibility tolerance; HiGHS scales internally instead
    constraints = []
    if base.ineq_matrix.shape[0]:
        constraints.append(LinearConstraint(base.ineq_matrix, -np.inf, base.ineq_rhs))
    if base.eq_matrix.shape[0]:
        constraints.append(LinearConstraint(base.eq_matrix, base.eq_rhs, base.eq_rhs))

    def run(presolve):
        return milp(
            base.objective,
            integrality=integrality,
            bounds=Bounds(lower, upper),
            constraints=constraints,
            options={"node_limit": int(node_limit), "mip_rel_gap": 0.0, "presolve": presolve},
        )

    res = run(True)
    if res.status == 2:
        # MIP presolve has been seen to declare thin-but-feasible models
        # infeasible; only trust that verdict when it survives without presolve
        res = run(False)
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    if res.status == 2:
        return MixedBinarySolution(LpSolution(Status.INFEASIBLE), np.zeros(0), nodes)
    if res.status == 3:
        return MixedBinarySolution(LpSolution(Status.UNBOUNDED), np.zeros(0), nodes)
    if res.status == 1:
        if res.x is None:
            raise NodeLimitExceeded(f"no incumbent within {node_limit} nodes")
        raise NodeLimitExceeded(f"search stopped at the node limit ({node_limit}) before proving optimality")
    if res.status != 0:
        raise NumericalFailure(f"HiGHS MIP status {res.status}: {res.message}")
    z = np.asarray(res.x, dtype=float)
    binaries = np.round(z[p.binary_indices])
    if np.max(np.abs(binaries - z[p.binary_indices]), initial=0.0) > tol.integrality:
        raise NumericalFailure("binary variable off {0,1} beyond the integrality tolerance")
    lo, hi = base.lower.copy(), base.upper.copy()
    lo[p.binary_indices] = binaries
    hi[p.binary_indices] = binaries
    fixed = solve_lp(base.replace(lower=lo, upper=hi), tol)
    if not fixed.optimal:
        # the MIP point is feasible, so this only happens at tolerance edges
        fixed = LpSolution(Status.OPTIMAL, primal=z, objective_value=float(res.fun))
    return MixedBinarySolution(fixed, binaries, nodes)


def dump_lp(p: StandardLp, out: IO[str], digits: int = 12) -> None:
    """Plain-text dump: inequalities, then equalities, then bounds, one record per line."""
    fmt = f"{{:.{digits}f}}"

    def row(kind: str, i: int, M, rhs: float) -> str:
        r = M.getrow(i)
        terms = " ".join(f"{j}:{fmt.format(v)}" for j, v in zip(r.indices, r.data))
        return f"{kind} {i} {terms} | {fmt.format(rhs)}"

    out.write(f"lp n={p.n} ineq={p.ineq_matrix.shape[0]} eq={p.eq_matrix.shape[0]}\n")
    out.write("obj " + " ".join(fmt.format(v) for v in p.objective) + "\n")
    for i in range(p.ineq_matrix.shape[0]):
        out.write(row("le", i, p.ineq_matrix, p.ineq_rhs[i]) + "\n")
    for i in range(p.eq_matrix.shape[0]):
        out.write(row("eq", i, p.eq_matrix, p.eq_rhs[i]) + "\n")
    for j in range(p.n):
        lo = "-inf" if np.isinf(p.lower[j]) else fmt.format(p.lower[j])
        hi = "inf" if np.isinf(p.upper[j]) else fmt.format(p.upper[j])
        out.write(f"bd {j} {lo} {hi}\n")

