"""Assembly, solution and KKT inspection of the Wasserstein DRO program.

Variables are laid out as ``[x (n) | tau (1) | lambda (m) | s (N*m)]`` with
``s`` stored row-major by sample.  Rows, all of the form ``G z <= g``:

* ordinary rows ``A x <= h`` followed by the finite variable bounds,
* the single CVaR row ``tau + (1/gamma) sum_j (eps lambda_j + mean_i s_ij) <= 0``,
* three families indexed ``(i, k, j)`` with ``k = 0..K`` (``k = 0`` is the
  zero piece of the max):

    1. ``a_kj xi_ij            + b_k - s_ij <= 0``
    2. ``a_kj hi_j + b_k - lambda_j |hi_j - xi_ij| - s_ij <= 0``
    3. ``a_kj lo_j + b_k - lambda_j |lo_j - xi_ij| - s_ij <= 0``

  where ``a_k = D_k`` and ``b_k = ((B x - d)_k - tau) / m`` for ``k >= 1``,
* ``-lambda_j <= 0``.

Only the CVaR row depends on epsilon, so the matrix is stored as
``G0 + eps * G1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp

from .ambiguity import SampleSet
from .config import DEFAULT_TOLERANCES, Tolerances
from .model import CcLinearProgram, Observation
from .solver import SolverError, StandardLp, Status, solve_lp


class ForwardInfeasible(SolverError):
    pass


class ForwardUnbounded(SolverError):
    pass


@dataclass(frozen=True)
class Layout:
    n: int
    m: int
    n_samples: int
    n_cc: int
    n_ord: int

    # variable slices
    @property
    def x(self) -> slice:
        return slice(0, self.n)

    @property
    def tau(self) -> int:
        return self.n

    @property
    def lam(self) -> slice:
        return slice(self.n + 1, self.n + 1 + self.m)

    @property
    def s(self) -> slice:
        start = self.n + 1 + self.m
        return slice(start, start + self.n_samples * self.m)

    @property
    def n_vars(self) -> int:
        return self.n + 1 + self.m + self.n_samples * self.m

    # row slices
    @property
    def family_size(self) -> int:
        return self.n_samples * (self.n_cc + 1) * self.m

    @property
    def ordinary(self) -> slice:
        return slice(0, self.n_ord)

    @property
    def cvar(self) -> int:
        return self.n_ord

    def family(self, f: int) -> slice:
        if f not in (1, 2, 3):
            raise ValueError("families are numbered 1, 2, 3")
        start = self.n_ord + 1 + (f - 1) * self.family_size
        return slice(start, start + self.family_size)

    @property
    def lam_sign(self) -> slice:
        start = self.n_ord + 1 + 3 * self.family_size
        return slice(start, start + self.m)

    @property
    def n_rows(self) -> int:
        return self.n_ord + 1 + 3 * self.family_size + self.m

    def family_row(self, f: int, i: int, k: int, j: int) -> int:
        return self.family(f).start + (i * (self.n_cc + 1) + k) * self.m + j

    def s_index(self, i: int, j: int) -> int:
        return self.s.start + i * self.m + j


@dataclass(frozen=True, eq=False)
class FdroInstance:
    model: CcLinearProgram
    samples: SampleSet
    epsilon: float
    layout: Layout
    objective: np.ndarray
    base_matrix: sp.csr_matrix  # G0
    eps_matrix: sp.csr_matrix  # G1, nonzero only on the CVaR row
    rhs: np.ndarray

    @property
    def matrix(self) -> sp.csr_matrix:
        return (self.base_matrix + self.epsilon * self.eps_matrix).tocsr()

    def with_epsilon(self, epsilon: float) -> "FdroInstance":
        if not epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")
        return FdroInstance(
            self.model,
            self.samples,
            float(epsilon),
            self.layout,
            self.objective,
            self.base_matrix,
            self.eps_matrix,
            self.rhs,
        )

    def to_lp(self, x_fixed: Optional[np.ndarray] = None) -> StandardLp:
        """The forward LP, or with ``x_fixed`` the restriction that minimizes 0 over (tau, lambda, s)."""
        nv = self.layout.n_vars
        lower = np.full(nv, -np.inf)
        upper = np.full(nv, np.inf)
        c = self.objective
        if x_fixed is not None:
            lower[self.layout.x] = x_fixed
            upper[self.layout.x] = x_fixed
            c = np.zeros(nv)
        return StandardLp(c, self.matrix, self.rhs, lower=lower, upper=upper)

    def cvar_row_scale(self) -> float:
        lay = self.layout
        return max(1.0, self.epsilon / self.model.gamma, 1.0 / (self.model.gamma * lay.n_samples))


def assemble(model: CcLinearProgram, samples: SampleSet, epsilon: float) -> FdroInstance:
    model.check()
    if samples.dim != model.m:
        raise ValueError(f"samples have dimension {samples.dim}, model expects m={model.m}")
    if not epsilon >= 0:
        raise ValueError("epsilon must be nonnegative")
    A_ord, h_ord = model.ordinary_rows()
    n, m, K = model.n, model.m, model.n_cc
    N = samples.n_samples
    xi = samples.samples
    lay = Layout(n=n, m=m, n_samples=N, n_cc=K, n_ord=A_ord.shape[0])
    nv = lay.n_vars

    aext = np.vstack([np.zeros((1, m)), model.D])  # (K+1, m)
    bext = np.vstack([np.zeros((1, n)), model.B]) / m
    dext = np.r_[0.0, model.d] / m
    tau_coef = np.r_[0.0, -np.ones(K) / m]

    blocks, rhs = [], []
    for f in (1, 2, 3):
        point = xi if f == 1 else np.broadcast_to(samples.upper_bound if f == 2 else samples.lower_bound, xi.shape)
        dist = np.abs(point - xi)
        I, Kk, J = (g.ravel() for g in np.meshgrid(np.arange(N), np.arange(K + 1), np.arange(m), indexing="ij"))
        R = I.size
        r = np.arange(R)
        parts_r = [r, r]
        parts_c = [np.full(R, lay.tau), lay.s.start + I * m + J]
        parts_v = [tau_coef[Kk], -np.ones(R)]
        if f != 1:
            parts_r.append(r)
            parts_c.append(lay.lam.start + J)
            parts_v.append(-dist[I, J])
        fam = sp.csr_matrix(
            (np.concatenate(parts_v), (np.concatenate(parts_r), np.concatenate(parts_c))), shape=(R, nv)
        )
        xpart = sp.csr_matrix(bext)[Kk]
        fam = fam + sp.hstack([xpart, sp.csr_matrix((R, nv - n))])
        blocks.append(fam)
        rhs.append(dext[Kk] - aext[Kk, J] * point[I, J])

    ordinary = sp.hstack([sp.csr_matrix(A_ord), sp.csr_matrix((lay.n_ord, nv - n))])
    cvar = np.zeros(nv)
    cvar[lay.tau] = 1.0
    cvar[lay.s] = 1.0 / (model.gamma * N)
    lam_sign = sp.csr_matrix((-np.ones(m), (np.arange(m), lay.lam.start + np.arange(m))), shape=(m, nv))
    G0 = sp.vstack([ordinary, sp.csr_matrix(cvar), *blocks, lam_sign]).tocsr()
    g = np.concatenate([h_ord, [0.0], *rhs, np.zeros(m)])

    G1 = sp.csr_matrix(
        (np.full(m, 1.0 / model.gamma), (np.full(m, lay.cvar), lay.lam.start + np.arange(m))),
        shape=(lay.n_rows, nv),
    )
    obj = np.zeros(nv)
    obj[: n] = model.c
    assert G0.shape == (lay.n_rows, nv)
    return FdroInstance(model, samples, float(epsilon), lay, obj, G0, G1, g)


@dataclass(frozen=True, eq=False)
class KktPoint:
    x: np.ndarray
    tau: float
    lam: np.ndarray
    s: np.ndarray  # (N, m)
    theta: np.ndarray
    mu: float
    phi1: np.ndarray  # (N, K+1, m)
    phi2: np.ndarray
    phi3: np.ndarray
    eta: np.ndarray
    epsilon: float

    @classmethod
    def from_vectors(cls, inst: FdroInstance, z: np.ndarray, y: np.ndarray, epsilon: Optional[float] = None):
        lay = inst.layout
        shape = (lay.n_samples, lay.n_cc + 1, lay.m)
        return cls(
            x=np.array(z[lay.x]),
            tau=float(z[lay.tau]),
            lam=np.array(z[lay.lam]),
            s=np.array(z[lay.s]).reshape(lay.n_samples, lay.m),
            theta=np.array(y[lay.ordinary]),
            mu=float(y[lay.cvar]),
            phi1=np.array(y[lay.family(1)]).reshape(shape),
            phi2=np.array(y[lay.family(2)]).reshape(shape),
            phi3=np.array(y[lay.family(3)]).reshape(shape),
            eta=np.array(y[lay.lam_sign]),
            epsilon=inst.epsilon if epsilon is None else float(epsilon),
        )

    def primal_vector(self) -> np.ndarray:
        return np.concatenate([self.x, [self.tau], self.lam, self.s.ravel()])

    def dual_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.theta, [self.mu], self.phi1.ravel(), self.phi2.ravel(), self.phi3.ravel(), self.eta]
        )

    def duals_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "mu": self.mu,
            "phi1": self.phi1.tolist(),
            "phi2": self.phi2.tolist(),
            "phi3": self.phi3.tolist(),
            "eta": self.eta.tolist(),
        }


@dataclass(frozen=True)
class KktResiduals:
    """Max-abs residual per block of the optimality system."""

    stationarity_x: float
    stationarity_tau: float
    stationarity_lambda: float
    stationarity_s: float
    comp_ordinary: float
    comp_cvar: float
    comp_family1: float
    comp_family2: float
    comp_family3: float
    comp_lambda: float
    primal: float
    dual: float

    def as_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)

    def max(self) -> float:
        return max(self.__dict__.values())

    @property
    def stationarity(self) -> float:
        return max(self.stationarity_x, self.stationarity_tau, self.stationarity_lambda, self.stationarity_s)

    @property
    def complementarity(self) -> float:
        return max(
            self.comp_ordinary,
            self.comp_cvar,
            self.comp_family1,
            self.comp_family2,
            self.comp_family3,
            self.comp_lambda,
        )


def _mx(a) -> float:
    return float(np.max(np.abs(a), initial=0.0))


def kkt_residuals(inst: FdroInstance, point: KktPoint) -> KktResiduals:
    """Residuals computed from the Lagrangian of the assembled LP at ``point.epsilon``.

    Rows are divided by their max-abs coefficient first so that primal and
    complementarity residuals do not depend on the data's units.
    """
    lay = inst.layout
    G = (inst.base_matrix + point.epsilon * inst.eps_matrix).tocsr()
    z, y = point.primal_vector(), point.dual_vector()
    grad = inst.objective + G.T @ y
    slack = inst.rhs - G @ z
    scale = np.asarray(abs(G).max(axis=1).todense()).ravel()
    scale[scale == 0] = 1.0
    comp = np.abs(y * slack)
    return KktResiduals(
        stationarity_x=_mx(grad[lay.x]),
        stationarity_tau=abs(float(grad[lay.tau])),
        stationarity_lambda=_mx(grad[lay.lam]),
        stationarity_s=_mx(grad[lay.s]),
        comp_ordinary=_mx(comp[lay.ordinary]),
        comp_cvar=float(comp[lay.cvar]),
        comp_family1=_mx(comp[lay.family(1)]),
        comp_family2=_mx(comp[lay.family(2)]),
        comp_family3=_mx(comp[lay.family(3)]),
        comp_lambda=_mx(comp[lay.lam_sign]),
        primal=float(np.max(-slack / scale, initial=0.0)),
        dual=float(np.max(-y, initial=0.0)),
    )


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    instance: FdroInstance
    point: KktPoint
    objective: float
    cvar_slack: float
    cvar_binding: bool
    iterations: int = 0

    @property
    def x_opt(self) -> np.ndarray:
        return self.point.x

    def to_dict(self) -> dict:
        p = self.point
        return {
            "epsilon": self.instance.epsilon,
            "x": p.x.tolist(),
            "tau": p.tau,
            "lambda": p.lam.tolist(),
            "s": p.s.tolist(),
            "duals": p.duals_dict(),
            "objective": self.objective,
            "cvar_binding": self.cvar_binding,
            "cvar_slack": self.cvar_slack,
        }


def cvar_slack(inst: FdroInstance, z: np.ndarray) -> float:
    """Slack of the CVaR row at the point ``z``, in row-scaled units."""
    row = inst.matrix.getrow(inst.layout.cvar)
    return float(-(row @ z)[0]) / inst.cvar_row_scale()


def cvar_bound_slack(inst: FdroInstance, x: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES) -> Optional[float]:
    """Largest CVaR-row slack any auxiliary point can give at decision ``x``.

    The auxiliaries returned by a solver are arbitrary whenever the chance
    constraint is loose, so the point slack alone can read 0 for a row that
    does not restrict x.  None when x is infeasible at this radius.
    """
    lp = inst.to_lp(x_fixed=x)
    row = np.asarray(inst.matrix.getrow(inst.layout.cvar).todense()).ravel()
    row[inst.layout.x] = 0.0
    sol = solve_lp(lp.replace(objective=row), tol)
    if not sol.optimal:
        return None
    return max(0.0, -float(sol.objective_value)) / inst.cvar_row_scale()


def solve_forward(inst: FdroInstance, tol: Tolerances = DEFAULT_TOLERANCES) -> ForwardSolution:
    sol = solve_lp(inst.to_lp(), tol)
    if sol.status is Status.INFEASIBLE:
        raise ForwardInfeasible(f"forward program infeasible at epsilon={inst.epsilon:g}")
    if sol.status is Status.UNBOUNDED:
        raise ForwardUnbounded("forward program unbounded; the model probably lacks bounds")
    z = sol.primal
    slack = cvar_bound_slack(inst, z[inst.layout.x], tol)
    if slack is None:  # only at tolerance edges
        slack = cvar_slack(inst, z)
    point = KktPoint.from_vectors(inst, z, sol.dual_ineq)
    return ForwardSolution(
        instance=inst,
        point=point,
        objective=float(inst.model.c @ point.x),
        cvar_slack=slack,
        cvar_binding=abs(slack) <= tol.binding,
        iterations=sol.iterations,
    )


VERDICTS = ("feasible_only", "optimal", "infeasible")


@dataclass(frozen=True)
class Verdict:
    label: str  # one of VERDICTS
    epsilon: float
    observed_cost: float
    forward_objective: Optional[float] = None
    restriction_point: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.label == "optimal"

    @property
    def feasible(self) -> bool:
        return self.label != "infeasible"

    def certificate(self) -> dict:
        out = {"epsilon": self.epsilon, "observed_cost": self.observed_cost, "verdict": self.label}
        if self.forward_objective is not None:
            out["forward_objective"] = self.forward_objective
        return out


def restriction_feasible(inst: FdroInstance, x0: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES):
    """Feasibility of the program with x pinned to ``x0``; returns (flag, point or None)."""
    sol = solve_lp(inst.to_lp(x_fixed=x0), tol)
    if sol.status is Status.OPTIMAL:
        return True, sol.primal
    return False, None


def is_observation_optimal(
    model: CcLinearProgram,
    samples: SampleSet,
    epsilon: float,
    x0,
    tol: Tolerances = DEFAULT_TOLERANCES,
    instance: Optional[FdroInstance] = None,
) -> Verdict:
    obs = x0 if isinstance(x0, Observation) else Observation(x0)
    obs.check_against(model)
    inst = instance.with_epsilon(epsilon) if instance is not None else assemble(model, samples, epsilon)
    cost = float(model.c @ obs.x0)
    ok, z = restriction_feasible(inst, obs.x0, tol)
    if not ok:
        return Verdict("infeasible", float(epsilon), cost)
    fwd = solve_forward(inst, tol)
    label = "optimal" if cost <= fwd.objective + tol.objective * (1.0 + abs(fwd.objective)) else "feasible_only"
    return Verdict(label, float(epsilon), cost, fwd.objective, z)
