"""Radius recovery from the optimality system with x pinned to the observation.

The unknowns are the radius, the auxiliary primal variables (tau, lambda, s)
and every multiplier.  Complementarity is encoded with one binary per pair and
big-M bounds.  The only products left are eps*mu and eps*lambda_j; both are
lifted (nu = eps*mu, w_j = eps*lambda_j) and replaced by McCormick envelopes
over the current radius interval, so each node of a spatial branch-and-bound
on eps is a mixed-binary LP.  The envelopes are exact once an interval shrinks
to a point, which is how candidate radii are confirmed.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .ambiguity import SampleSet
from .forward import FdroInstance, ForwardInfeasible, assemble, solve_forward
from .inverse import (
    ConfigError,
    ObservationNotRationalizable,
    RecoveryConfig,
    RecoveryReport,
    _base_report,
    _prepare,
    binding_at,
)
from .model import CcLinearProgram
from .solver import (
    MixedBinaryLp,
    NodeLimitExceeded,
    SolverError,
    StandardLp,
    Status,
    solve_lp,
    solve_mixed_binary,
)


class BigMTooTight(SolverError):
    """A multiplier or slack ended within 1% of its big-M bound."""


@dataclass
class _Index:
    eps: int
    tau: int
    lam: slice
    s: slice
    w: slice
    y: slice
    nu: int
    b: slice
    sig_p: slice
    sig_m: slice
    rho_y: slice
    rho_s: slice
    n: int


class KktSystem:
    """The optimality system of one instance at fixed x, ready for node solves."""

    def __init__(self, inst: FdroInstance, x0: np.ndarray, cfg: RecoveryConfig, relaxed: bool):
        self.inst, self.x0, self.cfg, self.relaxed = inst, x0, cfg, relaxed
        lay = inst.layout
        self.lay = lay
        G0 = inst.base_matrix.tocsc()
        self.G0 = G0
        self.gamma = inst.model.gamma
        nrow = lay.n_rows
        n, m = lay.n, lay.m
        self.rest = np.arange(n, lay.n_vars)  # tau, lambda, s
        # right-hand side once x is pinned
        self.rhs_x = inst.rhs - G0[:, :n] @ x0
        ordinary_slack = self.rhs_x[lay.ordinary]
        if (ordinary_slack < -cfg.tol.feasibility * np.maximum(1, np.abs(inst.rhs[lay.ordinary]))).any():
            raise ObservationNotRationalizable("x0 violates an ordinary constraint")
        self.ord_active = np.abs(ordinary_slack) <= 1e-7 * np.maximum(1.0, np.abs(inst.rhs[lay.ordinary]))
        self.pairs = np.arange(lay.cvar, nrow)  # every row after the ordinary block
        if self.pairs.size > cfg.max_pairs:
            raise ConfigError(
                f"{self.pairs.size} complementarity pairs exceed the KKT-MILP limit of {cfg.max_pairs}"
            )
        npair = self.pairs.size
        k = 0

        def take(size):
            nonlocal k
            sl = slice(k, k + size)
            k += size
            return sl

        eps = take(1).start
        tau = take(1).start
        lam = take(m)
        s = take(lay.n_samples * m)
        w = take(m)
        y = take(nrow)
        nu = take(1).start
        b = take(npair)
        nz = lay.n_vars if relaxed else 0
        sig_p, sig_m = take(nz), take(nz)
        nr = npair if relaxed else 0
        rho_y, rho_s = take(nr), take(nr)
        self.ix = _Index(eps, tau, lam, s, w, y, nu, b, sig_p, sig_m, rho_y, rho_s, k)
        self._derive_big_m(1.0)

    # big-M from reference forward solves
    def _derive_big_m(self, factor: float) -> None:
        lay, inst, cfg = self.lay, self.inst, self.cfg
        duals, slacks, lams = [], [], []
        for eps in (0.0, cfg.epsilon_bar):
            try:
                f = solve_forward(inst.with_epsilon(eps), cfg.tol)
            except (ForwardInfeasible, SolverError):
                continue
            y = f.point.dual_vector()
            z = f.point.primal_vector()
            duals.append(y)
            slacks.append(inst.with_epsilon(eps).rhs - inst.with_epsilon(eps).matrix @ z)
            lams.append(f.point.lam)
        # a restriction point gives slack magnitudes at x0 itself
        lp = inst.to_lp(x_fixed=self.x0)
        sol = solve_lp(lp, cfg.tol)
        if sol.optimal:
            slacks.append(lp.ineq_rhs - lp.ineq_matrix @ sol.primal)
            lams.append(sol.primal[lay.lam])
        scale = cfg.big_m_scale * factor
        blocks = [lay.ordinary, slice(lay.cvar, lay.cvar + 1), lay.family(1), lay.family(2), lay.family(3), lay.lam_sign]
        self.m_dual = np.ones(lay.n_rows)
        self.m_slack = np.ones(lay.n_rows)
        for blk in blocks:
            dmax = max([float(np.max(np.abs(v[blk]), initial=0.0)) for v in duals] + [1.0])
            smax = max([float(np.max(np.abs(v[blk]), initial=0.0)) for v in slacks] + [1.0])
            self.m_dual[blk] = scale * dmax
            self.m_slack[blk] = scale * smax
        # a single multiplier can carry the whole objective gradient
        cnorm = float(np.abs(inst.model.c).sum())
        self.m_dual = np.maximum(self.m_dual, scale * cnorm)
        self.m_lam = scale * max([float(np.max(v, initial=0.0)) for v in lams] + [1.0])
        self.m_slack[lay.lam_sign] = self.m_lam

    def escalate(self, factor: float) -> None:
        self._derive_big_m(factor)

    # ---- problem construction
    def build(self, L: float, U: float, mode: str) -> Tuple[MixedBinaryLp, np.ndarray]:
        """mode: 'relax' (maximize eps over [L, U]) or 'fix' (eps = L = U, minimize slack or L1 duals)."""
        ix, lay, G0 = self.ix, self.lay, self.G0
        nv = ix.n
        nrow = lay.n_rows
        n, m = lay.n, lay.m
        gi = 1.0 / self.gamma
        rows_ub, rhs_ub, rows_eq, rhs_eq = [], [], [], []

        # map from assembled columns (tau, lambda, s) to MILP columns
        rest_cols = np.r_[ix.tau, np.arange(ix.lam.start, ix.lam.stop), np.arange(ix.s.start, ix.s.stop)]
        Grest = G0[:, n:].tocoo()
        Pz = sp.csr_matrix((Grest.data, (Grest.row, rest_cols[Grest.col])), shape=(nrow, nv))
        Wrow = sp.csr_matrix(
            (np.full(m, gi), (np.full(m, lay.cvar), np.arange(ix.w.start, ix.w.stop))), shape=(nrow, nv)
        )
        primal = (Pz + Wrow).tocsr()
        pair_rows = self.pairs
        # primal feasibility on every non-ordinary row
        rows_ub.append(primal[pair_rows])
        rhs_ub.append(self.rhs_x[pair_rows])

        # stationarity: c + G0' y + (1/gamma) nu on lambda columns (+ sigma) = 0
        GT = G0.T.tocoo()
        stat = sp.csr_matrix((GT.data, (GT.row, ix.y.start + GT.col)), shape=(lay.n_vars, nv)).tolil()
        for j in range(m):
            stat[lay.lam.start + j, ix.nu] = gi
        stat = stat.tocsr()
        if self.relaxed:
            eye = sp.identity(lay.n_vars, format="csr")
            stat = stat + sp.hstack(
                [sp.csr_matrix((lay.n_vars, ix.sig_p.start)), eye, -eye, sp.csr_matrix((lay.n_vars, nv - ix.sig_m.stop))]
            ).tocsr()
        rows_eq.append(stat)
        rhs_eq.append(-self.inst.objective)

        # complementarity: y_r <= M b_r (+ rho), slack_r <= M (1 - b_r) (+ rho)
        npair = pair_rows.size
        bcols = np.arange(ix.b.start, ix.b.stop)
        Md = self.m_dual[pair_rows]
        Ms = self.m_slack[pair_rows]
        r = np.arange(npair)
        ycap = sp.csr_matrix(
            (np.r_[np.ones(npair), -Md], (np.r_[r, r], np.r_[ix.y.start + pair_rows, bcols])), shape=(npair, nv)
        )
        scap = (-primal[pair_rows] + sp.csr_matrix((Ms, (r, bcols)), shape=(npair, nv))).tocsr()
        if self.relaxed:
            ycap = ycap - sp.csr_matrix((np.ones(npair), (r, ix.rho_y.start + r)), shape=(npair, nv))
            scap = scap - sp.csr_matrix((np.ones(npair), (r, ix.rho_s.start + r)), shape=(npair, nv))
        rows_ub += [ycap, scap]
        rhs_ub += [np.zeros(npair), Ms - self.rhs_x[pair_rows]]

        # McCormick envelopes: nu = eps*mu, w_j = eps*lambda_j
        mu_col = ix.y.start + lay.cvar
        Mmu = self.m_dual[lay.cvar]
        env = [(ix.nu, mu_col, Mmu)] + [(ix.w.start + j, ix.lam.start + j, self.m_lam) for j in range(m)]
        for prod, fac, M in env:
            # prod >= L*f ; prod >= U*f + M*eps - U*M ; prod <= U*f ; prod <= L*f + M*eps - L*M
            for coefs, rhs in (
                ({prod: -1.0, fac: L}, 0.0),
                ({prod: -1.0, fac: U, ix.eps: M}, U * M),
                ({prod: 1.0, fac: -U}, 0.0),
                ({prod: 1.0, fac: -L, ix.eps: -M}, -L * M),
            ):
                cols = list(coefs)
                rows_ub.append(sp.csr_matrix((list(coefs.values()), ([0] * len(cols), cols)), shape=(1, nv)))
                rhs_ub.append([rhs])

        lower = np.full(nv, -np.inf)
        upper = np.full(nv, np.inf)
        lower[ix.eps], upper[ix.eps] = L, U
        lower[ix.lam], upper[ix.lam] = 0.0, self.m_lam
        lower[ix.w], upper[ix.w] = 0.0, U * self.m_lam
        lower[ix.y], upper[ix.y] = 0.0, self.m_dual
        yo = ix.y.start + np.arange(lay.n_ord)
        upper[yo[~self.ord_active]] = 0.0
        lower[ix.nu], upper[ix.nu] = 0.0, U * Mmu
        lower[ix.b], upper[ix.b] = 0.0, 1.0
        if self.relaxed:
            for sl in (ix.sig_p, ix.sig_m, ix.rho_y, ix.rho_s):
                lower[sl] = 0.0

        obj = np.zeros(nv)
        penalty = np.zeros(nv)
        if self.relaxed:
            for sl in (ix.sig_p, ix.sig_m, ix.rho_y, ix.rho_s):
                penalty[sl] = 1.0
        if mode == "relax":
            obj[ix.eps] = -1.0
            obj += self.cfg.noise_weight * penalty
        elif mode == "fix":
            obj += self.cfg.noise_weight * penalty
        elif mode == "repr":
            obj[ix.y] = 1.0 / self.m_dual
        else:
            raise ValueError(mode)
        lp = StandardLp(
            obj,
            sp.vstack(rows_ub).tocsr(),
            np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in rhs_ub]),
            sp.vstack(rows_eq).tocsr(),
            np.concatenate(rhs_eq),
            lower,
            upper,
        )
        return MixedBinaryLp(lp, np.arange(ix.b.start, ix.b.stop), np.r_[Md, Ms]), obj

    def solve(self, L: float, U: float, mode: str, node_limit: int):
        p, _ = self.build(L, U, mode)
        return solve_mixed_binary(p, self.cfg.tol, node_limit=node_limit)

    def slack_total(self, z: np.ndarray) -> float:
        ix = self.ix
        if not self.relaxed:
            return 0.0
        return float(sum(z[sl].sum() for sl in (ix.sig_p, ix.sig_m, ix.rho_y, ix.rho_s)))

    def audit(self, z: np.ndarray) -> None:
        ix, lay = self.ix, self.lay
        y = z[ix.y]
        near = y >= 0.99 * self.m_dual
        if near.any():
            raise BigMTooTight(f"multiplier rows {np.flatnonzero(near)[:5].tolist()} reach their big-M")
        lam = z[ix.lam]
        if (lam >= 0.99 * self.m_lam).any():
            raise BigMTooTight("lambda reaches its big-M bound")
        pz = self.rhs_x[self.pairs] - self._primal_rows(z)
        if (pz >= 0.99 * self.m_slack[self.pairs]).any():
            raise BigMTooTight("a constraint slack reaches its big-M")

    def _primal_rows(self, z: np.ndarray) -> np.ndarray:
        ix, lay = self.ix, self.lay
        rest = np.r_[z[ix.tau], z[ix.lam], z[ix.s]]
        vals = self.G0[:, lay.n:] @ rest
        vals[lay.cvar] += z[ix.w].sum() / self.gamma
        return vals[self.pairs]

    def restriction_feasible(self, eps: float) -> bool:
        return solve_lp(self.inst.with_epsilon(eps).to_lp(x_fixed=self.x0), self.cfg.tol).optimal


def _search(sys: KktSystem, cfg: RecoveryConfig, rep: RecoveryReport):
    """Best-first spatial branch-and-bound on eps; returns (eps*, solution vector) or None."""
    bar, tol = cfg.epsilon_bar, cfg.bisection_tol
    w = cfg.noise_weight
    best_obj, best = np.inf, None
    # ties go to the upper interval first
    heap: List[Tuple[float, float, float, float]] = [(-np.inf, -bar, 0.0, bar)]
    prune = 1e-12 if sys.relaxed else tol
    nodes = 0
    while heap:
        bound, _, L, U = heapq.heappop(heap)
        if bound >= best_obj - prune:
            break
        nodes += 1
        if nodes > cfg.node_limit:
            raise NodeLimitExceeded(f"KKT-MILP search exceeded {cfg.node_limit} nodes")
        relax = sys.solve(L, U, "relax", cfg.node_limit)
        if relax.lp.status is not Status.OPTIMAL:
            if U - L <= tol:
                # very thin envelopes can read infeasible numerically; test the ends exactly
                for e in (U, L):
                    end = sys.solve(e, e, "fix", cfg.node_limit)
                    if end.lp.status is Status.OPTIMAL:
                        val = (bar - e) + w * sys.slack_total(end.lp.primal)
                        rep.trace.append((e, "optimal"))
                        if val < best_obj:
                            best_obj, best = val, (e, end.lp.primal)
                        break
                else:
                    rep.trace.append((0.5 * (L + U), "infeasible"))
                continue
            rep.trace.append((0.5 * (L + U), "infeasible"))
            continue
        z = relax.lp.primal
        e_r = float(np.clip(z[sys.ix.eps], L, U))
        node_bound = (bar - e_r) + w * sys.slack_total(z)
        if node_bound >= best_obj - prune:
            continue
        exact = sys.solve(e_r, e_r, "fix", cfg.node_limit)
        if exact.lp.status is Status.OPTIMAL:
            val = (bar - e_r) + w * sys.slack_total(exact.lp.primal)
            rep.trace.append((e_r, "optimal"))
            if val < best_obj:
                best_obj, best = val, (e_r, exact.lp.primal)
            if val <= node_bound + 1e-9:
                continue
        else:
            rep.trace.append((e_r, "infeasible"))
        if U - L <= tol:
            # The optimal set may be a single point, so no pointwise confirmation
            # is possible.  The envelope still has slack at this width, so the
            # leaf only counts when x0 is exactly primal feasible at L; with a
            # shrinking feasible set that pins the leaf to the frontier.
            if not sys.relaxed and sys.restriction_feasible(L):
                mid = 0.5 * (L + U)
                rep.trace.append((mid, "optimal"))
                if bar - mid < best_obj:
                    best_obj, best = bar - mid, (mid, z)
            continue
        mid = 0.5 * (L + U)
        heapq.heappush(heap, (node_bound, -U, mid, U))
        heapq.heappush(heap, (node_bound, -mid, L, mid))
    rep.iterations = nodes
    return best


def _run(model, samples, x0, cfg: RecoveryConfig, relaxed: bool, engine: str) -> RecoveryReport:
    x0, eps_max = _prepare(model, samples, x0, cfg)
    rep = _base_report(cfg, eps_max, samples, model, engine)
    inst = assemble(model, samples, 0.0)
    try:
        f = solve_forward(inst.with_epsilon(cfg.epsilon_bar), cfg.tol)
        rep.cvar_slack_at_bar = f.cvar_slack
    except ForwardInfeasible:
        pass
    sys = KktSystem(inst, x0, cfg, relaxed)
    factor = 1.0
    for attempt in range(3):
        rep.trace.clear()
        found = _search(sys, cfg, rep)
        if found is None:
            if relaxed:
                raise ObservationNotRationalizable("x0 is infeasible for the restriction at every radius")
            raise ObservationNotRationalizable("no radius in [0, epsilon_bar] satisfies the optimality system at x0")
        eps_star, z = found
        if relaxed:
            # zero-width re-solve yields a clean point at the chosen radius
            rep.total_slack = sys.slack_total(z)
        else:
            rep_sol = sys.solve(z[sys.ix.eps], z[sys.ix.eps], "repr", cfg.node_limit)
            if rep_sol.lp.status is Status.OPTIMAL:
                z = rep_sol.lp.primal
        try:
            sys.audit(z)
        except BigMTooTight:
            if attempt == 2:
                raise
            factor *= 10.0
            sys.escalate(factor)
            rep.notes.append(f"big-M escalated by {factor:g}")
            continue
        break
    rep.epsilon_star = float(eps_star)
    rep.failed = abs(eps_star - cfg.epsilon_bar) <= cfg.bisection_tol
    if rep.failed:
        rep.epsilon_star = cfg.epsilon_bar
    rep.binding_at_star = binding_at(inst, x0, rep.epsilon_star, cfg)
    return rep


def recover_kkt_milp(
    model: CcLinearProgram, samples: SampleSet, x0, cfg: RecoveryConfig = RecoveryConfig()
) -> RecoveryReport:
    """Largest radius whose optimality system admits x0, by branch-and-bound on the radius."""
    return _run(model, samples, x0, cfg, relaxed=False, engine="milp")


def recover_relaxed(
    model: CcLinearProgram,
    samples: SampleSet,
    x0,
    cfg: RecoveryConfig = RecoveryConfig(),
    noise_weight: Optional[float] = None,
) -> RecoveryReport:
    """Noise-tolerant variant: optimality conditions may be violated at a price.

    Objective is (epsilon_bar - eps) + noise_weight * (total violation).
    """
    if noise_weight is not None:
        cfg = replace(cfg, noise_weight=float(noise_weight))
    x0v, _ = _prepare(model, samples, x0, cfg)
    inst = assemble(model, samples, 0.0)
    # the feasible set only shrinks with the radius, so zero is the last chance
    if not solve_lp(inst.to_lp(x_fixed=x0v), cfg.tol).optimal:
        raise ObservationNotRationalizable("x0 is infeasible for the restriction at every radius")
    return _run(model, samples, x0, cfg, relaxed=True, engine="relaxed")
