"""Independent reference computations used by the tests.

Nothing here imports the package's solver or assembly code.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog


def enumerate_vertices(c, G, g, tol=1e-9):
    """Brute-force min c'z over {G z <= g} by visiting every basic solution.

    Only for tiny bounded problems.  Returns (value, z) or (inf, None) when no
    vertex is feasible.
    """
    c, G, g = np.asarray(c, float), np.asarray(G, float), np.asarray(g, float)
    n = c.size
    best, arg = np.inf, None
    for rows in itertools.combinations(range(G.shape[0]), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        z = np.linalg.solve(M, g[list(rows)])
        if (G @ z <= g + tol * (1 + np.abs(g))).all():
            v = float(c @ z)
            if v < best - 1e-12:
                best, arg = v, z
    return best, arg


def fdro_dense(c, A, h, B, D, d, gamma, xi, lo, hi, eps):
    """Hand-written dense forward program with variables (x, tau, lambda, s)."""
    c, A, h, B, D, d = (np.atleast_1d(np.asarray(v, float)) for v in (c, A, h, B, D, d))
    A, B, D = np.atleast_2d(A), np.atleast_2d(B), np.atleast_2d(D)
    xi = np.atleast_2d(np.asarray(xi, float))
    lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
    N, m = xi.shape
    n, K = c.size, B.shape[0]
    nv = n + 1 + m + N * m
    rows, rhs = [], []

    def blank():
        return np.zeros(nv)

    for r in range(A.shape[0]):
        row = blank()
        row[:n] = A[r]
        rows.append(row)
        rhs.append(h[r])
    row = blank()
    row[n] = 1.0
    row[n + 1 : n + 1 + m] = eps / gamma
    row[n + 1 + m :] = 1.0 / (gamma * N)
    rows.append(row)
    rhs.append(0.0)
    for fam in range(3):
        for i in range(N):
            for k in range(K + 1):
                for j in range(m):
                    row = blank()
                    if k > 0:
                        row[:n] = B[k - 1] / m
                        row[n] = -1.0 / m
                        a, dk = D[k - 1, j], d[k - 1] / m
                    else:
                        a, dk = 0.0, 0.0
                    point = (xi[i, j], hi[j], lo[j])[fam]
                    if fam:
                        row[n + 1 + j] = -abs(point - xi[i, j])
                    row[n + 1 + m + i * m + j] = -1.0
                    rows.append(row)
                    rhs.append(dk - a * point)
    for j in range(m):
        row = blank()
        row[n + 1 + j] = -1.0
        rows.append(row)
        rhs.append(0.0)
    cc = np.zeros(nv)
    cc[:n] = c
    return cc, np.array(rows), np.array(rhs)


def t1_closed_form(eps):
    """x*(eps) for the one-variable example: max x, x <= 10, x + xi <= 1, xi in [-1, 1], sample {0}."""
    return max(0.0, 1.0 - 10.0 * eps)


def w1_1d(a_loc, a_w, b_loc, b_w):
    """1-D Wasserstein-1 as the integral of |F - G|."""
    pts = np.union1d(a_loc, b_loc)
    F = np.array([a_w[a_loc <= t].sum() for t in pts[:-1]])
    G = np.array([b_w[b_loc <= t].sum() for t in pts[:-1]])
    return float(np.sum(np.abs(F - G) * np.diff(pts)))


def deterministic_dcopf(system, fmax_factor=1.0):
    """Plain LP: dispatch and reserve with hard flow limits, written from scratch."""
    ng = system.n_gen
    PS = system.ptdf @ system.gen_bus_map
    flow0 = system.ptdf @ system.net_load
    total = system.net_load.sum()
    R = system.reserve_fraction * total
    c = np.r_[system.cost, np.zeros(ng)]
    f = fmax_factor * system.f_max
    A_ub = np.vstack(
        [
            np.hstack([PS, np.zeros_like(PS)]),
            np.hstack([-PS, np.zeros_like(PS)]),
            np.hstack([np.eye(ng), np.eye(ng)]),
            -np.hstack([np.eye(ng), np.eye(ng)]),
            np.r_[np.zeros(ng), -np.ones(ng)][None, :],
        ]
    )
    b_ub = np.r_[f + flow0, f - flow0, system.x_max, -system.x_min, -R]
    A_eq = np.r_[np.ones(ng), np.zeros(ng)][None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[total], bounds=[(0, None)] * (2 * ng), method="highs")
    assert res.status == 0, res.message
    return res.fun, res.x


def random_cclp(rng, n=None, m=None, K=None, N=None):
    """A small bounded instance whose origin is robustly feasible.

    Returns (model kwargs, samples, lower, upper).
    """
    n = n or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 3))
    K = K or int(rng.integers(1, 3))
    N = N or int(rng.integers(1, 4))
    n_oc = int(rng.integers(1, 3))
    c = rng.uniform(-2, 1, n)
    c[0] = -abs(c[0]) - 0.5  # something to push against
    A = rng.uniform(0, 1, (n_oc, n))
    h = rng.uniform(2, 5, n_oc)
    B = rng.uniform(0.2, 1.5, (K, n))
    D = rng.uniform(-1, 1, (K, m))
    lo, hi = -np.ones(m), np.ones(m)
    # the per-coordinate bound needs the margin to cover m times the worst deviation
    d = m * np.abs(D).sum(axis=1) + rng.uniform(0.5, 2.0, K)
    xi = rng.uniform(-1, 1, (N, m))
    kw = dict(c=c, A=A, h=h, B=B, D=D, d=d, gamma=float(rng.uniform(0.1, 0.4)),
              variable_lower=np.zeros(n), variable_upper=np.full(n, 5.0))
    return kw, xi, lo, hi
