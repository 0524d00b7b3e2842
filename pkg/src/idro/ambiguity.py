"""Empirical distributions, l1-Wasserstein distances and the critical radius."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .solver import SolverError, StandardLp, solve_lp


def _frozen(a, ndim: int) -> np.ndarray:
    a = np.array(a, dtype=float, ndmin=ndim)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SampleSet:
    """N_s realizations of an m-dimensional random vector and its box support."""

    samples: np.ndarray
    lower_bound: np.ndarray
    upper_bound: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        xi = _frozen(self.samples, 2)
        lo = _frozen(self.lower_bound, 1).ravel()
        hi = _frozen(self.upper_bound, 1).ravel()
        object.__setattr__(self, "samples", xi)
        object.__setattr__(self, "lower_bound", lo)
        object.__setattr__(self, "upper_bound", hi)
        if xi.shape[0] < 1 or xi.shape[1] < 1:
            raise ValueError("a sample set needs at least one sample of dimension >= 1")
        if lo.size != xi.shape[1] or hi.size != xi.shape[1]:
            raise ValueError(f"bounds must have length m={xi.shape[1]}")
        if not (np.isfinite(xi).all() and np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("samples and bounds must be finite")
        if not (lo < hi).all():
            bad = np.flatnonzero(lo >= hi)
            raise ValueError(f"degenerate support in coordinates {bad.tolist()}")
        outside = (xi < lo) | (xi > hi)
        if outside.any():
            i, j = np.argwhere(outside)[0]
            raise ValueError(f"sample {i} coordinate {j} lies outside the support")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def head(self, n: int) -> "SampleSet":
        return SampleSet(self.samples[:n], self.lower_bound, self.upper_bound, self.seed)


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = _frozen(self.locations, 2)
        w = _frozen(self.weights, 1).ravel()
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)
        if loc.shape[0] == 0 or loc.shape[0] != w.size:
            raise ValueError("need one weight per atom and at least one atom")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")

    @property
    def atoms(self) -> List[Tuple[np.ndarray, float]]:
        return [(self.locations[i], float(self.weights[i])) for i in range(self.weights.size)]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]


@dataclass(frozen=True)
class WassersteinBall:
    center: DiscreteDistribution
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("radius must be nonnegative")

    def contains(self, q: DiscreteDistribution, slack: float = 1e-9) -> bool:
        return wasserstein_discrete(self.center, q) <= self.radius + slack


def dirac(point) -> DiscreteDistribution:
    return DiscreteDistribution(np.atleast_2d(np.asarray(point, dtype=float)), [1.0])


def empirical_from_samples(s: SampleSet) -> DiscreteDistribution:
    n = s.n_samples
    w = np.full(n, 1.0 / n)
    w[-1] = 1.0 - w[:-1].sum()
    return DiscreteDistribution(s.samples, w)


def wasserstein_to_dirac(p: DiscreteDistribution, point) -> float:
    # every coupling with a Dirac marginal ships all mass to the point
    point = np.asarray(point, dtype=float).ravel()
    return float(p.weights @ np.abs(p.locations - point).sum(axis=1))


def wasserstein_discrete(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """Optimal transport cost under the l1 ground metric, solved as an LP."""
    if p.dim != q.dim:
        raise ValueError("distributions live in different dimensions")
    a, b = p.weights.size, q.weights.size
    cost = np.abs(p.locations[:, None, :] - q.locations[None, :, :]).sum(axis=2).ravel()
    rows = sp.kron(sp.identity(a), np.ones((1, b)))
    cols = sp.kron(np.ones((1, a)), sp.identity(b))
    lp = StandardLp(
        objective=cost,
        eq_matrix=sp.vstack([rows, cols]).tocsr(),
        eq_rhs=np.concatenate([p.weights, q.weights]),
        lower=np.zeros(a * b),
    )
    sol = solve_lp(lp)
    if not sol.optimal:
        raise SolverError(f"transport LP ended with status {sol.status.value}")
    return max(float(sol.objective_value), 0.0)


def corner_distances(s: SampleSet) -> Tuple[float, float]:
    """(distance to the upper corner, distance to the lower corner)."""
    p = empirical_from_samples(s)
    return wasserstein_to_dirac(p, s.upper_bound), wasserstein_to_dirac(p, s.lower_bound)


def epsilon_max(s: SampleSet) -> float:
    return max(corner_distances(s))


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".bounds.json")


def write_samples(s: SampleSet, csv_path) -> Path:
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"xi_{j + 1}" for j in range(s.dim)])
        for row in s.samples:
            w.writerow([repr(float(v)) for v in row])
    side = sidecar_path(csv_path)
    side.write_text(
        json.dumps(
            {"lower": s.lower_bound.tolist(), "upper": s.upper_bound.tolist(), "seed": s.seed},
            indent=2,
        )
        + "\n"
    )
    return side


def read_samples(csv_path, bounds_path=None) -> SampleSet:
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise ValueError(f"{csv_path}: no samples")
    header = rows[0]
    if header != [f"xi_{j + 1}" for j in range(len(header))]:
        raise ValueError(f"{csv_path}: header must be xi_1,...,xi_m")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise ValueError(f"{csv_path}: {exc}") from None
    if data.shape[1] != len(header):
        raise ValueError(f"{csv_path}: ragged rows")
    side = json.loads(Path(bounds_path or sidecar_path(csv_path)).read_text())
    return SampleSet(data, side["lower"], side["upper"], side.get("seed"))
