"""Chance-constrained LP data model and the observed decision."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np


def _arr(a, ndim: int) -> Optional[np.ndarray]:
    if a is None:
        return None
    out = np.array(a, dtype=float)
    if out.ndim < ndim:
        out = out.reshape((1,) * (ndim - out.ndim) + out.shape) if out.size else out.reshape((0,) * ndim)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CcLinearProgram:
    """min c'x  s.t.  A x <= h  and  Pr{B x + D xi <= d} >= 1 - gamma  for every
    distribution in the ambiguity set.

    Construction never raises on bad numbers; call ``validate`` (or ``check``)
    before using a model that came from outside.
    """

    c: np.ndarray
    A: np.ndarray
    h: np.ndarray
    B: np.ndarray
    D: np.ndarray
    d: np.ndarray
    gamma: float
    variable_lower: Optional[np.ndarray] = None
    variable_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        for name, nd in (("c", 1), ("A", 2), ("h", 1), ("B", 2), ("D", 2), ("d", 1)):
            object.__setattr__(self, name, _arr(getattr(self, name), nd))
        object.__setattr__(self, "variable_lower", _arr(self.variable_lower, 1))
        object.__setattr__(self, "variable_upper", _arr(self.variable_upper, 1))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.D.shape[1]

    @property
    def n_oc(self) -> int:
        return self.A.shape[0]

    @property
    def n_cc(self) -> int:
        return self.B.shape[0]

    def check(self) -> "CcLinearProgram":
        problems = validate(self)
        if problems:
            raise ValueError("invalid model: " + "; ".join(problems))
        return self

    def ordinary_rows(self):
        """A and h with the finite variable bounds appended as extra rows."""
        rows, rhs = [self.A], [self.h]
        eye = np.eye(self.n)
        if self.variable_lower is not None:
            idx = np.flatnonzero(np.isfinite(self.variable_lower))
            rows.append(-eye[idx])
            rhs.append(-self.variable_lower[idx])
        if self.variable_upper is not None:
            idx = np.flatnonzero(np.isfinite(self.variable_upper))
            rows.append(eye[idx])
            rhs.append(self.variable_upper[idx])
        return np.vstack(rows), np.concatenate(rhs)

    def to_dict(self) -> dict:
        out = {
            "c": self.c.tolist(),
            "A": self.A.tolist(),
            "h": self.h.tolist(),
            "B": self.B.tolist(),
            "D": self.D.tolist(),
            "d": self.d.tolist(),
            "gamma": self.gamma,
        }
        if self.variable_lower is not None:
            out["lb"] = [None if np.isinf(v) else float(v) for v in self.variable_lower]
        if self.variable_upper is not None:
            out["ub"] = [None if np.isinf(v) else float(v) for v in self.variable_upper]
        return out


def _bound_list(values, fill: float):
    if values is None:
        return None
    return [fill if v is None else v for v in values]


def model_from_dict(data: dict) -> CcLinearProgram:
    missing = [k for k in ("c", "A", "h", "B", "D", "d", "gamma") if k not in data]
    if missing:
        raise ValueError(f"model JSON lacks keys {missing}")
    return CcLinearProgram(
        c=data["c"],
        A=data["A"],
        h=data["h"],
        B=data["B"],
        D=data["D"],
        d=data["d"],
        gamma=data["gamma"],
        variable_lower=_bound_list(data.get("lb"), -np.inf),
        variable_upper=_bound_list(data.get("ub"), np.inf),
    )


def load_model(path) -> CcLinearProgram:
    return model_from_dict(json.loads(Path(path).read_text()))


def save_model(model: CcLinearProgram, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def _nonfinite(name: str, a: np.ndarray, allow_inf: bool = False) -> List[str]:
    bad = np.isnan(a) if allow_inf else ~np.isfinite(a)
    if not bad.any():
        return []
    idx = [tuple(int(i) for i in t) for t in np.argwhere(bad)[:5]]
    return [f"{name}: non-finite entries at {idx}"]


def validate(model: CcLinearProgram) -> List[str]:
    """Diagnostics for every broken invariant; an empty list means the model is usable."""
    out: List[str] = []
    try:
        c, A, h, B, D, d = model.c, model.A, model.h, model.B, model.D, model.d
        shapes = {"c": (c, 1), "A": (A, 2), "h": (h, 1), "B": (B, 2), "D": (D, 2), "d": (d, 1)}
        for name, (a, nd) in shapes.items():
            if a is None or a.ndim != nd:
                out.append(f"{name}: expected a {nd}-d array")
        if out:
            return out
        n = c.size
        if n == 0:
            out.append("c: empty decision vector")
        if A.shape[0] == 0:
            out.append("A: no ordinary constraint rows")
        if B.shape[0] == 0:
            out.append("B: no chance-constraint rows")
        if D.shape[1] == 0:
            out.append("D: zero uncertainty dimension")
        if A.shape[1] != n:
            out.append(f"A: has {A.shape[1]} columns, c has {n} entries")
        if A.shape[0] != h.size:
            out.append(f"A/h: A has {A.shape[0]} rows, h has {h.size} entries")
        if B.shape[1] != n:
            out.append(f"B: has {B.shape[1]} columns, c has {n} entries")
        if B.shape[0] != d.size:
            out.append(f"B/d: B has {B.shape[0]} rows, d has {d.size} entries")
        if D.shape[0] != d.size:
            out.append(f"D/d: D has {D.shape[0]} rows, d has {d.size} entries")
        for name in ("c", "A", "h", "B", "D", "d"):
            out += _nonfinite(name, getattr(model, name))
        g = model.gamma
        if not np.isfinite(g) or not 0.0 < g < 1.0:
            out.append(f"gamma out of (0,1): {g}")
        lo, hi = model.variable_lower, model.variable_upper
        for name, b in (("variable_lower", lo), ("variable_upper", hi)):
            if b is None:
                continue
            if b.ndim != 1 or b.size != n:
                out.append(f"{name}: expected {n} entries, got shape {b.shape}")
            else:
                out += _nonfinite(name, b, allow_inf=True)
        if lo is not None and hi is not None and lo.shape == hi.shape == (n,):
            bad = np.flatnonzero(lo > hi)
            if bad.size:
                out.append(f"variable_lower > variable_upper at indices {bad.tolist()}")
    except Exception as exc:  # diagnostics must never abort
        out.append(f"model: could not be inspected ({exc})")
    return out


@dataclass(frozen=True, eq=False)
class Observation:
    x0: np.ndarray
    timestamp: Optional[str] = None

    def __post_init__(self):
        x = np.array(self.x0, dtype=float).ravel()
        x.setflags(write=False)
        object.__setattr__(self, "x0", x)

    def check_against(self, model: CcLinearProgram) -> None:
        if self.x0.size != model.n:
            raise ValueError(f"observation has {self.x0.size} entries, model has n={model.n}")
        if not np.isfinite(self.x0).all():
            raise ValueError("observation contains non-finite entries")
