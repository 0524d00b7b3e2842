"""Numerical tolerances shared by every solver call."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-8
    integrality: float = 1e-6
    duality_gap: float = 1e-8
    binding: float = 1e-7
    # relative objective slack used when comparing c'x0 against the forward optimum
    objective: float = 1e-7
    dual_sign: float = 1e-10


DEFAULT_TOLERANCES = Tolerances()
