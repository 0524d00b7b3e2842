"""Forward Wasserstein DRO chance-constrained LPs and inverse recovery of the radius."""

from .ambiguity import (
    DiscreteDistribution,
    SampleSet,
    WassersteinBall,
    empirical_from_samples,
    epsilon_max,
    wasserstein_discrete,
    wasserstein_to_dirac,
)
from .config import DEFAULT_TOLERANCES, Tolerances
from .model import CcLinearProgram, Observation, validate
from .forward import (
    FdroInstance,
    ForwardSolution,
    KktPoint,
    assemble,
    is_observation_optimal,
    kkt_residuals,
    solve_forward,
)
from .inverse import (
    ConfigError,
    EmptyInput,
    ObservationNotRationalizable,
    RecoveryConfig,
    RecoveryReport,
    diagnose,
    recover,
    recover_bisection,
    recover_data_driven,
)
from .kkt_milp import recover_kkt_milp, recover_relaxed
from .dcopf import PowerSystem, generate_samples, load_builtin, load_system, to_cc_lp

__version__ = "0.1.0"
