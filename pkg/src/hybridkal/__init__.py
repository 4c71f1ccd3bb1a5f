"""Uncertainty-aware state estimation for hybrid dynamical systems.

The library propagates Gaussian state uncertainty through contact events
whose guard surfaces and reset parameters are themselves uncertain, builds
Kalman filters on top of that propagation law, and ships a Monte Carlo
oracle plus benchmark harness to validate both.
"""

from .errors import (
    ConfigError,
    GrazingContactError,
    HybridkalError,
    InvalidCovarianceError,
    MultimodalCloudError,
    NumericalDivergenceError,
    SingularCovarianceError,
    SingularInnovationError,
    TransversalityViolationError,
    UndefinedTestError,
    ZenoSuspicionError,
)
from .hybrid import (
    GuardFn,
    HybridSystem,
    HybridTrajectory,
    Mode,
    ModeId,
    ResetFn,
    Transition,
    detect_event,
    eval_field,
    flow,
    simulate_ground_truth,
)
from .saltation import (
    EventContext,
    SaltationBundle,
    extended_saltation,
    make_event_context,
    propagate_event_covariance,
    saltation_bundle,
)

__version__ = "0.1.0"
