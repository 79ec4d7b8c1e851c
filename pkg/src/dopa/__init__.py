"""Distributionally optimistic perturbation algorithm (DOPA) for multi-armed bandits."""

from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateModelError,
    DomainError,
    DopaError,
    InputError,
    InvariantViolation,
    RangeError,
    RewardRangeError,
)
from .generators import (
    ComplementExponentialGenerator,
    ExponentialGenerator,
    HybridGenerator,
    InverseSquareGenerator,
    MarginalFamily,
    MarginalGenerator,
    ParetoGenerator,
    corollary3_pair,
    harmonic_combine,
    parse_generator,
)
from .sampler import (
    ArmSamplingRequest,
    ArmSamplingResult,
    bisection_sample,
    dual_root_newton,
    exp3_closed_form,
    generic_convex_baseline,
)

__version__ = "0.1.0"
