"""Numerical laboratory for quasi-stationary behaviour of absorbing birth-death chains."""

__version__ = "0.1.0"

from .chain import (  # noqa: E402
    CriticalLinearBD,
    CustomTridiagonal,
    KilledBirthDeath,
    KilledMM1,
    RandomWalkZ,
    RateLaw,
    build_generator,
    model_from_json,
    model_to_json,
    validate_generator,
)
from .kernel import conditional_distribution, decompose, survival_probability, transition_matrix  # noqa: E402
from .spectral import classify, decay_parameter, invariant_pair, verify_semigroup_invariance  # noqa: E402
from .asymptotics import conjecture_report, decay_series, estimate_kappa, rank1_factor_test  # noqa: E402
from .montecarlo import estimate_conditional, estimate_survival, sample_path  # noqa: E402
