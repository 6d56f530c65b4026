"""Finite-key security analysis of loss-tolerant QKD.

The package covers the full pipeline: qubit-state decompositions into
positive and negative parts, random-sampling and martingale-based
concentration bounds, phase-error estimation for the point-to-point and
relay protocols, nominal channel models with seeded samplers, key-length
arithmetic with parameter optimization, and a scenario-driven CLI.
"""

from .channel_sim import (
    ChannelParams,
    ExpectedCounts,
    expected_counts,
    mdi_click_probability,
    pm_outcome_probability,
    sample_counts,
    sample_pm_virtual_counts,
)
from .concentration import (
    azuma_delta,
    kato_bound,
    kato_params,
    phase_errors_azuma,
    phase_errors_kato,
)
from .errors import (
    CollinearStates,
    DegenerateStates,
    DomainError,
    EmptyTagSet,
    InfeasibleParams,
    LtqkdError,
    PlaneMismatch,
    SchemaError,
    SingularBasis,
)
from .keyrate import (
    KeyRateResult,
    ProtocolConfig,
    binary_entropy,
    compute_rate,
    epsilon_budget,
    optimize_rate,
    secret_key_length,
    sweep_rates,
)
from .mdi_estimator import (
    MdiObservedCounts,
    MdiTagging,
    mdi_decompositions,
    mdi_phase_error_bound,
    mdi_signal_states,
    mdi_tagging,
)
from .pm_estimator import (
    PmObservedCounts,
    PmTagging,
    pm_decompositions,
    pm_phase_error_bound,
    pm_signal_states,
    pm_tagging,
)
from .qubit_algebra import (
    BlochVector,
    PosNegDecomposition,
    QubitState,
    decompose,
    mdi_joint_coefficients,
    virtual_states_pm,
)
from .sampling_bounds import g_lower, g_upper, lambert_w

__all__ = [
    "BlochVector",
    "ChannelParams",
    "CollinearStates",
    "DegenerateStates",
    "DomainError",
    "EmptyTagSet",
    "ExpectedCounts",
    "InfeasibleParams",
    "KeyRateResult",
    "LtqkdError",
    "MdiObservedCounts",
    "MdiTagging",
    "PlaneMismatch",
    "PmObservedCounts",
    "PmTagging",
    "PosNegDecomposition",
    "ProtocolConfig",
    "QubitState",
    "SchemaError",
    "SingularBasis",
    "azuma_delta",
    "binary_entropy",
    "compute_rate",
    "decompose",
    "epsilon_budget",
    "expected_counts",
    "g_lower",
    "g_upper",
    "kato_bound",
    "kato_params",
    "lambert_w",
    "mdi_click_probability",
    "mdi_decompositions",
    "mdi_joint_coefficients",
    "mdi_phase_error_bound",
    "mdi_signal_states",
    "mdi_tagging",
    "optimize_rate",
    "phase_errors_azuma",
    "phase_errors_kato",
    "pm_decompositions",
    "pm_outcome_probability",
    "pm_phase_error_bound",
    "pm_signal_states",
    "pm_tagging",
    "sample_counts",
    "sample_pm_virtual_counts",
    "secret_key_length",
    "sweep_rates",
    "virtual_states_pm",
]

__version__ = "0.1.0"
