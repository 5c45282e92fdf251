"""Dynamical freezing of periodically driven dipolar spin ensembles.

Exact-diagonalization and discrete-truncated-Wigner solvers for Floquet
spin dynamics, the closed-form freezing analytics, ac-field sensing models
and a reproducible experiment harness.
"""

__version__ = "0.1.0"

from .ensemble import (  # noqa: E402
    MAGIC_ANGLE,
    ProductState,
    SpinEnsemble,
    coupling_matrix,
    dipolar_coupling,
    initial_state,
    sample_ensemble,
)
from .errors import (  # noqa: E402
    CapacityError,
    ConfigError,
    ConstructionError,
    DegenerateSpectrumWarning,
    FitError,
    NumericalError,
    PreconditionError,
)
from .protocol import (  # noqa: E402
    DriveSegment,
    FloquetSchedule,
    build_schedule,
    effective_hamiltonian,
    freezing_points,
    kick_operator,
    micromotion_prediction,
    symmetry_breaking_scale,
)
from .series import MagnetizationSeries  # noqa: E402
from .units import GAMMA_NV, J0_NV, angular_to_mhz, mhz_to_angular  # noqa: E402

__all__ = [
    "CapacityError", "ConfigError", "ConstructionError", "DegenerateSpectrumWarning", "DriveSegment",
    "FitError", "FloquetSchedule", "GAMMA_NV", "J0_NV", "MAGIC_ANGLE", "MagnetizationSeries",
    "NumericalError", "PreconditionError", "ProductState", "SpinEnsemble", "angular_to_mhz",
    "build_schedule", "coupling_matrix", "dipolar_coupling", "effective_hamiltonian", "freezing_points",
    "initial_state", "kick_operator", "mhz_to_angular", "micromotion_prediction", "sample_ensemble",
    "symmetry_breaking_scale",
]
