"""DVL calibration toolkit: measurement simulation, norm-ratio baseline,
multi-head CNN error-model regression, and Monte-Carlo evaluation."""

__version__ = "0.1.0"

from .core import (
    CalibrationError,
    ConfigurationError,
    DataError,
    DivergenceError,
    EmKind,
    ErrorModel,
    VelocitySample,
    VelocitySeries,
    apply_error_model,
    correct,
    correct_series,
    subtract_input,
)
from .simulate import (
    DvlConfig,
    GnssConfig,
    TrajectorySpec,
    beam_matrix,
    derive_seed,
    simulate_dvl,
    simulate_gnss,
    simulate_pair,
)
from .baseline import ScaleEstimate, baseline_calibrate, estimate_scale_direct

__all__ = [
    "CalibrationError",
    "ConfigurationError",
    "DataError",
    "DivergenceError",
    "EmKind",
    "ErrorModel",
    "VelocitySample",
    "VelocitySeries",
    "apply_error_model",
    "correct",
    "correct_series",
    "subtract_input",
    "DvlConfig",
    "GnssConfig",
    "TrajectorySpec",
    "beam_matrix",
    "derive_seed",
    "simulate_dvl",
    "simulate_gnss",
    "simulate_pair",
    "ScaleEstimate",
    "baseline_calibrate",
    "estimate_scale_direct",
    "__version__",
]
