"""Optimal moment-based estimation of the separation of two thermal point sources."""

__version__ = "0.1.0"

from .imaging import OverlapTable, SourcePhotometry, couplings, overlap_delta, photometry
from .moments import (
    CalibrationCurve,
    MomentData,
    SensitivityReport,
    analyze,
    calibration_curve,
    covariance,
    derivative_vector,
    moment_data,
    qfi_faint,
    sensitivity,
    sensitivity_low_brightness,
)
from .scene import (
    ConfigurationError,
    CrosstalkSpec,
    DarkCountSpec,
    DegenerateScenarioError,
    InvalidCalibrationError,
    SceneConfig,
)

__all__ = [
    "CalibrationCurve",
    "ConfigurationError",
    "CrosstalkSpec",
    "DarkCountSpec",
    "DegenerateScenarioError",
    "InvalidCalibrationError",
    "MomentData",
    "OverlapTable",
    "SceneConfig",
    "SensitivityReport",
    "SourcePhotometry",
    "analyze",
    "calibration_curve",
    "couplings",
    "covariance",
    "derivative_vector",
    "moment_data",
    "overlap_delta",
    "photometry",
    "qfi_faint",
    "sensitivity",
    "sensitivity_low_brightness",
]
