"""Scenario description shared by every computation."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class ConfigurationError(ValueError):
    """A scenario or one of its noise settings is invalid."""


class DegenerateScenarioError(ArithmeticError):
    """The covariance matrix is numerically singular on the live modes."""

    def __init__(self, message, modes=()):
        super().__init__(message)
        self.modes = tuple(modes)


class InvalidCalibrationError(ValueError):
    """A calibration curve cannot be inverted (not strictly monotone)."""


@dataclass(frozen=True)
class CrosstalkSpec:
    """Random weak crosstalk: target mean off-diagonal power of the unitary."""

    mean_offdiag_power: float
    seed: int = 0
    ensemble_size: int = 500

    def __post_init__(self):
        if not self.mean_offdiag_power >= 0:
            raise ConfigurationError("crosstalk mean_offdiag_power must be >= 0")
        if self.ensemble_size < 1:
            raise ConfigurationError("crosstalk ensemble_size must be >= 1")


@dataclass(frozen=True)
class DarkCountSpec:
    """Thermal dark counts with strength ``sigma_k = N_k^dc / (2 N kappa)``.

    ``reference_nkappa`` pins the brightness used to convert ``sigma`` into
    dark-count means; by default the scene's own ``N * kappa`` is used.
    """

    sigma: float | tuple = 0.0
    reference_nkappa: float | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.sigma, dtype=float) < 0):
            raise ConfigurationError("dark-count sigma must be >= 0")

    def mean_counts(self, K: int, nkappa: float) -> np.ndarray:
        ref = nkappa if self.reference_nkappa is None else self.reference_nkappa
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (K,))
        return 2.0 * ref * sigma


@dataclass(frozen=True)
class SceneConfig:
    """Two equally bright thermal sources seen through a Gaussian PSF.

    Lengths are in units of the PSF width.  ``d_s``/``theta_s`` give the
    demultiplexer misalignment ``r_s``.
    """

    d: float
    theta: float = math.pi / 4
    N: float = 1.5
    kappa: float = 1.0
    Q: int = 2
    d_s: float = 0.0
    theta_s: float = 0.0
    crosstalk: CrosstalkSpec | None = None
    dark: DarkCountSpec | None = None

    def __post_init__(self):
        if not (self.d >= 0 and math.isfinite(self.d)):
            raise ConfigurationError(f"separation d must be finite and >= 0, got {self.d}")
        if not 0 < self.kappa <= 1:
            raise ConfigurationError(f"transmissivity kappa must be in (0, 1], got {self.kappa}")
        if not self.N >= 0:
            raise ConfigurationError(f"mean photon number N must be >= 0, got {self.N}")
        if self.Q < 0:
            raise ConfigurationError(f"HG cutoff Q must be >= 0, got {self.Q}")
        if not self.d_s >= 0:
            raise ConfigurationError("misalignment d_s must be >= 0")

    @property
    def K(self) -> int:
        return (self.Q + 1) ** 2

    @property
    def nkappa(self) -> float:
        return self.N * self.kappa

    @property
    def r_s(self) -> tuple[float, float]:
        return (self.d_s * math.cos(self.theta_s), self.d_s * math.sin(self.theta_s))

    def with_d(self, d: float) -> "SceneConfig":
        return replace(self, d=float(d))

    def ideal(self) -> "SceneConfig":
        """Same sources and basis with every imperfection removed."""
        return replace(self, d_s=0.0, theta_s=0.0, crosstalk=None, dark=None)
