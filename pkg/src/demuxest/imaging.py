"""Two-source photometry and coupling amplitudes into the measurement modes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .modes import beta_gradient_vector, beta_vector, mode_indices, source_displacement
from .scene import ConfigurationError, SceneConfig

UNITARITY_TOL = 1e-10


def overlap_delta(d):
    """Overlap of the two source images, ``exp(-d^2/2)`` for the Gaussian PSF."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("separation must be non-negative")
    out = np.exp(-0.5 * d * d)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SourcePhotometry:
    delta: float
    kappa_plus: float
    kappa_minus: float
    N_plus: float
    N_minus: float

    @property
    def nkappa(self) -> float:
        return 0.5 * (self.N_plus + self.N_minus)


def photometry(config: SceneConfig) -> SourcePhotometry:
    """Populations of the symmetric/antisymmetric image modes."""
    delta = overlap_delta(config.d)
    kp = config.kappa * (1.0 + delta)
    km = config.kappa * (1.0 - delta)
    return SourcePhotometry(delta, kp, km, config.N * kp, config.N * km)


@dataclass(frozen=True)
class OverlapTable:
    """Coupling of each source image into each measurement mode.

    ``f_plus[k]`` is the amplitude of the source at ``+r0`` in mode ``k``;
    ``df_plus``/``df_minus`` are derivatives with respect to ``d``.
    ``labels`` names the modes (HG orders or pixel indices).
    """

    f_plus: np.ndarray
    f_minus: np.ndarray
    df_plus: np.ndarray
    df_minus: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        for name in ("f_plus", "f_minus", "df_plus", "df_minus"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        shapes = {a.shape for a in (self.f_plus, self.f_minus, self.df_plus, self.df_minus)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 1:
            raise ValueError(f"overlap vectors must share one 1D shape, got {shapes}")
        if not all(np.all(np.isfinite(a)) for a in (self.f_plus, self.f_minus, self.df_plus, self.df_minus)):
            raise ValueError("overlap table contains non-finite entries")

    @property
    def K(self) -> int:
        return self.f_plus.shape[0]

    def captured(self) -> tuple[float, float]:
        """``sum_k |f_+,k|^2`` and ``sum_k |f_-,k|^2``."""
        return float(np.sum(np.abs(self.f_plus) ** 2)), float(np.sum(np.abs(self.f_minus) ** 2))


def check_unitary(c: np.ndarray, tol: float = UNITARITY_TOL) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ConfigurationError(f"crosstalk matrix must be square, got shape {c.shape}")
    defect = np.max(np.abs(c.conj().T @ c - np.eye(c.shape[0])))
    if defect > tol:
        raise ConfigurationError(f"crosstalk matrix is not unitary (max |c^H c - I| = {defect:.3g})")
    return c


def hg_couplings(config: SceneConfig):
    """Ideal HG overlaps ``beta_k(+-r0 - r_s)`` and their ``d``-derivatives."""
    Q, d, th = config.Q, config.d, config.theta
    r_s = config.r_s
    out = []
    for sign in (+1, -1):
        b = source_displacement(sign, d, th, r_s)
        f = beta_vector(Q, b)
        gx, gy = beta_gradient_vector(Q, b)
        df = 0.5 * sign * (gx * math.cos(th) + gy * math.sin(th))
        out.append((f, df))
    (fp, dfp), (fm, dfm) = out
    return fp, fm, dfp, dfm


def couplings(config: SceneConfig, c=None) -> OverlapTable:
    """Coupling table for HG demultiplexing with misalignment and crosstalk.

    ``c`` is the ``K x K`` unitary crosstalk matrix mapping the ideal HG basis
    onto the measured one (``v_k = sum_l c_kl u_l``); ``None`` means identity.
    The misalignment is read from ``config``.
    """
    fp, fm, dfp, dfm = hg_couplings(config)
    labels = tuple(mode_indices(config.Q))
    if c is not None:
        c = check_unitary(c)
        if c.shape[0] != config.K:
            raise ConfigurationError(f"crosstalk matrix is {c.shape[0]}x{c.shape[0]}, basis has K={config.K}")
        fp, fm, dfp, dfm = c @ fp, c @ fm, c @ dfp, c @ dfm
    return OverlapTable(fp, fm, dfp, dfm, labels)
