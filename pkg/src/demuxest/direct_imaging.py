"""Ideal direct-imaging baseline and demux-vs-direct-imaging crossings.

Direct imaging is photon counting in a fine grid of square top-hat pixels.
Pixel modes are orthonormal, so the same moment machinery applies.  The
pixel integrals of the separable Gaussian PSF are differences of error
functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import erf

from .imaging import OverlapTable
from .modes import source_displacement
from .moments import analyze
from .noise import ensemble_draws, ensemble_sensitivity
from .scene import ConfigurationError, SceneConfig

DEFAULT_PITCH = 1.0 / 8.0
DEFAULT_MARGIN = 5.0
MAX_LOST_MASS = 1e-6

_G1 = (2.0 / math.pi) ** 0.25


@dataclass(frozen=True)
class PixelBasis:
    """Square grid of ``2 n x 2 n`` pixels of side ``pitch`` centred on the axis."""

    pitch: float
    extent: float

    def __post_init__(self):
        if not self.pitch > 0:
            raise ConfigurationError("pixel pitch must be > 0")
        if not self.extent > 0:
            raise ConfigurationError("pixel grid extent must be > 0")

    @classmethod
    def default(cls, d: float, pitch: float = DEFAULT_PITCH, margin: float = DEFAULT_MARGIN) -> "PixelBasis":
        return cls(pitch, margin + 0.5 * d)

    @property
    def n_half(self) -> int:
        return int(math.ceil(self.extent / self.pitch - 1e-9))

    @property
    def edges(self) -> np.ndarray:
        n = self.n_half
        return self.pitch * np.arange(-n, n + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    @property
    def K(self) -> int:
        return (2 * self.n_half) ** 2


def _segment(edges, b):
    """1D pixel integrals of ``g(x - b)`` and their derivatives w.r.t. ``b``."""
    z = edges - b
    prim = _G1 * 0.5 * math.sqrt(math.pi) * erf(z)
    dens = _G1 * np.exp(-z * z)
    return np.diff(prim), -np.diff(dens)


def captured_mass(basis: PixelBasis, b) -> float:
    """Fraction of ``|u0(r - b)|^2`` falling inside the pixel grid."""
    lo, hi = basis.edges[0], basis.edges[-1]
    frac = []
    for c in b:
        frac.append(0.5 * (erf(math.sqrt(2) * (hi - c)) - erf(math.sqrt(2) * (lo - c))))
    return float(frac[0] * frac[1])


def pixel_couplings(config: SceneConfig, basis: PixelBasis | None = None) -> OverlapTable:
    """Coupling table for top-hat pixels (misalignment of ``config`` applied)."""
    basis = basis or PixelBasis.default(config.d)
    edges = basis.edges
    cols = []
    for sign in (+1, -1):
        b = source_displacement(sign, config.d, config.theta, config.r_s)
        if 1.0 - captured_mass(basis, b) > MAX_LOST_MASS:
            raise ConfigurationError(
                f"pixel grid of half-width {edges[-1]:.3g} loses more than {MAX_LOST_MASS:g} of the PSF"
            )
        fx, gx = _segment(edges, b.bx)
        fy, gy = _segment(edges, b.by)
        f = np.outer(fx, fy).ravel() / basis.pitch
        dbx = 0.5 * sign * math.cos(config.theta)
        dby = 0.5 * sign * math.sin(config.theta)
        df = (np.outer(gx, fy) * dbx + np.outer(fx, gy) * dby).ravel() / basis.pitch
        cols.append((f, df))
    (fp, dfp), (fm, dfm) = cols
    return OverlapTable(fp, fm, dfp, dfm)


def direct_imaging_sensitivity(config: SceneConfig, basis: PixelBasis | None = None) -> float:
    """Sensitivity of ideal direct imaging (no misalignment, crosstalk or dark counts)."""
    ideal = config.ideal()
    table = pixel_couplings(ideal, basis)
    return analyze(ideal, table=table).M


def faint_direct_imaging_fisher(d: float, nkappa: float, theta: float = 0.0) -> float:
    """Continuous-detector faint-source Fisher information, by 1D quadrature.

    For a Gaussian PSF the intensity factorizes along the separation axis,
    so only a 1D integral of ``(dp/dd)^2 / p`` remains.
    """
    h = d / 2.0
    c = math.sqrt(2.0 / math.pi)

    def p(x):
        return 0.5 * c * (np.exp(-2 * (x - h) ** 2) + np.exp(-2 * (x + h) ** 2))

    def dp(x):
        return 0.5 * c * (2 * (x - h) * np.exp(-2 * (x - h) ** 2) - 2 * (x + h) * np.exp(-2 * (x + h) ** 2))

    val, _ = integrate.quad(lambda x: dp(x) ** 2 / p(x), -h - 9, h + 9, epsabs=1e-14, epsrel=1e-12, limit=200)
    return 2.0 * nkappa * val


@dataclass
class CrossingResult:
    d_star: float | None
    crossings: list = field(default_factory=list)


def demux_curve(config: SceneConfig, d_grid, threads: int = 1, matrices=None) -> np.ndarray:
    """``M(d)`` for HG demultiplexing; crosstalk-ensemble mean when crosstalk is set."""
    d_grid = np.asarray(d_grid, dtype=float)
    spec = config.crosstalk
    if spec is not None and spec.mean_offdiag_power > 0:
        return ensemble_sensitivity(config, spec, d_grid, threads=threads, matrices=matrices).M_mean
    return np.array([analyze(config.with_d(d)).M for d in d_grid])


def crossing_point(config: SceneConfig, window=(0.01, 2.0), points: int = 80, pitch: float = DEFAULT_PITCH,
                   tol: float = 1e-4) -> CrossingResult:
    """Smallest ``d`` in ``window`` where ideal direct imaging reaches demux.

    Sign changes of ``M_DI - M_demux`` are bracketed on a uniform grid and
    refined by bisection; every crossing found is listed.
    """
    spec = config.crosstalk
    matrices = ensemble_draws(config, spec) if spec is not None and spec.mean_offdiag_power > 0 else None

    def gap(d):
        d = float(d)
        di = direct_imaging_sensitivity(config.with_d(d), PixelBasis.default(d, pitch))
        return di - demux_curve(config, [d], matrices=matrices)[0]

    grid = np.linspace(window[0], window[1], points)
    gaps = np.array([gap(d) for d in grid])
    crossings = []
    if gaps[0] >= 0:
        crossings.append(float(grid[0]))
    for i in range(points - 1):
        if gaps[i] < 0 <= gaps[i + 1]:
            crossings.append(float(optimize.bisect(gap, grid[i], grid[i + 1], xtol=tol)))
    return CrossingResult(crossings[0] if crossings else None, crossings)
