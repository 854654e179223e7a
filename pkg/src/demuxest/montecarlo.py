"""Photon-counting simulation and the method-of-moments separation estimator.

Thermal light is sampled with the Mandel construction: each source gets an
independent circular complex Gaussian amplitude with ``E|A|^2 = N kappa``,
the mode amplitudes are ``A+ f+_k + A- f-_k`` and the counts are Poisson with
the resulting intensity.  Dark counts are independent Bose-Einstein
(geometric) integers with mean ``N_k^dc``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import interpolate, optimize

from .imaging import OverlapTable, couplings
from .moments import CalibrationCurve, analyze, calibration_curve, moment_data
from .scene import InvalidCalibrationError, SceneConfig

logger = logging.getLogger(__name__)

CHUNK_SHOTS = 200_000
SATURATION_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class CountRecord:
    counts: np.ndarray
    shot: int = 0


def dark_means(config: SceneConfig, K: int) -> np.ndarray:
    if config.dark is None:
        return np.zeros(K)
    return config.dark.mean_counts(K, config.nkappa)


def sample_shots(config: SceneConfig, table: OverlapTable, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent count vectors, shape ``(size, K)``."""
    K = table.K
    scale = math.sqrt(config.nkappa / 2.0)
    a = scale * (rng.standard_normal((size, 2)) + 1j * rng.standard_normal((size, 2)))
    amp = np.outer(a[:, 0], table.f_plus) + np.outer(a[:, 1], table.f_minus)
    counts = rng.poisson(np.abs(amp) ** 2)
    ndc = dark_means(config, K)
    if np.any(ndc > 0):
        p = 1.0 / (1.0 + ndc)
        counts = counts + rng.geometric(np.broadcast_to(p, (size, K))) - 1
    return counts


def sample_shot(config: SceneConfig, table: OverlapTable, rng: np.random.Generator, shot: int = 0) -> CountRecord:
    return CountRecord(sample_shots(config, table, rng, 1)[0], shot)


def invert_calibration(curve: CalibrationCurve, x_bar: float, tol: float = 1e-9):
    """Separation whose expected ``X`` equals ``x_bar``.

    Returns ``(d, saturated)``; values outside the curve's range clamp to the
    nearest end of the grid with ``saturated = True``.
    """
    d, x = curve.d_grid, curve.X_mean
    if np.any(np.diff(x) <= 0):
        raise InvalidCalibrationError("calibration curve is not strictly increasing on its grid")
    if x_bar <= x[0]:
        return float(d[0]), bool(x_bar < x[0])
    if x_bar >= x[-1]:
        return float(d[-1]), bool(x_bar > x[-1])
    spline = interpolate.PchipInterpolator(d, x, extrapolate=False)
    i = int(np.searchsorted(x, x_bar)) - 1
    if x[i + 1] == x_bar:
        return float(d[i + 1]), False
    root = optimize.brentq(lambda t: spline(t) - x_bar, d[i], d[i + 1], xtol=tol)
    return float(root), False


@dataclass
class EstimationRun:
    mu: int
    repetitions: int
    d_true: float
    d_tilde: np.ndarray
    empirical_var: float
    predicted_var: float
    sample_mean_x: np.ndarray
    seed: int
    M: float
    m: np.ndarray
    saturated: int = 0
    warnings: list = field(default_factory=list)

    @property
    def variance_ratio(self) -> float:
        return self.empirical_var / self.predicted_var

    @property
    def mean_d(self) -> float:
        return float(np.mean(self.d_tilde))

    @property
    def standard_error(self) -> float:
        return float(np.std(self.d_tilde, ddof=1) / math.sqrt(self.repetitions))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["d_tilde"] = [float(v) for v in self.d_tilde]
        out["sample_mean_x"] = [float(v) for v in self.sample_mean_x]
        out["m"] = [float(v) for v in self.m]
        out["variance_ratio"] = self.variance_ratio
        out["mean_d"] = self.mean_d
        return out


def repetition_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def sample_mean_x(config, table, m, mu, rng) -> float:
    total = 0.0
    done = 0
    while done < mu:
        n = min(CHUNK_SHOTS, mu - done)
        total += float(np.sum(sample_shots(config, table, rng, n) @ m))
        done += n
    return total / mu


def default_calibration(config: SceneConfig, m, c=None, d_max: float = 4.0, points: int = 400) -> CalibrationCurve:
    return calibration_curve(config, m, np.linspace(0.0, d_max, points), c=c)


def run_experiment(config: SceneConfig, m=None, curve: CalibrationCurve | None = None, mu: int = 100_000,
                   repetitions: int = 200, seed: int = 0, c=None, threads: int = 1) -> EstimationRun:
    """Repeat the moment estimator and compare its variance with ``1/(mu M)``.

    Parameters
    ----------
    config : SceneConfig
        True scenario; ``config.d`` is the separation being estimated.
    m : array_like, optional
        Observable coefficients.  Defaults to the optimum at ``config.d``.
    curve : CalibrationCurve, optional
        Defaults to 400 points on ``[0, 4]`` restricted to the monotone window
        containing ``config.d``.
    c : ndarray, optional
        Crosstalk matrix of the simulated device.
    """
    if mu < 1 or repetitions < 1:
        raise ValueError("mu and repetitions must be >= 1")
    rep = analyze(config, c=c)
    m = rep.m if m is None else np.asarray(m, dtype=float)
    if curve is None:
        curve = default_calibration(config, m, c=c).monotone_window(config.d)
    table = couplings(config, c)
    md_M = _sensitivity_of(config, m, c)

    def one(r):
        xb = sample_mean_x(config, table, m, mu, repetition_rng(seed, r))
        d_hat, sat = invert_calibration(curve, xb)
        return xb, d_hat, sat

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(one, range(repetitions)))
    xbars = np.array([r[0] for r in results])
    d_tilde = np.array([r[1] for r in results])
    n_sat = int(sum(r[2] for r in results))
    warnings = []
    if n_sat > SATURATION_WARN_FRACTION * repetitions:
        warnings.append(f"{n_sat} of {repetitions} estimates saturated at the calibration window edge")
        logger.warning(warnings[-1])
    emp = float(np.var(d_tilde, ddof=1)) if repetitions > 1 else 0.0
    pred = 1.0 / (mu * md_M) if md_M > 0 else math.inf
    return EstimationRun(mu, repetitions, float(config.d), d_tilde, emp, pred, xbars, seed, md_M, m, n_sat, warnings)


def _sensitivity_of(config: SceneConfig, m, c=None) -> float:
    """``(m . D)^2 / (m^T Gamma' m)`` for a fixed observable ``m``."""
    md = moment_data(config, c=c)
    var = float(m @ md.Gamma @ m)
    return float((m @ md.D) ** 2 / var) if var > 0 else 0.0
