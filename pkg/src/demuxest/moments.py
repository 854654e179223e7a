"""Photon-number moments, optimal linear observable and its sensitivity.

For photon counting in modes ``k`` the moments are

    N_k      = N kappa (|f+_k|^2 + |f-_k|^2)
    Gamma_kl = |<a_k^dag a_l>|^2 + delta_kl N_k
    D_k      = 2 N kappa Re(conj(f+_k) df+_k + conj(f-_k) df-_k)

with ``<a_k^dag a_l> = N kappa (f+_k conj(f+_l) + f-_k conj(f-_l))`` (up to
conjugation).  The thermal part of ``Gamma`` is therefore a sum of four real
rank-one terms, which :class:`MomentData` keeps in factored form
``Gamma = diag(g) + U U^T``.  Dense Cholesky is used for small bases and a
Woodbury solve for large (pixel) bases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .imaging import OverlapTable, SourcePhotometry, couplings, photometry
from .scene import DarkCountSpec, DegenerateScenarioError, SceneConfig

CONDITION_LIMIT = 1e12
DENSE_MAX_K = 1500
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class MomentData:
    """First and second moments of the mode counts for one scenario.

    ``diag`` and ``factor`` encode ``Gamma' = diag(diag) + factor @ factor.T``;
    ``diag`` already contains the shot-noise term ``N_k`` and the dark-count
    term ``N_dc (2 N_dc + 1)``.
    """

    N_mean: np.ndarray
    D: np.ndarray
    diag: np.ndarray
    factor: np.ndarray
    labels: tuple = field(default=(), compare=False)

    @property
    def K(self) -> int:
        return self.N_mean.shape[0]

    @property
    def Gamma(self) -> np.ndarray:
        return np.diag(self.diag) + self.factor @ self.factor.T

    @property
    def live_modes(self) -> np.ndarray:
        return np.flatnonzero(self.N_mean > _TINY)

    def scaled(self, alpha: float) -> "MomentData":
        """Same means and derivatives with ``Gamma'`` multiplied by ``alpha``."""
        return MomentData(self.N_mean, self.D, alpha * self.diag, math.sqrt(alpha) * self.factor, self.labels)


@dataclass(frozen=True)
class SensitivityReport:
    M: float
    m: np.ndarray
    M_low_brightness: float
    qfi_faint: float
    K_used: int
    condition: float
    labels: tuple = field(default=(), compare=False)


def _thermal_factor(table: OverlapTable, nkappa: float) -> np.ndarray:
    fp, fm = table.f_plus, table.f_minus
    cross = fp * np.conj(fm)
    return nkappa * np.column_stack(
        [np.abs(fp) ** 2, np.abs(fm) ** 2, math.sqrt(2.0) * cross.real, math.sqrt(2.0) * cross.imag]
    )


def _dark_means(dark: DarkCountSpec | None, K: int, nkappa: float) -> np.ndarray:
    if dark is None:
        return np.zeros(K)
    return dark.mean_counts(K, nkappa)


def mean_counts(table: OverlapTable, nkappa: float) -> np.ndarray:
    return nkappa * (np.abs(table.f_plus) ** 2 + np.abs(table.f_minus) ** 2)


def derivative_vector(table: OverlapTable, phot: SourcePhotometry) -> np.ndarray:
    """``dN_k/dd``; dark counts do not depend on ``d`` and leave it unchanged."""
    nk = phot.nkappa
    return 2.0 * nk * np.real(np.conj(table.f_plus) * table.df_plus + np.conj(table.f_minus) * table.df_minus)


def _assemble(table: OverlapTable, phot: SourcePhotometry, dark: DarkCountSpec | None) -> MomentData:
    nk = phot.nkappa
    n_sig = mean_counts(table, nk)
    n_dc = _dark_means(dark, table.K, nk)
    diag = n_sig + n_dc * (2.0 * n_dc + 1.0)
    return MomentData(
        N_mean=n_sig + n_dc,
        D=derivative_vector(table, phot),
        diag=diag,
        factor=_thermal_factor(table, nk),
        labels=table.labels,
    )


def covariance(table: OverlapTable, phot: SourcePhotometry, dark: DarkCountSpec | None = None):
    """Dense ``(Gamma', N')`` including the dark-count correction."""
    md = _assemble(table, phot, dark)
    return md.Gamma, md.N_mean


def moment_data(config: SceneConfig, c=None, table: OverlapTable | None = None) -> MomentData:
    """Moments for ``config`` in the HG basis (optionally with crosstalk ``c``).

    Pass ``table`` to use a precomputed coupling table (e.g. pixels).
    """
    if table is None:
        table = couplings(config, c)
    return _assemble(table, photometry(config), config.dark)


def _dense_solve(md: MomentData, live: np.ndarray):
    gam = md.Gamma[np.ix_(live, live)]
    scale = 1.0 / np.sqrt(np.diag(gam))
    gs = gam * np.outer(scale, scale)
    cond = np.linalg.cond(gs)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        w, v = np.linalg.eigh(gs)
        worst = live[np.argsort(-np.abs(v[:, 0]))[:3]]
        names = [md.labels[i] if md.labels else int(i) for i in worst]
        raise DegenerateScenarioError(
            f"covariance is numerically singular (scaled condition {cond:.3g}); "
            f"null direction dominated by modes {names}",
            modes=worst,
        )
    cho = linalg.cho_factor(gs, lower=True)
    y = scale * linalg.cho_solve(cho, scale * md.D[live])
    return y, cond


def _woodbury_solve(md: MomentData, live: np.ndarray):
    g = md.diag[live]
    U = md.factor[live]
    D = md.D[live]
    ginv_D = D / g
    ginv_U = U / g[:, None]
    cap = np.eye(U.shape[1]) + U.T @ ginv_U
    cho = linalg.cho_factor(cap, lower=True)
    y = ginv_D - ginv_U @ linalg.cho_solve(cho, U.T @ ginv_D)
    return y, float(np.linalg.cond(cap))


def sensitivity(md: MomentData, method: str = "auto"):
    """Optimized sensitivity ``M = D^T Gamma'^-1 D`` and coefficients ``m``.

    Only live modes (``N'_k > 0``) enter the solve; the others get ``m_k = 0``.
    ``m`` is normalized to ``max |m_k| = 1`` with ``m . D > 0``.

    Parameters
    ----------
    md : MomentData
    method : {"auto", "dense", "woodbury"}
        ``auto`` picks dense Cholesky for ``K <= DENSE_MAX_K``.

    Returns
    -------
    M : float
    m : ndarray
    condition : float
        Condition number of the diagonally scaled system that was solved.

    Raises
    ------
    DegenerateScenarioError
        If the scaled covariance has condition number above ``1e12``.
    """
    live = md.live_modes
    m = np.zeros(md.K)
    if live.size == 0 or not np.any(md.D[live]):
        return 0.0, m, 1.0
    if method == "auto":
        method = "dense" if md.K <= DENSE_MAX_K else "woodbury"
    if method == "dense":
        y, cond = _dense_solve(md, live)
    elif method == "woodbury":
        y, cond = _woodbury_solve(md, live)
    else:
        raise ValueError(f"unknown method {method!r}")
    M = float(md.D[live] @ y)
    m[live] = y / np.max(np.abs(y))
    return max(M, 0.0), m, cond


def sensitivity_low_brightness(md: MomentData) -> float:
    """Faint-source form ``sum_k (dN_k/dd)^2 / N'_k`` over live modes."""
    live = md.live_modes
    return float(np.sum(md.D[live] ** 2 / md.N_mean[live]))


def qfi_faint(N: float, kappa: float, w: float = 1.0) -> float:
    """Faint-source quantum Fisher information ``2 N kappa / w^2``."""
    return 2.0 * N * kappa / w**2


def analyze(config: SceneConfig, c=None, table: OverlapTable | None = None, method: str = "auto") -> SensitivityReport:
    md = moment_data(config, c=c, table=table)
    M, m, cond = sensitivity(md, method=method)
    return SensitivityReport(
        M=M,
        m=m,
        M_low_brightness=sensitivity_low_brightness(md),
        qfi_faint=qfi_faint(config.N, config.kappa),
        K_used=int(md.live_modes.size),
        condition=cond,
        labels=md.labels,
    )


@dataclass(frozen=True)
class CalibrationCurve:
    """Expected value of ``X = m_ref . N`` as a function of ``d``."""

    d_grid: np.ndarray
    X_mean: np.ndarray
    m_ref: np.ndarray
    config: SceneConfig | None = None

    def __post_init__(self):
        d = np.asarray(self.d_grid, dtype=float)
        x = np.asarray(self.X_mean, dtype=float)
        if d.ndim != 1 or d.shape != x.shape or d.size < 2:
            raise ValueError("calibration grid and values must be matching 1D arrays with >= 2 points")
        if np.any(np.diff(d) <= 0):
            raise ValueError("calibration d_grid must be strictly increasing")
        if not np.all(np.isfinite(x)):
            raise ValueError("calibration values must be finite")
        object.__setattr__(self, "d_grid", d)
        object.__setattr__(self, "X_mean", x)

    def window(self, d_lo: float, d_hi: float) -> "CalibrationCurve":
        keep = (self.d_grid >= d_lo) & (self.d_grid <= d_hi)
        return CalibrationCurve(self.d_grid[keep], self.X_mean[keep], self.m_ref, self.config)

    def monotone_window(self, d_center: float) -> "CalibrationCurve":
        """Largest sub-curve around ``d_center`` on which ``X`` strictly increases."""
        inc = np.diff(self.X_mean) > 0
        i = int(np.clip(np.searchsorted(self.d_grid, d_center) - 1, 0, inc.size - 1))
        if not inc[i]:
            return self.window(self.d_grid[i], self.d_grid[i + 1])
        lo = i
        while lo > 0 and inc[lo - 1]:
            lo -= 1
        hi = i
        while hi < inc.size - 1 and inc[hi + 1]:
            hi += 1
        return self.window(self.d_grid[lo], self.d_grid[hi + 1])


def calibration_curve(config: SceneConfig, m_ref, d_grid, c=None, table_fn=None) -> CalibrationCurve:
    """``X(d) = sum_k m_ref_k N'_k(d)`` with every configured noise active.

    ``table_fn(config)`` overrides the HG coupling table (e.g. for pixels).
    """
    m_ref = np.asarray(m_ref, dtype=float)
    d_grid = np.asarray(d_grid, dtype=float)
    xs = np.empty(d_grid.size)
    for i, d in enumerate(d_grid):
        cfg = config.with_d(d)
        table = couplings(cfg, c) if table_fn is None else table_fn(cfg)
        nk = cfg.nkappa
        n_prime = mean_counts(table, nk) + _dark_means(cfg.dark, table.K, nk)
        xs[i] = m_ref @ n_prime
    return CalibrationCurve(d_grid, xs, m_ref, config)
