"""Weak random crosstalk unitaries and crosstalk-ensemble statistics.

Crosstalk matrices are drawn as ``c = expm(i eps H)`` with ``H`` a Hermitian
matrix of standard-normal entries.  The single knob ``eps`` is calibrated so
the ensemble mean of the off-diagonal power matches the requested value.
Each draw owns an RNG stream derived from ``(seed, draw index)`` so ensembles
are reproducible in any evaluation order.
"""
from __future__ import annotations

import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .imaging import hg_couplings
from .moments import CONDITION_LIMIT, analyze
from .scene import ConfigurationError, CrosstalkSpec, DegenerateScenarioError, SceneConfig

logger = logging.getLogger(__name__)

PILOT_DRAWS = 200
_PILOT_STREAM = 0
_DRAW_STREAM = 1


def measured_offdiag_power(c) -> float:
    """Mean off-diagonal power ``sum_{i != j} |c_ij|^2 / (K (K - 1))``."""
    c = np.asarray(c)
    K = c.shape[0]
    if K < 2:
        return 0.0
    p = np.abs(c) ** 2
    return float((p.sum() - np.trace(p)) / (K * (K - 1)))


def _hermitian(rng: np.random.Generator, K: int) -> np.ndarray:
    a = rng.standard_normal((K, K)) + 1j * rng.standard_normal((K, K))
    return 0.5 * (a + a.conj().T)


def _stream(seed: int, kind: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(kind, index)))


@functools.lru_cache(maxsize=64)
def calibrate_strength(K: int, target: float, seed: int = 0) -> float:
    """Scale ``eps`` giving mean off-diagonal power ``target`` over pilot draws."""
    if target <= 0 or K < 2:
        return 0.0
    if target >= 1.0 / K:
        raise ConfigurationError(f"crosstalk power {target} is infeasible for K={K} (must be < 1/K)")
    pilots = [np.linalg.eigh(_hermitian(_stream(seed, _PILOT_STREAM, i), K)) for i in range(PILOT_DRAWS)]

    def mean_power(eps):
        tot = 0.0
        for w, v in pilots:
            c = (v * np.exp(1j * eps * w)) @ v.conj().T
            tot += measured_offdiag_power(c)
        return tot / PILOT_DRAWS - target

    hi = math.sqrt(target)
    while mean_power(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise ConfigurationError(f"crosstalk power {target} not reachable for K={K}")
    eps = optimize.brentq(mean_power, 0.0, hi, xtol=1e-14, rtol=1e-12)
    logger.debug("calibrated crosstalk strength eps=%.6g for K=%d target=%g", eps, K, target)
    return eps


def sample_crosstalk(K: int, spec: CrosstalkSpec, index: int) -> np.ndarray:
    """Draw number ``index`` of the weak-crosstalk ensemble described by ``spec``."""
    eps = calibrate_strength(K, float(spec.mean_offdiag_power), int(spec.seed))
    if eps == 0.0:
        return np.eye(K, dtype=complex)
    H = _hermitian(_stream(spec.seed, _DRAW_STREAM, index), K)
    return linalg.expm(1j * eps * H)


@dataclass(frozen=True)
class EnsembleStats:
    d_grid: np.ndarray
    M_mean: np.ndarray
    M_std: np.ndarray
    n_samples: np.ndarray
    n_failed: np.ndarray
    M_low_brightness_mean: np.ndarray | None = None


def ensemble_draws(config: SceneConfig, spec: CrosstalkSpec):
    return [sample_crosstalk(config.K, spec, i) for i in range(spec.ensemble_size)]


def batch_reports(config: SceneConfig, matrices):
    """``M``, low-brightness ``M`` and normalized ``m`` for a stack of crosstalk draws.

    Vectorized equivalent of calling :func:`~demuxest.moments.analyze` per
    matrix.  Draws with dead modes are delegated to ``analyze``; degenerate
    draws come back with ``ok = False``.
    """
    C = np.asarray(matrices, dtype=complex)
    n, K = C.shape[0], config.K
    if np.array_equal(C, np.broadcast_to(np.eye(K), C.shape)):
        return _replicate(config, n)
    nk = config.nkappa
    fp, fm, dfp, dfm = (C @ v for v in hg_couplings(config))
    n_sig = nk * (np.abs(fp) ** 2 + np.abs(fm) ** 2)
    n_dc = config.dark.mean_counts(K, nk) if config.dark is not None else np.zeros(K)
    n_prime = n_sig + n_dc
    D = 2.0 * nk * np.real(np.conj(fp) * dfp + np.conj(fm) * dfm)
    cross = fp * np.conj(fm)
    U = nk * np.stack([np.abs(fp) ** 2, np.abs(fm) ** 2, math.sqrt(2) * cross.real, math.sqrt(2) * cross.imag], axis=-1)
    gam = U @ np.swapaxes(U, 1, 2)
    idx = np.arange(K)
    gam[:, idx, idx] += n_sig + n_dc * (2.0 * n_dc + 1.0)

    M = np.zeros(n)
    lb = np.zeros(n)
    m = np.zeros((n, K))
    ok = np.ones(n, dtype=bool)
    full = np.all(n_prime > np.finfo(float).tiny, axis=1)
    if np.any(full):
        g = gam[full]
        scale = 1.0 / np.sqrt(np.einsum("bii->bi", g))
        gs = g * scale[:, :, None] * scale[:, None, :]
        cond = np.linalg.cond(gs)
        good = np.isfinite(cond) & (cond <= CONDITION_LIMIT)
        try:
            y = scale * np.linalg.solve(gs, (scale * D[full])[..., None])[..., 0]
        except np.linalg.LinAlgError:
            full[:] = False
            return _fallback(config, C, M, lb, m, ok)
        Mf = np.einsum("bi,bi->b", D[full], y)
        peak = np.max(np.abs(y), axis=1, keepdims=True)
        mf = np.divide(y, peak, out=np.zeros_like(y), where=peak > 0)
        sel = np.flatnonzero(full)
        M[sel] = np.maximum(Mf, 0.0)
        m[sel] = mf
        ok[sel] = good
        lb[sel] = np.sum(D[full] ** 2 / n_prime[full], axis=1)
    return _fallback(config, C, M, lb, m, ok, np.flatnonzero(~full))


def _fallback(config, C, M, lb, m, ok, which=None):
    for i in range(C.shape[0]) if which is None else which:
        try:
            rep = analyze(config, c=C[i])
        except DegenerateScenarioError:
            ok[i] = False
            continue
        ok[i] = True
        M[i], lb[i], m[i] = rep.M, rep.M_low_brightness, rep.m
    return M, lb, m, ok


def _replicate(config, n):
    try:
        rep = analyze(config)
    except DegenerateScenarioError:
        return np.zeros(n), np.zeros(n), np.zeros((n, config.K)), np.zeros(n, dtype=bool)
    return (np.full(n, rep.M), np.full(n, rep.M_low_brightness),
            np.tile(rep.m, (n, 1)), np.ones(n, dtype=bool))


def _row(config: SceneConfig, matrices, d):
    M, lb, _, ok = batch_reports(config.with_d(d), matrices)
    return M[ok], lb[ok], int(np.sum(~ok))


def _mean(x):
    # offsets from the first draw, so identical draws average exactly
    return float(x[0] + np.mean(x - x[0])) if x.size else np.nan


def _std(x):
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def ensemble_sensitivity(config: SceneConfig, spec: CrosstalkSpec | None = None, d_grid=None,
                         threads: int = 1, matrices=None) -> EnsembleStats:
    """Mean and sample standard deviation of ``M`` over crosstalk draws.

    The same matrices are used at every ``d``.  Draws whose covariance is
    degenerate are skipped and counted in ``n_failed``.
    """
    spec = spec if spec is not None else config.crosstalk
    if spec is None:
        raise ConfigurationError("ensemble_sensitivity needs a CrosstalkSpec")
    d_grid = np.atleast_1d(np.asarray(d_grid if d_grid is not None else [config.d], dtype=float))
    if matrices is None:
        matrices = ensemble_draws(config, spec)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(lambda d: _row(config, matrices, d), d_grid))
    mean = np.array([_mean(r[0]) for r in rows])
    std = np.array([_std(r[0]) for r in rows])
    lb = np.array([_mean(r[1]) for r in rows])
    n = np.array([r[0].size for r in rows])
    failed = np.array([r[2] for r in rows])
    return EnsembleStats(d_grid, mean, std, n, failed, lb)


def ensemble_coefficients(config: SceneConfig, spec: CrosstalkSpec | None = None, matrices=None):
    """Mean and std of the normalized optimal coefficients over crosstalk draws."""
    spec = spec if spec is not None else config.crosstalk
    if matrices is None:
        matrices = ensemble_draws(config, spec)
    _, _, m, ok = batch_reports(config, matrices)
    coeffs = m[ok]
    std = coeffs.std(axis=0, ddof=1) if len(coeffs) > 1 else np.zeros(config.K)
    mean = coeffs[0] + np.mean(coeffs - coeffs[0], axis=0) if len(coeffs) else np.full(config.K, np.nan)
    return mean, std, len(coeffs)
