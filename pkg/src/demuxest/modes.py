"""Gaussian PSF, Hermite-Gaussian modes and their displaced-mode overlaps.

All lengths are in units of the PSF width ``w``.  The PSF is

    u0(r) = sqrt(2/pi) exp(-|r|^2)

and the HG family is fixed by ``u_00 = u0`` with a positive leading Hermite
coefficient.  In these units a PSF displaced by ``b`` is a coherent state of
the HG ladder, which gives the closed form used by :func:`beta_1d`::

    beta_n(b) = exp(-b^2/2) b^n / sqrt(n!)

:func:`quad_overlap` is an independent adaptive-cubature oracle used to
certify that closed form in the test suite.
"""
from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import cubature

MAX_ORDER = 60

_PSF_1D_NORM = (2.0 / math.pi) ** 0.25


class ModeIndex(NamedTuple):
    """HG mode order ``(n, m)`` along x and y."""

    n: int
    m: int


class Displacement(NamedTuple):
    bx: float
    by: float


def mode_indices(Q: int) -> list[ModeIndex]:
    """All ``(n, m)`` with ``n, m <= Q``, row-major in ``n``; ``K = (Q+1)**2``."""
    if Q < 0:
        raise ValueError(f"HG cutoff must be non-negative, got {Q}")
    _check_order(Q)
    return [ModeIndex(n, m) for n in range(Q + 1) for m in range(Q + 1)]


def _check_order(n: int) -> None:
    if n < 0 or n > MAX_ORDER:
        raise ValueError(f"HG order {n} outside supported range [0, {MAX_ORDER}]")


def psf_eval(x, y):
    """Gaussian PSF amplitude at ``(x, y)`` (broadcasts over arrays)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return math.sqrt(2.0 / math.pi) * np.exp(-(x * x + y * y))


def hg_1d(n: int, x):
    """Orthonormal 1D HG function of order ``n`` via the three-term recurrence."""
    _check_order(n)
    x = np.asarray(x, dtype=float)
    prev = np.zeros_like(x)
    cur = _PSF_1D_NORM * np.exp(-x * x)
    for j in range(n):
        prev, cur = cur, (2.0 * x * cur - math.sqrt(j) * prev) / math.sqrt(j + 1)
    return cur


def hg_eval(k, x, y):
    """HG mode ``k = (n, m)`` evaluated at ``(x, y)``."""
    n, m = k
    return hg_1d(n, x) * hg_1d(m, y)


def beta_1d(n: int, b):
    """Overlap of the 1D HG function of order ``n`` with the PSF displaced by ``b``."""
    _check_order(n)
    b = np.asarray(b, dtype=float)
    out = np.exp(-0.5 * b * b)
    for j in range(1, n + 1):
        out = out * b / math.sqrt(j)
    return out


def beta_1d_prime(n: int, b):
    """Derivative of :func:`beta_1d` with respect to ``b``.

    Uses ``beta_n' = sqrt(n) beta_{n-1} - b beta_n``.
    """
    b = np.asarray(b, dtype=float)
    lower = math.sqrt(n) * beta_1d(n - 1, b) if n > 0 else 0.0
    return lower - b * beta_1d(n, b)


def beta(k, b) -> float:
    """Overlap ``<u_k | u0(. - b)>`` of HG mode ``k`` with the displaced PSF."""
    n, m = k
    bx, by = b
    return float(beta_1d(n, bx) * beta_1d(m, by))


def beta_vector(Q: int, b):
    """``beta`` for every mode of :func:`mode_indices` (same order)."""
    _check_order(Q)
    bx, by = b
    bx_tab = np.array([beta_1d(n, bx) for n in range(Q + 1)])
    by_tab = np.array([beta_1d(m, by) for m in range(Q + 1)])
    return np.outer(bx_tab, by_tab).ravel()


def beta_gradient_vector(Q: int, b):
    """Gradient of :func:`beta_vector` w.r.t. ``(bx, by)``; returns two vectors."""
    bx, by = b
    fx = np.array([beta_1d(n, bx) for n in range(Q + 1)])
    fy = np.array([beta_1d(m, by) for m in range(Q + 1)])
    gx = np.array([beta_1d_prime(n, bx) for n in range(Q + 1)])
    gy = np.array([beta_1d_prime(m, by) for m in range(Q + 1)])
    return np.outer(gx, fy).ravel(), np.outer(fx, gy).ravel()


def source_displacement(sign: int, d: float, theta: float, r_s=(0.0, 0.0)) -> Displacement:
    """Displacement ``sign * r0 - r_s`` with ``r0 = d (cos theta, sin theta) / 2``."""
    return Displacement(
        sign * 0.5 * d * math.cos(theta) - r_s[0],
        sign * 0.5 * d * math.sin(theta) - r_s[1],
    )


def beta_grad_d(k, sign: int, d: float, theta: float, r_s=(0.0, 0.0)) -> float:
    """``d/dd`` of ``beta_k(sign * r0 - r_s)``."""
    n, m = k
    bx, by = source_displacement(sign, d, theta, r_s)
    dbx = 0.5 * sign * math.cos(theta)
    dby = 0.5 * sign * math.sin(theta)
    return float(
        beta_1d_prime(n, bx) * beta_1d(m, by) * dbx
        + beta_1d(n, bx) * beta_1d_prime(m, by) * dby
    )


# ---------------------------------------------------------------------------
# quadrature oracle


def hg_mode(k, shift=(0.0, 0.0)) -> Callable:
    """Mode spec for :func:`quad_overlap`: ``u_k(r - shift)`` as a callable."""
    sx, sy = shift

    def f(x, y):
        return hg_eval(k, x - sx, y - sy)

    f.shift = (float(sx), float(sy))
    return f


def psf_mode(shift=(0.0, 0.0)) -> Callable:
    """Mode spec for the PSF centred at ``shift``."""
    return hg_mode((0, 0), shift)


class OracleFailure(RuntimeError):
    """The quadrature oracle failed to reach its tolerance."""


def quad_overlap(fA: Callable, fB: Callable, atol: float = 1e-12) -> float:
    """Adaptive 2D cubature of ``int fA * fB`` over a disc.

    The disc has radius ``8 + |shift_A| + |shift_B|`` (callables created by
    :func:`hg_mode` carry a ``shift`` attribute; plain callables count as
    centred).  The integrand is mapped to polar coordinates so the region
    is a rectangle for :func:`scipy.integrate.cubature`.
    """
    reach = 0.0
    for f in (fA, fB):
        sx, sy = getattr(f, "shift", (0.0, 0.0))
        reach += math.hypot(sx, sy)
    radius = 8.0 + reach

    def integrand(pts):
        r = pts[:, 0]
        t = pts[:, 1]
        x = r * np.cos(t)
        y = r * np.sin(t)
        return r * np.conj(fA(x, y)) * fB(x, y)

    res = cubature(integrand, [0.0, 0.0], [radius, 2.0 * math.pi], rtol=1e-13, atol=atol)
    if res.status != "converged" or res.error > 1e-10:
        raise OracleFailure(f"cubature did not converge: status={res.status}, error={res.error:.3g}")
    return float(np.real(res.estimate))
