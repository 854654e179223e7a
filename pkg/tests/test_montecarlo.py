import math

import numpy as np
import pytest

from demuxest import CalibrationCurve, DarkCountSpec, InvalidCalibrationError, SceneConfig, analyze, moment_data
from demuxest.imaging import couplings
from demuxest.moments import calibration_curve
from demuxest.montecarlo import (
    invert_calibration,
    repetition_rng,
    run_experiment,
    sample_shot,
    sample_shots,
)


def moment_zscores(samples, mean, cov):
    """Largest |z| of the sample mean and sample covariance entries.

    Standard errors use fourth-order sample moments, so no distributional
    assumption is made about the counts.
    """
    n = samples.shape[0]
    centred = samples - samples.mean(axis=0)
    z_mean = (samples.mean(axis=0) - mean) / np.sqrt(np.diag(cov) / n)
    prod = centred[:, :, None] * centred[:, None, :]
    s_cov = prod.mean(axis=0) * n / (n - 1)
    se = np.sqrt(np.maximum(prod.var(axis=0), 1e-300) / n)
    z_cov = (s_cov - cov) / se
    return float(np.max(np.abs(z_mean))), float(np.max(np.abs(z_cov)))


def test_no_light_no_counts():
    cfg = SceneConfig(d=0.5, N=0.0, Q=1)
    rec = sample_shot(cfg, couplings(cfg), np.random.default_rng(0), shot=3)
    assert rec.shot == 3
    np.testing.assert_array_equal(rec.counts, 0)
    assert sample_shots(cfg, couplings(cfg), np.random.default_rng(1), 1000).sum() == 0


def test_counts_are_non_negative_integers():
    cfg = SceneConfig(d=0.5, Q=2, dark=DarkCountSpec(0.05))
    x = sample_shots(cfg, couplings(cfg), np.random.default_rng(2), 5000)
    assert x.dtype.kind == "i" and x.shape == (5000, 9)
    assert x.min() >= 0


@pytest.mark.slow
def test_sampler_moments_q1():
    cfg = SceneConfig(d=0.5, N=1.5, Q=1)
    md = moment_data(cfg)
    x = sample_shots(cfg, couplings(cfg), np.random.default_rng(20), 1_000_000)
    zm, zc = moment_zscores(x, md.N_mean, md.Gamma)
    assert zm < 5 and zc < 5


@pytest.mark.slow
def test_dark_only_sampler():
    # reference brightness sets the dark level when the sources are off
    cfg = SceneConfig(d=0.5, N=0.0, Q=1, dark=DarkCountSpec(0.1, reference_nkappa=1.5))
    md = moment_data(cfg)
    x = sample_shots(cfg, couplings(cfg), np.random.default_rng(21), 1_000_000)
    ndc = 0.3
    var = x.var(axis=0, ddof=1)
    se = np.sqrt(np.var((x - x.mean(axis=0)) ** 2, axis=0) / x.shape[0])
    # the sampler is Bose-Einstein with variance ndc (1 + ndc)
    assert np.all(np.abs(var - ndc * (1 + ndc)) < 5 * se)
    # the moment model uses ndc (2 ndc + 1); the two differ by ndc^2
    zm, _ = moment_zscores(x, md.N_mean, md.Gamma)
    assert zm < 5
    # at the figure dark level ndc^2 is far below the sampling error
    low = SceneConfig(d=0.5, N=0.0, Q=1, dark=DarkCountSpec(0.001, reference_nkappa=1.5))
    x = sample_shots(low, couplings(low), np.random.default_rng(22), 1_000_000)
    zm, zc = moment_zscores(x, moment_data(low).N_mean, moment_data(low).Gamma)
    assert zm < 5 and zc < 5


def _curve(cfg, m, lo=0.0, hi=1.5, n=301):
    return calibration_curve(cfg, m, np.linspace(lo, hi, n))


def test_inversion_fixed_points():
    cfg = SceneConfig(d=0.3, Q=2)
    m = analyze(cfg).m
    curve = _curve(cfg, m)
    for i in (1, 57, 200, 299):
        d, sat = invert_calibration(curve, curve.X_mean[i])
        assert abs(d - curve.d_grid[i]) < 1e-6 and not sat


def test_inversion_midpoints_stay_in_bracket():
    cfg = SceneConfig(d=0.3, Q=2)
    curve = _curve(cfg, analyze(cfg).m, n=1001)
    for i in range(0, 1000, 37):
        d, _ = invert_calibration(curve, 0.5 * (curve.X_mean[i] + curve.X_mean[i + 1]))
        assert curve.d_grid[i] <= d <= curve.d_grid[i + 1]


def test_inversion_clamps_and_flags():
    cfg = SceneConfig(d=0.3, Q=2)
    curve = _curve(cfg, analyze(cfg).m, lo=0.1)
    d, sat = invert_calibration(curve, curve.X_mean[0] - 1.0)
    assert d == curve.d_grid[0] and sat
    d, sat = invert_calibration(curve, curve.X_mean[-1] + 1.0)
    assert d == curve.d_grid[-1] and sat


def test_non_monotone_calibration_rejected():
    curve = CalibrationCurve(np.array([0.0, 0.5, 1.0]), np.array([0.0, 2.0, 1.0]), np.ones(1))
    with pytest.raises(InvalidCalibrationError):
        invert_calibration(curve, 0.5)


def test_monotone_window_contains_center():
    cfg = SceneConfig(d=0.5, N=1.5, Q=2)
    m = analyze(cfg).m
    full = calibration_curve(cfg, m, np.linspace(0, 4, 400))
    win = full.monotone_window(0.5)
    assert win.d_grid[0] <= 0.5 <= win.d_grid[-1]
    assert np.all(np.diff(win.X_mean) > 0)


def test_repetition_streams_are_independent_of_order():
    a = repetition_rng(5, 3).standard_normal(4)
    repetition_rng(5, 0).standard_normal(100)
    b = repetition_rng(5, 3).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, repetition_rng(5, 4).standard_normal(4))


def test_run_is_reproducible_and_thread_independent():
    cfg = SceneConfig(d=0.5, Q=1)
    a = run_experiment(cfg, mu=2000, repetitions=12, seed=9)
    b = run_experiment(cfg, mu=2000, repetitions=12, seed=9, threads=4)
    assert np.array_equal(a.d_tilde, b.d_tilde)
    assert np.array_equal(a.sample_mean_x, b.sample_mean_x)
    assert a.to_dict() == b.to_dict()


def test_run_predicted_variance():
    cfg = SceneConfig(d=0.5, Q=2)
    run = run_experiment(cfg, mu=1000, repetitions=3, seed=0)
    assert run.predicted_var == pytest.approx(1 / (1000 * analyze(cfg).M), rel=1e-9)


def test_run_rejects_bad_sizes():
    with pytest.raises(ValueError):
        run_experiment(SceneConfig(d=0.5), mu=0)


def test_saturation_warning():
    cfg = SceneConfig(d=0.5, N=1.5, Q=1)
    m = analyze(cfg).m
    # a narrow window around the truth forces most estimates to clamp
    curve = calibration_curve(cfg, m, np.linspace(0.499, 0.501, 5))
    run = run_experiment(cfg, m=m, curve=curve, mu=100, repetitions=20, seed=1)
    assert run.saturated > 1 and run.warnings


@pytest.mark.slow
def test_variance_scales_as_inverse_shots():
    cfg = SceneConfig(d=1.0, N=1.5, Q=1)
    m = analyze(cfg).m
    curve = calibration_curve(cfg, m, np.linspace(0, 4, 400)).monotone_window(1.0)
    # one-shot estimates saturate, so compare averages of X instead
    one = run_experiment(cfg, m=m, curve=curve, mu=1, repetitions=20000, seed=3)
    many = run_experiment(cfg, m=m, curve=curve, mu=10_000, repetitions=200, seed=4)
    ratio = np.var(one.sample_mean_x, ddof=1) / np.var(many.sample_mean_x, ddof=1)
    assert 1e4 / 1.3 < ratio < 1e4 * 1.3


@pytest.mark.slow
def test_estimator_unbiased_with_fixed_small_d_observable():
    cfg = SceneConfig(d=0.3, N=1.5, Q=2)
    m = analyze(cfg.with_d(0.1)).m
    run = run_experiment(cfg, m=m, mu=100_000, repetitions=100, seed=12)
    assert abs(run.mean_d - 0.3) < 3 * run.standard_error
    assert run.saturated == 0


@pytest.mark.slow
def test_complex_couplings_cross_term():
    # strong random crosstalk makes the couplings complex; the sampler then
    # separates |<a_k a_l*>|^2 from the unconjugated product of couplings
    from scipy.stats import unitary_group

    cfg = SceneConfig(d=0.8, N=1.5, Q=1)
    c = unitary_group.rvs(4, random_state=8)
    t = couplings(cfg, c)
    md = moment_data(cfg, c=c)
    x = sample_shots(cfg, t, np.random.default_rng(23), 1_000_000)
    zm, zc = moment_zscores(x, md.N_mean, md.Gamma)
    assert zm < 5 and zc < 5
    fp, fm = t.f_plus, t.f_minus
    unconj = 2 * cfg.nkappa**2 * np.real(np.outer(fp, fp.conj()) * np.outer(fm, fm.conj()))
    conj = 2 * cfg.nkappa**2 * np.real(np.outer(fp, fp.conj()) * np.outer(fm.conj(), fm))
    alt = md.Gamma - conj + unconj
    assert moment_zscores(x, md.N_mean, alt)[1] > 5


@pytest.mark.slow
def test_cramer_rao_with_all_noise_sources():
    from demuxest import CrosstalkSpec
    from demuxest.noise import sample_crosstalk

    cfg = SceneConfig(d=0.5, N=1.5, Q=2, d_s=0.02, theta_s=math.pi / 4, dark=DarkCountSpec(0.001))
    c = sample_crosstalk(9, CrosstalkSpec(0.0017, seed=1), 0)
    run = run_experiment(cfg, mu=100_000, repetitions=200, seed=31, c=c)
    assert abs(run.variance_ratio - 1) <= 0.15
    assert abs(run.mean_d - 0.5) < 3 * run.standard_error
