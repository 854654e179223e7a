import math

import numpy as np
import pytest

from demuxest import ConfigurationError, CrosstalkSpec, DarkCountSpec, SceneConfig, analyze
from demuxest.noise import (
    batch_reports,
    calibrate_strength,
    ensemble_coefficients,
    ensemble_draws,
    ensemble_sensitivity,
    measured_offdiag_power,
    sample_crosstalk,
)

XT = CrosstalkSpec(0.0017, seed=1, ensemble_size=500)


def test_offdiag_power_simple_matrices():
    assert measured_offdiag_power(np.eye(5)) == 0.0
    assert measured_offdiag_power(np.array([[0, 1], [1, 0]])) == 1.0


def test_zero_power_is_identity():
    c = sample_crosstalk(9, CrosstalkSpec(0.0, seed=4), 17)
    np.testing.assert_array_equal(c, np.eye(9))


@pytest.mark.parametrize("K", [4, 9, 16])
def test_draws_are_unitary(K):
    spec = CrosstalkSpec(0.005, seed=2)
    for i in range(20):
        c = sample_crosstalk(K, spec, i)
        assert np.max(np.abs(c.conj().T @ c - np.eye(K))) < 1e-12


def test_draws_are_deterministic():
    a = sample_crosstalk(9, XT, 42)
    calibrate_strength.cache_clear()
    b = sample_crosstalk(9, XT, 42)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_crosstalk(9, XT, 43))


def test_calibrated_power_on_fresh_draws():
    draws = ensemble_draws(SceneConfig(d=0.5), XT)
    power = np.mean([measured_offdiag_power(c) for c in draws])
    assert power == pytest.approx(0.0017, rel=0.10)


@pytest.mark.parametrize("K,target", [(4, 0.001), (4, 0.01), (9, 0.0017), (9, 0.01)])
def test_weak_crosstalk_is_diagonally_dominant(K, target):
    spec = CrosstalkSpec(target, seed=7)
    worst = min(np.min(np.abs(np.diag(sample_crosstalk(K, spec, i))) ** 2) for i in range(100))
    assert worst > 0.8


def test_infeasible_power_rejected():
    with pytest.raises(ConfigurationError):
        calibrate_strength(4, 0.3, 0)
    with pytest.raises(ConfigurationError):
        CrosstalkSpec(-0.1)
    with pytest.raises(ConfigurationError):
        CrosstalkSpec(0.01, ensemble_size=0)


def test_batch_matches_single_draw_analysis():
    cfg = SceneConfig(d=0.3, Q=2, d_s=0.02, theta_s=math.pi / 4, dark=DarkCountSpec(0.001))
    mats = [sample_crosstalk(9, XT, i) for i in range(12)]
    M, lb, m, ok = batch_reports(cfg, mats)
    assert ok.all()
    for i, c in enumerate(mats):
        rep = analyze(cfg, c=c)
        assert M[i] == pytest.approx(rep.M, rel=1e-9)
        assert lb[i] == pytest.approx(rep.M_low_brightness, rel=1e-9)
        np.testing.assert_allclose(m[i], rep.m, atol=1e-8)


def test_batch_handles_dead_modes():
    # on-axis pair: identity draw leaves dead modes, handled by the fallback
    cfg = SceneConfig(d=0.5, theta=0.0, Q=2)
    mats = [np.eye(9), sample_crosstalk(9, XT, 0)]
    M, _, _, ok = batch_reports(cfg, mats)
    assert ok.all()
    assert M[0] == pytest.approx(analyze(cfg).M, rel=1e-12)


def test_single_ideal_draw_reproduces_ideal():
    cfg = SceneConfig(d=0.4)
    stats = ensemble_sensitivity(cfg, CrosstalkSpec(0.0, ensemble_size=1), [0.1, 0.4, 1.0])
    ideal = [analyze(cfg.with_d(d)).M for d in (0.1, 0.4, 1.0)]
    np.testing.assert_array_equal(stats.M_mean, ideal)
    np.testing.assert_array_equal(stats.M_std, 0.0)
    np.testing.assert_array_equal(stats.n_samples, 1)


def test_zero_power_ensemble_is_exactly_ideal():
    cfg = SceneConfig(d=0.4, dark=DarkCountSpec(0.001))
    stats = ensemble_sensitivity(cfg, CrosstalkSpec(0.0, ensemble_size=50), [0.05, 0.7])
    assert stats.M_mean[0] == analyze(cfg.with_d(0.05)).M
    assert stats.M_mean[1] == analyze(cfg.with_d(0.7)).M
    mean, std, _ = ensemble_coefficients(cfg.with_d(0.05), CrosstalkSpec(0.0, ensemble_size=50))
    np.testing.assert_array_equal(mean, analyze(cfg.with_d(0.05)).m)


@pytest.mark.slow
def test_crosstalk_degrades_small_separations():
    cfg = SceneConfig(d=0.5, crosstalk=XT)
    grid = np.array([1e-3, 0.05, 0.1, 0.2])
    stats = ensemble_sensitivity(cfg, XT, grid)
    ideal = np.array([analyze(cfg.ideal().with_d(d)).M for d in grid])
    assert np.all(stats.M_mean < ideal)
    peak = ensemble_sensitivity(cfg, XT, np.linspace(0.1, 2.0, 40)).M_mean.max()
    assert stats.M_mean[0] < 0.01 * peak
    assert np.all(stats.M_mean >= 0) and np.all(stats.M_std >= 0)
    assert np.all(stats.n_failed == 0)


@pytest.mark.slow
def test_ensemble_size_doubling_is_stable():
    cfg = SceneConfig(d=0.5)
    grid = [0.1, 0.5, 1.2]
    small = ensemble_sensitivity(cfg, CrosstalkSpec(0.0017, 1, 250), grid)
    big = ensemble_sensitivity(cfg, CrosstalkSpec(0.0017, 1, 500), grid)
    se = big.M_std / np.sqrt(big.n_samples)
    assert np.all(np.abs(small.M_mean - big.M_mean) < 3 * se)


def test_threads_do_not_change_results():
    cfg = SceneConfig(d=0.5)
    spec = CrosstalkSpec(0.0017, 1, 40)
    grid = np.linspace(0.02, 1.5, 9)
    a = ensemble_sensitivity(cfg, spec, grid, threads=1)
    b = ensemble_sensitivity(cfg, spec, grid, threads=4)
    assert np.array_equal(a.M_mean, b.M_mean) and np.array_equal(a.M_std, b.M_std)


def test_ensemble_coefficients_shape():
    cfg = SceneConfig(d=0.05)
    mean, std, n = ensemble_coefficients(cfg, CrosstalkSpec(0.0017, 1, 30))
    assert mean.shape == (9,) and std.shape == (9,) and n == 30
    assert np.all(std >= 0)
