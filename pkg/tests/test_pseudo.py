import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import truncnorm

from hadua.errors import ContractError
from hadua.pseudo import (
    ConfidenceStats, UAConfig, alpha_schedule, expected_weight_bounds, gaussian_weight, gaussian_weights,
    hard_threshold_weights, kl_to_uniform, refine_pseudo_labels, ua_align, ua_interpolate, update_confidence_stats,
)
from oracles import random_simplex


def _row_with_max(conf, n_classes):
    rest = (1.0 - conf) / (n_classes - 1)
    return np.array([conf] + [rest] * (n_classes - 1))


# gaussian weighting

def test_weight_above_mean_is_full():
    assert gaussian_weight([0.9, 0.05, 0.05], ConfidenceStats(0.7, 0.01)) == 1.0


def test_weight_one_sigma_below():
    stats = ConfidenceStats(0.7, 0.01)
    for lam in (1.0, 2.5):
        w = gaussian_weight(_row_with_max(0.6, 3), stats, lam)
        assert w == pytest.approx(0.60653 * lam, abs=1e-5)
        assert w == pytest.approx(lam * math.exp(-0.5), abs=1e-12)


def test_weight_derived_example():
    assert gaussian_weight([1 / 3, 1 / 3, 1 / 3], ConfidenceStats(0.6, 0.02)) == pytest.approx(0.16901, abs=1e-5)


def test_weight_zero_variance_is_hard_threshold():
    stats = ConfidenceStats(0.6, 0.0)
    assert gaussian_weight([0.6, 0.4], stats) == 1.0
    assert gaussian_weight([0.59, 0.41], stats) == 0.0


def test_weight_rejects_nonpositive_lambda():
    with pytest.raises(ContractError):
        gaussian_weight([0.5, 0.5], ConfidenceStats(0.5, 0.1), lambda_max=0.0)


def test_hard_threshold_weights():
    probs = np.array([[0.96, 0.04], [0.94, 0.06], [0.95, 0.05]])
    np.testing.assert_array_equal(hard_threshold_weights(probs), [1.0, 0.0, 1.0])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6), st.floats(0.0, 1.0), st.floats(1e-4, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_weight_monotone_and_bounded(n_classes, mu_frac, sigma2, a, b):
    mu = 1 / n_classes + mu_frac * (1 - 1 / n_classes)
    stats = ConfidenceStats(mu, sigma2)
    lo, hi = sorted((a, b))
    c_lo = 1 / n_classes + lo * (1 - 1 / n_classes)
    c_hi = 1 / n_classes + hi * (1 - 1 / n_classes)
    w_lo = gaussian_weight(_row_with_max(c_lo, n_classes), stats)
    w_hi = gaussian_weight(_row_with_max(c_hi, n_classes), stats)
    assert 0.0 <= w_lo <= w_hi <= 1.0


def test_weight_continuous_at_mean():
    stats = ConfidenceStats(0.7, 0.05)
    just_below = gaussian_weight(_row_with_max(0.7 - 1e-9, 3), stats)
    assert just_below == pytest.approx(1.0, abs=1e-12)
    assert gaussian_weight(_row_with_max(0.7, 3), stats) == 1.0


# EMA statistics

def test_initial_stats():
    s = ConfidenceStats.initial(3)
    assert (s.mu, s.sigma2, s.m, s.t) == (pytest.approx(1 / 3), 1.0, 0.9, 0)
    with pytest.raises(ContractError):
        ConfidenceStats.initial(3, m=1.0)


def test_stationary_stream_converges_monotonically():
    stats = ConfidenceStats.initial(3)
    batch = np.tile(_row_with_max(0.8, 3), (16, 1))
    previous = stats.mu
    for _ in range(100):
        stats = update_confidence_stats(stats, batch)
        assert previous <= stats.mu <= 0.8 + 1e-15
        previous = stats.mu
    assert abs(stats.mu - 0.8) < 1e-3
    assert stats.t == 100


def test_one_step_mean_update():
    # batch mean confidence 0.6 with spread, mean update only depends on the mean
    batch = np.array([_row_with_max(0.5, 3), _row_with_max(0.7, 3)])
    s1 = update_confidence_stats(ConfidenceStats.initial(3), batch)
    assert s1.mu == pytest.approx(0.36, abs=1e-12)


def test_identical_confidences_shrink_variance_by_momentum():
    batch = np.tile(_row_with_max(0.6, 3), (8, 1))
    s1 = update_confidence_stats(ConfidenceStats.initial(3), batch)
    assert s1.sigma2 == pytest.approx(0.9, abs=1e-15)


def test_variance_uses_bessel_correction():
    batch = np.array([_row_with_max(0.5, 3), _row_with_max(0.7, 3)])
    s1 = update_confidence_stats(ConfidenceStats(0.5, 0.0, m=0.5), batch)
    # sample variance with ddof=1 of (0.5, 0.7) is 0.02
    assert s1.sigma2 == pytest.approx(0.5 * 0.02, abs=1e-15)


def test_batch_of_one_rejected():
    with pytest.raises(ContractError):
        update_confidence_stats(ConfidenceStats.initial(2), np.array([[0.5, 0.5]]))


def test_confidence_dynamics_stream():
    """Rising mean, falling spread: mu climbs monotonically after burn-in and sigma2 ends lower."""
    rng = np.random.default_rng(3)
    n_classes, steps = 3, 200
    stats = ConfidenceStats.initial(n_classes)
    mus, sigmas = [], []
    for step in range(steps):
        frac = step / (steps - 1)
        centre, spread = 0.4 + 0.55 * frac, 0.15 * (1 - frac) + 0.005
        conf = np.clip(centre + spread * rng.uniform(-1, 1, size=256), 1 / n_classes, 1.0)
        batch = np.array([_row_with_max(c, n_classes) for c in conf])
        stats = update_confidence_stats(stats, batch)
        mus.append(stats.mu)
        sigmas.append(stats.sigma2)
    assert np.all(np.diff(mus[10:]) >= 0)
    assert sigmas[-1] < sigmas[10]
    assert np.all(np.diff(sigmas[-50:]) <= 0)


# expected weight bounds

def test_bounds_at_uniform_mean():
    assert expected_weight_bounds(ConfidenceStats(1 / 3, 0.3), 3, 2.0) == (2.0, 2.0)


def test_bounds_derived_example():
    lo, hi = expected_weight_bounds(ConfidenceStats(0.6, 0.02), 3, 1.0)
    assert lo == pytest.approx(0.58451, abs=1e-5)
    assert hi == 1.0


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8), st.floats(0.0, 1.0), st.floats(0.0, 5.0), st.floats(0.1, 5.0))
def test_bounds_lower_at_least_half(n_classes, mu_frac, sigma2, lam):
    mu = 1 / n_classes + mu_frac * (1 - 1 / n_classes)
    lo, hi = expected_weight_bounds(ConfidenceStats(mu, sigma2), n_classes, lam)
    assert lam / 2 <= lo <= hi == lam


def test_bounds_hold_on_truncated_gaussian_confidences():
    rng = np.random.default_rng(99)
    trials, violations = 200, 0
    for _ in range(trials):
        n_classes = int(rng.integers(2, 6))
        mu = rng.uniform(1 / n_classes, 1.0)
        sigma2 = rng.uniform(1e-3, 0.2)
        sd = math.sqrt(sigma2)
        conf = truncnorm.rvs((1 / n_classes - mu) / sd, (1 - mu) / sd, loc=mu, scale=sd, size=10_000,
                             random_state=rng)
        probs = np.column_stack([conf] + [(1 - conf) / (n_classes - 1)] * (n_classes - 1))
        stats = ConfidenceStats(mu, sigma2)
        mean_w = gaussian_weights(probs, stats).mean()
        lo, hi = expected_weight_bounds(stats, n_classes)
        violations += not lo <= mean_w <= hi
    assert violations < 0.01 * trials


# uniform alignment

def test_ua_tau_zero_is_identity(rng):
    probs = random_simplex(rng, 10, 4)
    out = ua_align(probs, 0.0)
    np.testing.assert_allclose(out, probs, atol=1e-12, rtol=0)


def test_ua_uniform_batch_mean_is_identity():
    probs = np.array([[0.7, 0.2, 0.1], [0.1, 0.7, 0.2], [0.2, 0.1, 0.7]])
    for tau in (0.5, 1.0, 3.0):
        np.testing.assert_allclose(ua_align(probs, tau), probs, atol=1e-12, rtol=0)


def test_ua_hand_example():
    # batch mean (0.75, 0.25), row of interest (0.6, 0.4)
    probs = np.array([[0.6, 0.4], [0.9, 0.1]])
    np.testing.assert_allclose(ua_align(probs, 1.0)[0], [1 / 3, 2 / 3], atol=1e-12)


def test_ua_clamps_empty_class():
    out = ua_align(np.array([[1.0, 0.0], [1.0, 0.0]]), 1.0)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_ua_negative_tau():
    with pytest.raises(ContractError):
        ua_align(np.array([[0.5, 0.5]]), -0.1)


def test_ua_reduces_batch_kl():
    rng = np.random.default_rng(17)
    for _ in range(200):
        n_classes = int(rng.integers(2, 6))
        skew = rng.dirichlet(np.ones(n_classes)) * 4 + 0.1
        probs = rng.dirichlet(skew, size=int(rng.integers(4, 64)))
        tau = float(rng.uniform(1e-3, 2.0))
        before = kl_to_uniform(probs.mean(axis=0))
        after = kl_to_uniform(ua_align(probs, tau).mean(axis=0))
        assert after < before


def test_interpolation_examples():
    p = np.array([0.8, 0.2])
    np.testing.assert_array_equal(ua_interpolate(p, 0.0), p)
    np.testing.assert_allclose(ua_interpolate(p, 1.0), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(ua_interpolate(p, 0.5, 2), [0.65, 0.35], atol=1e-15)
    with pytest.raises(ContractError):
        ua_interpolate(p, 1.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(1, 20), st.floats(0.0, 3.0), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
def test_transforms_preserve_simplex(n_classes, batch, tau, alpha, seed):
    probs = random_simplex(np.random.default_rng(seed), batch, n_classes)
    for out in (ua_align(probs, tau), ua_interpolate(probs, alpha), ua_interpolate(ua_align(probs, tau), alpha)):
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


# alpha schedule

def test_alpha_midpoint_and_limits():
    cfg = UAConfig(alpha0=0.5, T0=50, k_decay=10)
    assert alpha_schedule(50, cfg) == pytest.approx(0.25, abs=1e-15)
    assert abs(alpha_schedule(50 - 100, cfg) - 0.5) < 1e-4
    assert alpha_schedule(60, cfg) == pytest.approx(0.13447, abs=1e-5)
    assert alpha_schedule(1e6, cfg) == 0.0


def test_alpha_is_decreasing():
    cfg = UAConfig(alpha0=0.9, T0=20, k_decay=4)
    values = [alpha_schedule(t, cfg) for t in range(0, 100)]
    assert all(0 < v < 0.9 for v in values[:80])
    assert np.all(np.diff(values) <= 0)


def test_linear_schedule():
    cfg = UAConfig(schedule="linear", total_epochs=10)
    assert [alpha_schedule(t, cfg) for t in (0, 5, 10, 20)] == [0.0, 0.5, 1.0, 1.0]


def test_ua_config_validation():
    for bad in (dict(tau=-1), dict(alpha0=1.5), dict(k_decay=0), dict(schedule="cosine")):
        with pytest.raises(ContractError):
            UAConfig(**bad)


# composed refinement

def test_refine_weights_use_prealignment_confidence(rng):
    probs = random_simplex(rng, 12, 3)
    stats = ConfidenceStats(0.5, 0.02)
    out = refine_pseudo_labels(probs, stats, 0.3, UAConfig(tau=1.5))
    np.testing.assert_array_equal(out.weights, gaussian_weights(probs, stats))
    np.testing.assert_allclose(out.aligned, ua_align(probs, 1.5), atol=0)
    np.testing.assert_allclose(out.interpolated, ua_interpolate(out.aligned, 0.3), atol=0)
    assert out.soft_labels is out.interpolated


def test_refine_without_ua_passes_labels_through(rng):
    probs = random_simplex(rng, 6, 3)
    out = refine_pseudo_labels(probs, ConfidenceStats(0.5, 0.1), 0.9, None, weighting="none", lambda_max=0.5)
    np.testing.assert_array_equal(out.soft_labels, probs)
    np.testing.assert_array_equal(out.weights, np.full(6, 0.5))
    with pytest.raises(ContractError):
        refine_pseudo_labels(probs, ConfidenceStats(0.5, 0.1), 0.0, None, weighting="softmax")
