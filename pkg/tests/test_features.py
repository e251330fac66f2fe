import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import differential_entropy as scipy_de

from hadua.errors import ConfigError, ContractError, DegenerateError
from hadua.features import (
    EEG_BANDS, EM_FEATURE_NAMES, BandSpec, EyeEventStream, MultichannelSegment, band_decompose,
    differential_entropy, eeg_feature_vector, em_features, zscore_per_subject,
)

FS = 200.0
GAUSS_DE = 0.5 * math.log(2 * math.pi * math.e)


def _sinusoid(freq, seconds=4.0, fs=FS, phase=0.0):
    t = np.arange(int(seconds * fs)) / fs
    return np.sin(2 * np.pi * freq * t + phase)


def _fft_band_energy(x, fs, bands):
    """Oracle: energy of the one-sided FFT spectrum inside each half-open band."""
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.size, 1 / fs)
    return np.array([spec[(freqs >= b.low_hz) & (freqs < b.high_hz)].sum() for b in bands])


def _energy_fractions(x):
    parts = band_decompose(MultichannelSegment(x[None, :], FS))[0]
    energy = (parts ** 2).sum(axis=1)
    return energy / energy.sum()


# band decomposition

def test_alpha_sinusoid_lands_in_alpha():
    frac = _energy_fractions(_sinusoid(10.0))
    assert frac[2] >= 0.95


def test_delta_sinusoid_dominant_band():
    frac = _energy_fractions(_sinusoid(2.0))
    assert int(np.argmax(frac)) == 0


def test_fft_oracle_agrees_on_dominant_band():
    for freq in (2.0, 6.0, 10.0, 20.0, 40.0):
        x = _sinusoid(freq)
        assert int(np.argmax(_fft_band_energy(x, FS, EEG_BANDS))) == int(np.argmax(_energy_fractions(x)))


def test_zero_signal_gives_zero_bands():
    parts = band_decompose(MultichannelSegment(np.zeros((2, 800)), FS))
    assert parts.shape == (2, 5, 800)
    assert np.all(parts == 0)


def test_band_energy_matches_fft_masking_on_mixtures():
    rng = np.random.default_rng(4)
    for _ in range(10):
        # tones at least one 1 Hz STFT bin inside their band, so the Hann main lobe stays in band
        freqs = rng.choice([2.0, 5.0, 6.0, 10.0, 11.0, 20.0, 25.0, 40.0], size=3, replace=False)
        amps = rng.uniform(0.5, 2.0, size=3)
        x = sum(a * _sinusoid(f, seconds=8.0, phase=rng.uniform(0, 2 * np.pi)) for a, f in zip(amps, freqs))
        parts = band_decompose(MultichannelSegment(x[None, :], FS))[0]
        ours = (parts ** 2).sum(axis=1)
        oracle = _fft_band_energy(x, FS, EEG_BANDS) * 2 / x.size  # Parseval for a real series
        total = oracle.sum()
        np.testing.assert_allclose(ours / total, oracle / total, atol=0.02)


def test_band_outside_nyquist():
    seg = MultichannelSegment(np.ones((1, 400)), 100.0)
    with pytest.raises(ConfigError):
        band_decompose(seg, (BandSpec("high", 40.0, 60.0),))


def test_segment_too_short():
    with pytest.raises(ContractError):
        MultichannelSegment(np.ones((1, 100)), FS)


# differential entropy

def test_gaussian_de_of_standard_normal():
    x = np.random.default_rng(0).normal(size=100_000)
    assert abs(differential_entropy(x) - 1.4189) < 0.02
    assert abs(differential_entropy(x, "histogram") - 1.4189) < 0.02


def test_uniform_de_is_zero_histogram():
    x = np.random.default_rng(1).uniform(size=100_000)
    assert abs(differential_entropy(x, "histogram")) < 0.02


def test_scaling_adds_log_factor():
    x = np.random.default_rng(2).normal(size=100_000)
    for method in ("gaussian", "histogram"):
        assert differential_entropy(2 * x, method) - differential_entropy(x, method) == pytest.approx(math.log(2),
                                                                                                   abs=0.02)


def test_histogram_de_agrees_with_scipy():
    rng = np.random.default_rng(3)
    for x in (rng.normal(size=50_000), rng.uniform(-1, 3, size=50_000), rng.laplace(size=50_000)):
        assert differential_entropy(x, "histogram") == pytest.approx(scipy_de(x), abs=0.03)


def test_de_estimator_error_shrinks_with_samples():
    rng = np.random.default_rng(5)
    small = np.mean([abs(differential_entropy(rng.normal(size=1_000), "histogram") - GAUSS_DE) for _ in range(20)])
    large = np.mean([abs(differential_entropy(rng.normal(size=100_000), "histogram") - GAUSS_DE) for _ in range(20)])
    assert large < small


def test_de_errors():
    with pytest.raises(DegenerateError):
        differential_entropy(np.ones(100))
    with pytest.raises(ContractError):
        differential_entropy(np.arange(10.0))
    with pytest.raises(ConfigError):
        differential_entropy(np.arange(100.0), "kde")


# EEG feature vector

def test_feature_vector_lengths():
    rng = np.random.default_rng(6)
    assert eeg_feature_vector(MultichannelSegment(rng.normal(size=(62, 400)), FS)).shape == (310,)
    assert eeg_feature_vector(MultichannelSegment(rng.normal(size=(2, 400)), FS)).shape == (10,)


def test_identical_channels_identical_features():
    x = np.random.default_rng(7).normal(size=400)
    feats = eeg_feature_vector(MultichannelSegment(np.stack([x, x]), FS))
    np.testing.assert_allclose(feats[:5], feats[5:], atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_channel_permutation_permutes_blocks(seed):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(4, 400))
    perm = rng.permutation(4)
    base = eeg_feature_vector(MultichannelSegment(data, FS)).reshape(4, 5)
    permuted = eeg_feature_vector(MultichannelSegment(data[perm], FS)).reshape(4, 5)
    np.testing.assert_allclose(permuted, base[perm], atol=1e-12)


# eye-movement features

def _stream(**kw):
    rng = np.random.default_rng(8)
    base = dict(
        fixations=[[200.0, 1.0, 2.0], [300.0, 3.0, 1.0]],
        saccades=[[40.0, 5.0, 180.0], [60.0, 3.0, 220.0]],
        blinks=6,
        pupil=3.0 + 0.1 * rng.normal(size=(2, 1200)),
        fs_pupil=20.0,
        duration_s=60.0,
    )
    return EyeEventStream(**{**base, **kw})


def test_em_feature_count():
    feats = em_features(_stream())
    assert feats.shape == (31,) == (len(EM_FEATURE_NAMES),)
    assert np.all(np.isfinite(feats))


def test_em_named_values():
    feats = dict(zip(EM_FEATURE_NAMES, em_features(_stream())))
    assert feats["blink_freq"] == pytest.approx(0.1)
    assert feats["fix_dur_mean"] == 250.0 and feats["fix_dur_std"] == 50.0
    assert feats["fix_dur_max"] == 300.0
    assert feats["fix_disp_total"] == 7.0 and feats["fix_disp_max"] == 4.0
    assert feats["sac_amp_mean"] == 4.0 and feats["sac_latency_avg"] == 200.0
    assert feats["fix_freq"] == pytest.approx(2 / 60)


def test_single_fixation_has_zero_spread():
    feats = dict(zip(EM_FEATURE_NAMES, em_features(_stream(fixations=[[200.0, 1.0, 1.0]]))))
    assert feats["fix_dur_mean"] == 200.0 and feats["fix_dur_std"] == 0.0


def test_em_requires_events():
    with pytest.raises(ContractError):
        em_features(_stream(saccades=np.zeros((0, 3))))
    with pytest.raises(ContractError):
        _stream(fixations=[[0.0, 1.0, 1.0]])


# per-subject standardization

def test_zscore_columns(rng):
    x = rng.normal(3.0, 2.0, size=(50, 4))
    x[:, 2] = 7.0
    z = zscore_per_subject(x)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0)[[0, 1, 3]], 1.0, atol=1e-12)
    assert np.all(z[:, 2] == 0)
