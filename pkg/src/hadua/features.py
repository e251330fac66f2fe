"""EEG differential-entropy features and eye-movement statistics.

EEG: each channel is split into frequency bands by masking STFT bins
(Hann window, 1 s, 50 % overlap) and inverting; the differential entropy
of each band-limited series is one feature. Channel-major layout:
``ch0:delta..gamma, ch1:delta..gamma, ...``.

Eye movements: 31 features, in this order

====  =========================================================
0-5   pupil x: mean, std, DE in 4 pupil bands
6-11  pupil y: same
12-15 fixation dispersion x mean, x std, y mean, y std
16-17 fixation duration mean, std
18-21 saccade duration mean, std, saccade amplitude mean, std
22-30 blink freq, fixation freq, max fixation duration,
      total fixation dispersion, max fixation dispersion,
      saccade freq, avg saccade duration, avg saccade amplitude,
      avg saccade latency
====  =========================================================

Band edges and STFT settings are conventions, not measured values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import ConfigError, ContractError, DegenerateError

MIN_DE_SAMPLES = 32


@dataclass(frozen=True)
class BandSpec:
    name: str
    low_hz: float
    high_hz: float


EEG_BANDS = (
    BandSpec("delta", 1.0, 4.0),
    BandSpec("theta", 4.0, 8.0),
    BandSpec("alpha", 8.0, 14.0),
    BandSpec("beta", 14.0, 31.0),
    BandSpec("gamma", 31.0, 50.0),
)

PUPIL_BANDS = (
    BandSpec("p0", 0.0, 0.2),
    BandSpec("p1", 0.2, 0.4),
    BandSpec("p2", 0.4, 0.6),
    BandSpec("p3", 0.6, 1.0),
)

EM_FEATURE_NAMES = (
    *(f"pupil_{ax}_{stat}" for ax in "xy" for stat in ("mean", "std", *(f"de_{b.name}" for b in PUPIL_BANDS))),
    "disp_x_mean", "disp_x_std", "disp_y_mean", "disp_y_std",
    "fix_dur_mean", "fix_dur_std",
    "sac_dur_mean", "sac_dur_std", "sac_amp_mean", "sac_amp_std",
    "blink_freq", "fix_freq", "fix_dur_max", "fix_disp_total", "fix_disp_max",
    "sac_freq", "sac_dur_avg", "sac_amp_avg", "sac_latency_avg",
)


@dataclass
class MultichannelSegment:
    data: np.ndarray  # channels x samples
    fs: float
    min_seconds: float = 2.0

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))
        if self.fs <= 0:
            raise ConfigError("sample rate must be positive")
        if self.data.shape[1] < self.min_seconds * self.fs:
            raise ContractError(
                f"segment has {self.data.shape[1]} samples; need at least {self.min_seconds * self.fs:g}"
            )

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]


@dataclass
class EyeEventStream:
    fixations: np.ndarray  # n x 3: duration ms, dispersion x, dispersion y
    saccades: np.ndarray  # n x 3: duration ms, amplitude deg, latency ms
    blinks: int
    pupil: np.ndarray  # 2 x T: horizontal / vertical diameter
    fs_pupil: float
    duration_s: float

    def __post_init__(self):
        self.fixations = np.asarray(self.fixations, dtype=np.float64).reshape(-1, 3)
        self.saccades = np.asarray(self.saccades, dtype=np.float64).reshape(-1, 3)
        self.pupil = np.atleast_2d(np.asarray(self.pupil, dtype=np.float64))
        if np.any(self.fixations[:, 0] <= 0) or np.any(self.saccades[:, 0] <= 0):
            raise ContractError("event durations must be positive")
        if np.any(self.saccades[:, 1] < 0):
            raise ContractError("saccade amplitudes must be nonnegative")
        if self.pupil.shape[0] != 2 or not np.all(np.isfinite(self.pupil)):
            raise ContractError("pupil must be a finite 2 x T series")
        if self.duration_s <= 0:
            raise ContractError("recording length must be positive")


@dataclass(frozen=True)
class STFTConfig:
    window_s: float = 1.0
    overlap: float = 0.5


def _check_bands(bands, fs: float) -> None:
    for b in bands:
        if not (0.0 <= b.low_hz < b.high_hz <= fs / 2.0):
            raise ConfigError(f"band {b.name} [{b.low_hz}, {b.high_hz}) outside [0, Nyquist={fs / 2:g}]")


def band_decompose(segment: MultichannelSegment, bands=EEG_BANDS, stft: STFTConfig = STFTConfig()) -> np.ndarray:
    """Band-limited time series, shape ``channels x bands x samples``.

    Each band keeps the STFT bins with frequency in ``[low, high)``.
    """
    fs = segment.fs
    _check_bands(bands, fs)
    x = segment.data
    T = x.shape[1]
    nperseg = int(round(stft.window_s * fs))
    if nperseg > T:
        raise ContractError(f"STFT window of {nperseg} samples exceeds segment length {T}")
    noverlap = int(round(nperseg * stft.overlap))
    freqs, _, Z = signal.stft(x, fs=fs, window="hann", nperseg=nperseg, noverlap=noverlap)
    out = np.empty((x.shape[0], len(bands), T))
    for j, b in enumerate(bands):
        mask = (freqs >= b.low_hz) & (freqs < b.high_hz)
        _, rec = signal.istft(Z * mask[None, :, None], fs=fs, window="hann", nperseg=nperseg, noverlap=noverlap)
        out[:, j, :] = rec[:, :T]
    return out


def differential_entropy(samples, method: str = "gaussian") -> float:
    """Differential entropy in nats.

    ``gaussian``: 0.5 * ln(2 pi e var), exact for normal data (the usual EEG
    convention). ``histogram``: plug-in estimate on Freedman-Diaconis bins,
    free of distributional assumptions.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < MIN_DE_SAMPLES:
        raise ContractError(f"differential entropy needs >= {MIN_DE_SAMPLES} samples, got {x.size}")
    var = np.var(x)
    if not var > 0 or np.ptp(x) == 0:
        raise DegenerateError("differential entropy of a constant sequence is undefined")
    if method == "gaussian":
        return 0.5 * math.log(2.0 * math.pi * math.e * var)
    if method == "histogram":
        edges = np.histogram_bin_edges(x, bins="fd")
        counts, edges = np.histogram(x, bins=edges)
        widths = np.diff(edges)
        p = counts / x.size
        nz = p > 0
        return float(-np.sum(p[nz] * np.log(p[nz] / widths[nz])))
    raise ConfigError(f"unknown DE method {method!r}")


def eeg_feature_vector(segment: MultichannelSegment, bands=EEG_BANDS, method: str = "gaussian",
                       stft: STFTConfig = STFTConfig()) -> np.ndarray:
    parts = band_decompose(segment, bands, stft)
    return np.array([differential_entropy(parts[c, j], method)
                     for c in range(parts.shape[0]) for j in range(parts.shape[1])])


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    return float(np.mean(values)), float(np.std(values))


def em_features(stream: EyeEventStream, pupil_bands=PUPIL_BANDS, stft: STFTConfig = STFTConfig(window_s=5.0)) -> np.ndarray:
    """31-dimensional eye-movement feature row (layout in the module docstring)."""
    if len(stream.fixations) == 0 or len(stream.saccades) == 0:
        raise ContractError("insufficient events: need at least one fixation and one saccade")
    pupil_seg = MultichannelSegment(stream.pupil, stream.fs_pupil, min_seconds=stft.window_s)
    bands = band_decompose(pupil_seg, pupil_bands, stft)
    feats: list[float] = []
    for axis in range(2):
        feats.extend(_mean_std(stream.pupil[axis]))
        feats.extend(differential_entropy(bands[axis, j]) for j in range(len(pupil_bands)))

    fix_dur, disp_x, disp_y = stream.fixations.T
    sac_dur, sac_amp, sac_lat = stream.saccades.T
    feats.extend(_mean_std(disp_x))
    feats.extend(_mean_std(disp_y))
    feats.extend(_mean_std(fix_dur))
    feats.extend(_mean_std(sac_dur))
    feats.extend(_mean_std(sac_amp))

    length = stream.duration_s
    disp_total = disp_x + disp_y
    feats.extend([
        stream.blinks / length,
        len(fix_dur) / length,
        float(fix_dur.max()),
        float(disp_total.sum()),
        float(disp_total.max()),
        len(sac_dur) / length,
        float(sac_dur.mean()),
        float(sac_amp.mean()),
        float(sac_lat.mean()),
    ])
    return np.asarray(feats)


def zscore_per_subject(features: np.ndarray) -> np.ndarray:
    """Column-wise standardization with the subject's own statistics (constant columns map to 0)."""
    features = np.asarray(features, dtype=np.float64)
    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (features - mu) / sd
