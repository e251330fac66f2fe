"""Confidence-driven soft Gaussian weighting and Uniform Alignment of pseudo-labels.

All transforms take and return plain numpy arrays; pseudo-labels are
treated as constants by the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError

UA_CLAMP = 1e-8


@dataclass(frozen=True)
class ConfidenceStats:
    """EMA of the mean and variance of max-probability confidence."""

    mu: float
    sigma2: float
    m: float = 0.9
    t: int = 0

    @classmethod
    def initial(cls, n_classes: int, m: float = 0.9) -> "ConfidenceStats":
        if not 0.0 < m < 1.0:
            raise ContractError(f"momentum must lie in (0, 1), got {m}")
        return cls(mu=1.0 / n_classes, sigma2=1.0, m=m, t=0)


@dataclass(frozen=True)
class UAConfig:
    tau: float = 1.0
    alpha0: float = 0.3
    T0: float = 50.0
    k_decay: float = 10.0
    schedule: str = "sigmoid"  # "sigmoid" | "linear"
    total_epochs: int = 100  # horizon of the linear ramp

    def __post_init__(self):
        if self.tau < 0:
            raise ContractError("tau must be >= 0")
        if not 0.0 <= self.alpha0 <= 1.0:
            raise ContractError("alpha0 must lie in [0, 1]")
        if not self.k_decay > 0:
            raise ContractError("k_decay must be positive")
        if self.schedule not in ("sigmoid", "linear"):
            raise ContractError(f"unknown alpha schedule {self.schedule!r}")


def _max_conf(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    return probs.max(axis=-1)


def gaussian_weights(probs, stats: ConfidenceStats, lambda_max: float = 1.0) -> np.ndarray:
    """Vectorized truncated-Gaussian weight: full weight at or above the running mean.

    With ``sigma2 == 0`` this degrades to a hard threshold at ``mu``.
    """
    if not lambda_max > 0:
        raise ContractError("lambda_max must be positive")
    conf = _max_conf(probs)
    if stats.sigma2 <= 0:
        return np.where(conf >= stats.mu, lambda_max, 0.0)
    w = lambda_max * np.exp(-((conf - stats.mu) ** 2) / (2.0 * stats.sigma2))
    return np.where(conf >= stats.mu, lambda_max, w)


def gaussian_weight(p, stats: ConfidenceStats, lambda_max: float = 1.0) -> float:
    return float(gaussian_weights(np.asarray(p, dtype=np.float64)[None, :], stats, lambda_max)[0])


def hard_threshold_weights(probs, threshold: float = 0.95, lambda_max: float = 1.0) -> np.ndarray:
    return np.where(_max_conf(probs) >= threshold, lambda_max, 0.0)


def update_confidence_stats(stats: ConfidenceStats, batch_probs) -> ConfidenceStats:
    conf = _max_conf(batch_probs)
    b = conf.shape[0]
    if b < 2:
        raise ContractError("confidence update needs a batch of at least 2 predictions")
    mu_b = conf.mean()
    var_b = np.mean((conf - mu_b) ** 2)
    m = stats.m
    return replace(
        stats,
        mu=m * stats.mu + (1.0 - m) * mu_b,
        sigma2=m * stats.sigma2 + (1.0 - m) * (b / (b - 1)) * var_b,
        t=stats.t + 1,
    )


def expected_weight_bounds(stats: ConfidenceStats, n_classes: int, lambda_max: float = 1.0) -> tuple[float, float]:
    if stats.sigma2 > 0:
        tail = math.exp(-((1.0 / n_classes - stats.mu) ** 2) / (2.0 * stats.sigma2))
    else:
        tail = 1.0 if stats.mu == 1.0 / n_classes else 0.0
    return 0.5 * lambda_max * (1.0 + tail), lambda_max


def ua_align(batch_probs, tau: float) -> np.ndarray:
    """Rescale each row by ``(u_c / p_hat_c) ** tau`` and renormalize.

    ``p_hat`` is the batch-mean prediction; entries below 1e-8 are clamped.
    """
    probs = np.asarray(batch_probs, dtype=np.float64)
    if tau < 0:
        raise ContractError("tau must be >= 0")
    if tau == 0:
        return probs.copy()
    n_classes = probs.shape[1]
    p_hat = np.maximum(probs.mean(axis=0), UA_CLAMP)
    scale = (1.0 / n_classes / p_hat) ** tau
    adjusted = probs * scale
    return adjusted / adjusted.sum(axis=1, keepdims=True)


def alpha_schedule(t: float, cfg: UAConfig) -> float:
    if cfg.schedule == "linear":
        return alpha_linear(t, cfg.total_epochs)
    z = (t - cfg.T0) / cfg.k_decay
    # 1 + exp(z) overflows for very late epochs; alpha is 0 to double precision there
    if z > 700:
        return 0.0
    return cfg.alpha0 / (1.0 + math.exp(z))


def alpha_linear(t: float, total_epochs: int) -> float:
    """Alternative schedule: linear ramp from 0 to 1 over ``total_epochs``."""
    return float(min(1.0, max(0.0, t / max(1, total_epochs))))


def ua_interpolate(probs, alpha_t: float, n_classes: int | None = None) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0.0 <= alpha_t <= 1.0:
        raise ContractError("alpha_t must lie in [0, 1]")
    C = probs.shape[-1] if n_classes is None else n_classes
    return alpha_t / C + (1.0 - alpha_t) * probs


def kl_to_uniform(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    C = p.shape[-1]
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] * C)))


@dataclass(frozen=True)
class Refined:
    soft_labels: np.ndarray  # labels handed to the conditional alignment loss
    aligned: np.ndarray
    interpolated: np.ndarray
    weights: np.ndarray


def refine_pseudo_labels(
    probs, stats: ConfidenceStats, alpha_t: float, ua: UAConfig | None, *,
    weighting: str = "gaussian", lambda_max: float = 1.0, hard_threshold: float = 0.95,
    cmmd_labels: str = "interpolated",
) -> Refined:
    """One refinement pass: align, interpolate, and weight by the pre-alignment confidence.

    ``ua=None`` disables Uniform Alignment (labels pass through untouched).
    ``weighting`` is ``"gaussian"``, ``"hard"`` or ``"none"`` (unit weights).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if ua is None:
        aligned = interpolated = probs
    else:
        aligned = ua_align(probs, ua.tau)
        interpolated = ua_interpolate(aligned, alpha_t)
    if weighting == "gaussian":
        weights = gaussian_weights(probs, stats, lambda_max)
    elif weighting == "hard":
        weights = hard_threshold_weights(probs, hard_threshold, lambda_max)
    elif weighting == "none":
        weights = np.full(probs.shape[0], lambda_max)
    else:
        raise ContractError(f"unknown weighting {weighting!r}")
    soft = interpolated if cmmd_labels == "interpolated" else aligned
    return Refined(soft_labels=soft, aligned=aligned, interpolated=interpolated, weights=weights)
