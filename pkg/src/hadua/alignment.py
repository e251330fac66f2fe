"""Gaussian-kernel marginal MMD and class-conditional (soft, weighted) CMMD.

The kernel is ``k(x, y) = exp(-||x - y||^2 / sigma)``; note there is no
factor 2 in the denominator, so ``sigma`` is in squared-distance units.
Both discrepancies use the biased V-statistic (all pairs, diagonal
included).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DegenerateError, ShapeError

CLASS_MASS_EPS = 1e-6


@dataclass(frozen=True)
class KernelConfig:
    sigma: float = 1.0
    bandwidth_mode: str = "median"  # "fixed" | "median"

    def __post_init__(self):
        if self.bandwidth_mode not in ("fixed", "median"):
            raise ContractError(f"unknown bandwidth_mode {self.bandwidth_mode!r}")
        if not self.sigma > 0:
            raise ContractError("kernel sigma must be positive")


@dataclass
class WeightedSoftAssignment:
    """Soft target labels ``probs`` (n_t x C) with per-sample confidence ``weights``."""

    probs: np.ndarray
    weights: np.ndarray
    lambda_max: float = 1.0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.probs.ndim != 2 or self.weights.shape != (self.probs.shape[0],):
            raise ShapeError("assignment: probs must be n x C and weights length n")
        if np.any(self.probs < 0) or not np.allclose(self.probs.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ContractError("assignment: probability rows must be nonnegative and sum to 1")
        if np.any(self.weights < 0) or np.any(self.weights > self.lambda_max + 1e-12):
            raise ContractError("assignment: weights must lie in [0, lambda_max]")

    @classmethod
    def unit(cls, probs) -> "WeightedSoftAssignment":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probs, np.ones(probs.shape[0]))


def gaussian_kernel(x, y, cfg: KernelConfig) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"kernel: dimension mismatch {x.shape} vs {y.shape}")
    return float(np.exp(-np.sum((x - y) ** 2) / cfg.sigma))


def median_heuristic(X, max_pairs: int = 1024, seed: int = 0) -> float:
    """Median pairwise squared distance, over at most ``max_pairs`` seeded pairs."""
    X = np.asarray(X.data if isinstance(X, Tensor) else X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ContractError("median_heuristic needs at least 2 rows")
    n_pairs = n * (n - 1) // 2
    if n_pairs <= max_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = (i + rng.integers(1, n, size=max_pairs)) % n
    d2 = np.sum((X[i] - X[j]) ** 2, axis=1)
    sigma = float(np.median(d2))
    if not sigma > 0:
        if np.all(X == X[0]):
            raise DegenerateError("median_heuristic: all rows identical")
        sigma = float(np.mean(d2[d2 > 0])) if np.any(d2 > 0) else float(np.mean(np.var(X, axis=0)) * 2)
        if not sigma > 0:
            raise DegenerateError("median_heuristic: zero pairwise spread")
    return sigma


def resolve_sigma(cfg: KernelConfig, *feature_sets) -> float:
    if cfg.bandwidth_mode == "fixed":
        return cfg.sigma
    stacked = np.concatenate([np.asarray(f.data if isinstance(f, Tensor) else f) for f in feature_sets])
    return median_heuristic(stacked)


def sq_distances(X: Tensor, Y: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances ``n x m`` as a differentiable expression."""
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"feature dims differ: {X.shape[1]} vs {Y.shape[1]}")
    n, m = X.shape[0], Y.shape[0]
    xx = ad.sum_(X * X, axis=1, keepdims=True)  # n x 1
    yy = ad.sum_(Y * Y, axis=1, keepdims=True)  # m x 1
    d2 = ad.matmul(xx, ad.ones((1, m))) + ad.matmul(ad.ones((n, 1)), ad.transpose(yy))
    d2 = d2 - ad.matmul(X, ad.transpose(Y)) * 2.0
    # roundoff can leave tiny negatives where points coincide
    return ad.relu(d2)


def kernel_matrix(X: Tensor, Y: Tensor, sigma: float) -> Tensor:
    return ad.exp(sq_distances(X, Y) * (-1.0 / sigma))


def _weighted_sum(K: Tensor, a: np.ndarray, b: np.ndarray) -> Tensor:
    # a^T K b with constant weight vectors
    return ad.sum_(K * ad.Tensor(np.outer(a, b)))


def _check_sets(Xs: Tensor, Xt: Tensor) -> None:
    if Xs.ndim != 2 or Xt.ndim != 2:
        raise ShapeError("feature sets must be 2-D matrices")
    if Xs.shape[0] < 1 or Xt.shape[0] < 1:
        raise ContractError("MMD needs at least one sample per domain")
    if Xs.shape[1] != Xt.shape[1]:
        raise ShapeError(f"feature dims differ: {Xs.shape[1]} vs {Xt.shape[1]}")


def mmd2(Xs, Xt, cfg: KernelConfig, sigma: float | None = None) -> Tensor:
    """Biased squared MMD between two samples; returns a scalar Tensor."""
    Xs, Xt = ad.as_tensor(Xs), ad.as_tensor(Xt)
    _check_sets(Xs, Xt)
    if sigma is None:
        sigma = resolve_sigma(cfg, Xs, Xt)
    k_ss = ad.mean(kernel_matrix(Xs, Xs, sigma))
    k_tt = ad.mean(kernel_matrix(Xt, Xt, sigma))
    k_st = ad.mean(kernel_matrix(Xs, Xt, sigma))
    return k_ss + k_tt - k_st * 2.0


def cmmd2_terms(
    Xs, ys, Xt, assignment: WeightedSoftAssignment, cfg: KernelConfig, n_classes: int,
    sigma: float | None = None, require_all_classes: bool = True,
) -> dict[int, Tensor]:
    """Per-class squared RKHS distances between source and soft-weighted target class means.

    Target sample ``j`` enters class ``c`` with mass ``weights[j] * probs[j, c]``
    (normalized over ``j``). Classes whose total target mass is below
    ``CLASS_MASS_EPS`` are omitted.
    """
    Xs, Xt = ad.as_tensor(Xs), ad.as_tensor(Xt)
    _check_sets(Xs, Xt)
    ys = np.asarray(ys)
    if ys.shape != (Xs.shape[0],):
        raise ShapeError("source labels must have one entry per source row")
    if assignment.probs.shape != (Xt.shape[0], n_classes):
        raise ShapeError(f"assignment probs must be {(Xt.shape[0], n_classes)}, got {assignment.probs.shape}")
    present = set(np.unique(ys).tolist())
    missing = [c for c in range(n_classes) if c not in present]
    if missing and require_all_classes:
        raise ContractError(f"classes {missing} missing from source labels")
    if sigma is None:
        sigma = resolve_sigma(cfg, Xs, Xt)

    mass = assignment.weights[:, None] * assignment.probs  # n_t x C
    K_ss = kernel_matrix(Xs, Xs, sigma)
    K_tt = kernel_matrix(Xt, Xt, sigma)
    K_st = kernel_matrix(Xs, Xt, sigma)
    terms: dict[int, Tensor] = {}
    for c in range(n_classes):
        if c not in present:
            continue
        total = mass[:, c].sum()
        if total < CLASS_MASS_EPS:
            continue
        a = (ys == c).astype(np.float64)
        a /= a.sum()
        b = mass[:, c] / total
        terms[c] = _weighted_sum(K_ss, a, a) + _weighted_sum(K_tt, b, b) - _weighted_sum(K_st, a, b) * 2.0
    return terms


def cmmd2(
    Xs, ys, Xt, assignment: WeightedSoftAssignment, cfg: KernelConfig, n_classes: int,
    sigma: float | None = None, require_all_classes: bool = True,
) -> Tensor:
    """Average of :func:`cmmd2_terms` over contributing classes."""
    terms = cmmd2_terms(Xs, ys, Xt, assignment, cfg, n_classes, sigma, require_all_classes)
    if not terms:
        raise DegenerateError("cmmd2: every class was skipped (no target mass)")
    vals = list(terms.values())
    total = vals[0]
    for v in vals[1:]:
        total = total + v
    return total * (1.0 / len(vals))
