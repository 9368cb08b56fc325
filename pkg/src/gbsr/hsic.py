"""Biased HSIC estimator between two representation batches.

Dependence between the denoised and original user representations is scored
as HSIC(X, Y) = (n - 1)^-2 * trace(Kx H Ky H) with H = I - (1/n) 11^T and
RBF kernels K_ij = exp(-||x_i - x_j||^2 / (2 sigma^2)).  Because H is
idempotent, trace(Kx H Ky H) equals the elementwise sum of the two
double-centered kernels, so H is never materialized here; the test suite
holds this against the definitional trace form.

Kernel rows are L2-normalized first by default, which puts squared distances
on the [0, 4] scale regardless of embedding magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class KernelMatrix:
    """Symmetric RBF Gram matrix with its bandwidth (sigma squared)."""

    values: np.ndarray
    bandwidth: float


def _pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1, keepdims=True)
    d2 = sq + sq.T - 2.0 * (X @ X.T)
    d2 = np.maximum(d2, 0.0)  # tiny negatives from cancellation
    np.fill_diagonal(d2, 0.0)
    return d2


def rbf_kernel(X: np.ndarray, sigma_sq: float) -> KernelMatrix:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError(f"kernel input must be (n >= 2, d), got shape {X.shape}")
    if not (sigma_sq > 0.0):
        raise ConfigError(f"sigma_sq must be > 0, got {sigma_sq}")
    K = np.exp(-_pairwise_sq_dists(X) / (2.0 * sigma_sq))
    np.fill_diagonal(K, 1.0)  # exact unit diagonal regardless of rounding
    return KernelMatrix(K, float(sigma_sq))


def _double_center(K: np.ndarray) -> np.ndarray:
    return K - K.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


def hsic_estimate(kx, ky) -> float:
    Kx = kx.values if isinstance(kx, KernelMatrix) else np.asarray(kx, dtype=np.float64)
    Ky = ky.values if isinstance(ky, KernelMatrix) else np.asarray(ky, dtype=np.float64)
    if Kx.shape != Ky.shape or Kx.ndim != 2 or Kx.shape[0] != Kx.shape[1]:
        raise DataError(
            f"kernel matrices must be square and equal-sized, got {Kx.shape} and {Ky.shape}")
    n = Kx.shape[0]
    if n < 2:
        raise DataError("HSIC needs at least 2 samples")
    return float(np.sum(_double_center(Kx) * _double_center(Ky)) / (n - 1) ** 2)


def normalize_rows(X: np.ndarray) -> np.ndarray:
    # 1e-24 inside the sqrt keeps all-zero rows finite without moving others
    return X / np.sqrt(np.sum(X * X, axis=1, keepdims=True) + 1e-24)


def bottleneck_loss(reps_denoised: np.ndarray, reps_original: np.ndarray,
                    batch_users: np.ndarray, sigma_sq: float,
                    normalize: bool = True) -> float:
    """HSIC between the two representation sets restricted to the batch users.

    batch_users is deduplicated; each distinct user contributes one row per
    side.  Raises when fewer than 2 distinct users remain.
    """
    users = np.unique(np.asarray(batch_users, dtype=np.int64))
    if users.size < 2:
        raise DataError("HSIC batch needs at least 2 distinct users")
    X = np.asarray(reps_denoised, dtype=np.float64)[users]
    Y = np.asarray(reps_original, dtype=np.float64)[users]
    if normalize:
        X = normalize_rows(X)
        Y = normalize_rows(Y)
    return hsic_estimate(rbf_kernel(X, sigma_sq), rbf_kernel(Y, sigma_sq))
