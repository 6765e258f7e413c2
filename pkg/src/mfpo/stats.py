"""Density and sample-comparison helpers shared across modules."""

from __future__ import annotations

import numpy as np

_LOG_2PI = np.log(2.0 * np.pi)


def std_normal_logpdf(x) -> np.ndarray:
    """Log-density of ``N(0, I)`` evaluated on the last axis of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * np.sum(x * x, axis=-1) - 0.5 * x.shape[-1] * _LOG_2PI


def isotropic_normal_logpdf(x, mean, std) -> np.ndarray:
    """Log-density of ``N(mean, std^2 I)`` on the last axis; ``std`` broadcasts over the leading axes."""
    x = np.asarray(x, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    d = x.shape[-1]
    z = (x - mean) / std[..., None]
    return -0.5 * np.sum(z * z, axis=-1) - d * np.log(std) - 0.5 * d * _LOG_2PI


def gaussian_entropy(dim: int, std: float = 1.0) -> float:
    return 0.5 * dim * (1.0 + _LOG_2PI) + dim * np.log(std)


def _kernel_sum(a, b, bandwidth, block=2048) -> float:
    total = 0.0
    bb = np.sum(b * b, 1)
    for i in range(0, len(a), block):
        ai = a[i : i + block]
        d2 = np.sum(ai * ai, 1)[:, None] + bb[None, :] - 2.0 * ai @ b.T
        total += float(np.exp(-np.maximum(d2, 0.0) / (2.0 * bandwidth**2)).sum())
    return total


def mmd_squared(x, y, bandwidth: float = 1.0) -> float:
    """Unbiased squared MMD with a Gaussian kernel ``exp(-|x-y|^2 / (2 h^2))``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    # the diagonal of a Gaussian Gram matrix is exactly 1
    sxx = (_kernel_sum(x, x, bandwidth) - n) / (n * (n - 1))
    syy = (_kernel_sum(y, y, bandwidth) - m) / (m * (m - 1))
    sxy = _kernel_sum(x, y, bandwidth) / (n * m)
    return sxx + syy - 2.0 * sxy


def mmd(x, y, bandwidth: float = 1.0) -> float:
    return float(np.sqrt(max(mmd_squared(x, y, bandwidth), 0.0)))
