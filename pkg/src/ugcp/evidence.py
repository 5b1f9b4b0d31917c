"""Logits to Dirichlet evidence: concentration, expected probability, uncertainty.

All functions take channel-major arrays ``(K, *extents)`` and reduce over
axis 0.
"""
from __future__ import annotations

import numpy as np

from .errors import DomainError

EPS = 1e-8


def softplus(x: np.ndarray) -> np.ndarray:
    # overflow-safe form; never produces inf for finite input
    x = np.asarray(x)
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def alpha_from_logits(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s)
    if not np.all(np.isfinite(s)):
        raise DomainError("logits contain non-finite values")
    return softplus(s) + 1


def expected_prob(alpha: np.ndarray, eps: float = EPS) -> np.ndarray:
    alpha = np.asarray(alpha)
    return alpha / (alpha.sum(axis=0, keepdims=True) + eps)


def uncertainty(alpha: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Total-evidence uncertainty ``K / (sum_k alpha_k + eps)``; returns ``(1, *extents)``."""
    alpha = np.asarray(alpha)
    k = alpha.shape[0]
    return k / (alpha.sum(axis=0, keepdims=True) + eps)
