"""Segmentation and evidential losses with their analytic derivatives.

Channel 1 is foreground, channel 0 background.  ``*_grad`` functions
return the derivative of the scalar loss with respect to their first
argument.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError
from .special import digamma, trigamma

DICE_SMOOTH = 1e-6
BCE_CLAMP = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    dice: float
    bce: float
    uq: float
    lambda_uq: float
    total: float

    @classmethod
    def build(cls, dice: float, bce: float, uq: float, lambda_uq: float) -> "LossBreakdown":
        return cls(dice, bce, uq, lambda_uq, combine(dice, bce, uq, lambda_uq))

    def as_row(self) -> dict:
        return {"dice": self.dice, "bce": self.bce, "uq": self.uq, "total": self.total}


def combine(dice: float, bce: float, uq: float, lambda_uq: float) -> float:
    return dice + bce + lambda_uq * uq


def _check(pi, y):
    pi = np.asarray(pi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pi.shape != y.shape:
        raise DomainError(f"shape mismatch: {pi.shape} vs {y.shape}")
    return pi, y


def one_hot(y: np.ndarray, K: int = 2, extents: tuple | None = None) -> np.ndarray:
    """Binary label field ``(1, *ext)`` or ``(*ext)`` to ``(K, *ext)``.

    Pass ``extents`` when a leading axis of length 1 may be spatial.
    """
    y = np.asarray(y)
    if extents is not None:
        y = y.reshape(extents)
    elif y.ndim and y.shape[0] == 1:
        y = y[0]
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be exactly 0 or 1")
    lab = y.astype(np.int64)
    return np.stack([(lab == k).astype(np.float64) for k in range(K)])


def soft_dice_loss(pi_fg, y) -> float:
    pi, y = _check(pi_fg, y)
    inter = np.sum(pi * y)
    return float(1.0 - (2.0 * inter + DICE_SMOOTH) / (pi.sum() + y.sum() + DICE_SMOOTH))


def soft_dice_grad(pi_fg, y) -> np.ndarray:
    pi, y = _check(pi_fg, y)
    inter = np.sum(pi * y)
    den = pi.sum() + y.sum() + DICE_SMOOTH
    num = 2.0 * inter + DICE_SMOOTH
    return -(2.0 * y * den - num) / den**2


def bce_loss(pi_fg, y) -> float:
    pi, y = _check(pi_fg, y)
    c = np.clip(pi, BCE_CLAMP, 1 - BCE_CLAMP)
    return float(np.mean(-(y * np.log(c) + (1 - y) * np.log(1 - c))))


def bce_grad(pi_fg, y) -> np.ndarray:
    pi, y = _check(pi_fg, y)
    inside = (pi >= BCE_CLAMP) & (pi <= 1 - BCE_CLAMP)
    c = np.clip(pi, BCE_CLAMP, 1 - BCE_CLAMP)
    g = (-y / c + (1 - y) / (1 - c)) / pi.size
    return np.where(inside, g, 0.0)


def _evidential_parts(alpha, y_onehot):
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(~(alpha >= 1)) or not np.all(np.isfinite(alpha)):
        raise NumericError("Dirichlet concentration must be finite and >= 1")
    if y_onehot.shape != alpha.shape:
        raise DomainError(f"label shape {y_onehot.shape} does not match alpha {alpha.shape}")
    S = alpha.sum(axis=0)
    adj = y_onehot + (1 - y_onehot) * alpha
    S_adj = adj.sum(axis=0)
    return alpha, S, adj, S_adj


def evidential_loss_map(alpha, y) -> np.ndarray:
    """Per-location evidential loss, shape ``(*ext)``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    yk = one_hot(y, alpha.shape[0], alpha.shape[1:])
    alpha, S, adj, S_adj = _evidential_parts(alpha, yk)
    term1 = np.sum(yk * (digamma(S)[None] - digamma(alpha)), axis=0)
    term2 = np.sum((adj - 1) * (digamma(adj) - digamma(S_adj)[None]), axis=0)
    return term1 + term2


def evidential_loss(alpha, y) -> float:
    return float(np.mean(evidential_loss_map(alpha, y)))


def evidential_grad(alpha, y) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    yk = one_hot(y, alpha.shape[0], alpha.shape[1:])
    alpha, S, adj, S_adj = _evidential_parts(alpha, yk)
    n = S.size
    g1 = trigamma(S)[None] * yk.sum(axis=0, keepdims=True) - yk * trigamma(alpha)
    d_adj = (digamma(adj) - digamma(S_adj)[None]) + (adj - 1) * trigamma(adj) \
        - np.sum(adj - 1, axis=0, keepdims=True) * trigamma(S_adj)[None]
    return (g1 + d_adj * (1 - yk)) / n
