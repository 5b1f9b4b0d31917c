"""Digamma and trigamma for positive real arguments.

Upward recurrence until the argument reaches 6, then the asymptotic
(Bernoulli) series.  Truncation error at x >= 6 is below 2e-13.
"""
from __future__ import annotations

import numpy as np

from .errors import DomainError

_SHIFT = 6.0

# B_{2n} / (2n) for the digamma series, n = 1..7
_PSI_COEF = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)
# B_{2n} for the trigamma series, n = 1..7
_PSI1_COEF = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6)


def _prepare(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError("digamma/trigamma defined here for x > 0 only")
    return x


def digamma(x):
    scalar = np.ndim(x) == 0
    x = _prepare(x).copy()
    acc = np.zeros_like(x)
    small = x < _SHIFT
    while np.any(small):
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < _SHIFT
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for c in reversed(_PSI_COEF):
        series = (series + c) * inv2
    out = acc + np.log(x) - 0.5 / x - series
    return float(out) if scalar else out


def trigamma(x):
    scalar = np.ndim(x) == 0
    x = _prepare(x).copy()
    acc = np.zeros_like(x)
    small = x < _SHIFT
    while np.any(small):
        acc[small] += 1.0 / (x[small] * x[small])
        x[small] += 1.0
        small = x < _SHIFT
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    for c in reversed(_PSI1_COEF):
        series = (series + c) * inv2
    out = acc + inv + 0.5 * inv2 + series * inv
    return float(out) if scalar else out
