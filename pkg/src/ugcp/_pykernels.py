"""Pure-numpy propagation kernel; the fallback when the compiled core is absent."""
from __future__ import annotations

import numpy as np

from .evidence import sigmoid, softplus

NAME = "python"


def edge_slices(ndim: int, axis: int, sign: int):
    """Slices (receiver p, sender q) over spatial axes for q = p + sign * e_axis."""
    p = [slice(None)] * ndim
    q = [slice(None)] * ndim
    if sign < 0:
        p[axis], q[axis] = slice(1, None), slice(None, -1)
    else:
        p[axis], q[axis] = slice(None, -1), slice(1, None)
    return tuple(p), tuple(q)


def uncertainty_map(s: np.ndarray, eps: float) -> np.ndarray:
    return s.shape[0] / ((softplus(s) + 1).sum(axis=0) + eps)


def ugcp_step(s, s0, g, theta, kappa, u0, eps, gamma_on=True, phi_on=True,
              source_on=True, clamp=None, num_threads=1):
    """One Jacobi update; reads only ``s`` and writes a fresh array."""
    dtype = s.dtype
    ndim = s.ndim - 1
    u = uncertainty_map(s, eps)
    acc = np.zeros_like(s)
    half = dtype.type(0.5)
    for axis in range(ndim):
        for sign in (-1, 1):
            ps, qs = edge_slices(ndim, axis, sign)
            if gamma_on:
                d = (u[ps] - u[qs]) / kappa
                gin, gout = sigmoid(d), sigmoid(-d)
            else:
                gin = gout = half
            cin = gin * np.tanh(g[ps] - g[qs]) if phi_on else gin
            acc[(slice(None),) + ps] += cin * s[(slice(None),) + qs] - gout * s[(slice(None),) + ps]
    if source_on:
        r = sigmoid((u0 - u) / kappa)
        acc = acc + r * (s0 - s)
    out = s + theta * acc
    if clamp is not None:
        np.clip(out, -clamp, clamp, out=out)
    return out.astype(dtype, copy=False)
