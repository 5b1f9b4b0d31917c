"""Uncertainty-gated flux-balance refinement of a logit field.

Per-location functions (``directional_gate``, ``edge_modulation``,
``flux_balance``, ``source_term``) spell out the update term by term and are
used as a readable reference.  ``ugcp_step`` and ``refine`` run the
vectorized kernel chosen by :mod:`ugcp.backend`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import backend as _backend
from .errors import DomainError, NumericError
from .evidence import alpha_from_logits, expected_prob, uncertainty
from .field import GridShape, neighbors
from .heads import UgcpConfig, UgcpParams, project_features, project_logits

CLAMP32 = 60.0


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def directional_gate(u_p: float, u_q: float, tau: float, eps: float) -> float:
    """Gate on the flux from q into p; large when p is the more uncertain end."""
    if not tau > 0:
        raise DomainError("tau must be positive")
    return _sigmoid((u_p - u_q) / (tau + eps))


def edge_modulation(f_p, f_q, w) -> float:
    d = np.asarray(f_p, dtype=np.float64) - np.asarray(f_q, dtype=np.float64)
    return math.tanh(float(np.dot(w, d)))


@dataclass
class StepState:
    s: np.ndarray
    s0: np.ndarray
    f: np.ndarray
    u: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, s0: np.ndarray, f: np.ndarray, eps: float) -> "StepState":
        s0 = np.asarray(s0)
        return cls(s=s0, s0=s0, f=np.asarray(f), u=uncertainty(alpha_from_logits(s0), eps), t=0)


def _gates(state: StepState, p, q, params: UgcpParams, cfg: UgcpConfig):
    if cfg.enable_gamma:
        g_in = directional_gate(state.u[(0, *p)], state.u[(0, *q)], cfg.tau, cfg.eps)
        g_out = directional_gate(state.u[(0, *q)], state.u[(0, *p)], cfg.tau, cfg.eps)
    else:
        g_in = g_out = 0.5
    phi = edge_modulation(state.f[(slice(None), *p)], state.f[(slice(None), *q)], params.w) if cfg.enable_phi else 1.0
    return g_in, g_out, phi


def flux_balance(state: StepState, params: UgcpParams, cfg: UgcpConfig, p: Sequence[int]) -> np.ndarray:
    """Incoming minus outgoing gated flux at ``p`` (one value per logit channel)."""
    p = tuple(p)
    shape = GridShape(state.s.shape[1:])
    s_p = state.s[(slice(None), *p)]
    total = np.zeros(state.s.shape[0])
    for q in neighbors(p, shape):
        g_in, g_out, phi = _gates(state, p, q, params, cfg)
        total = total + (g_in * phi * state.s[(slice(None), *q)] - g_out * s_p)
    return total


def source_term(state: StepState, cfg: UgcpConfig, p: Sequence[int]) -> np.ndarray:
    p = tuple(p)
    if not cfg.enable_source:
        return np.zeros(state.s.shape[0])
    r = _sigmoid((cfg.u0 - state.u[(0, *p)]) / (cfg.tau + cfg.eps))
    return r * (state.s0[(slice(None), *p)] - state.s[(slice(None), *p)])


def feature_scalar(f: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``w . f_p`` at every location; edge modulation only needs its differences."""
    return np.tensordot(w.astype(f.dtype, copy=False), f, axes=([0], [0]))


def _check_finite(s: np.ndarray, t: int):
    if not np.all(np.isfinite(s)):
        loc = tuple(int(i) for i in np.argwhere(~np.isfinite(s))[0])
        raise NumericError(f"non-finite logit after step {t} at (channel, *location) = {loc}")


def step_arrays(s, s0, g, cfg: UgcpConfig, kernel=None, num_threads: int | None = None) -> np.ndarray:
    """Raw array form of one update: returns the next logit field."""
    kernel = kernel or _backend.get()
    clamp = CLAMP32 if s.dtype == np.float32 else None
    return kernel.ugcp_step(
        s, s0, g, cfg.theta, cfg.tau + cfg.eps, cfg.u0, cfg.eps,
        cfg.enable_gamma, cfg.enable_phi, cfg.enable_source, clamp,
        num_threads=num_threads or _backend.num_threads(),
    )


def ugcp_step(state: StepState, params: UgcpParams, cfg: UgcpConfig, kernel=None) -> StepState:
    """Jacobi update of every location from the step-t state."""
    if state.t >= cfg.T:
        raise DomainError(f"step index {state.t} already at T={cfg.T}")
    g = feature_scalar(state.f, params.w)
    s_next = step_arrays(state.s, state.s0, g, cfg, kernel)
    _check_finite(s_next, state.t + 1)
    return replace(state, s=s_next, u=uncertainty(alpha_from_logits(s_next), cfg.eps), t=state.t + 1)


@dataclass
class RefineTrace:
    mean_abs_update: list[float] = field(default_factory=list)
    max_abs_delta: list[float] = field(default_factory=list)
    mean_u: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] | None = None

    def record(self, prev: np.ndarray | None, cur: StepState, theta: float, keep: bool):
        if prev is None:
            self.mean_abs_update.append(0.0)
            self.max_abs_delta.append(0.0)
        else:
            delta = cur.s.astype(np.float64) - prev.astype(np.float64)
            self.mean_abs_update.append(float(np.mean(np.abs(delta))) / theta if theta else 0.0)
            self.max_abs_delta.append(float(np.max(np.abs(delta))))
        self.mean_u.append(float(cur.u.mean()))
        if keep:
            if self.snapshots is None:
                self.snapshots = []
            self.snapshots.append(cur.s.copy())

    def __len__(self):
        return len(self.mean_u)


@dataclass
class RefineResult:
    s: np.ndarray
    pi: np.ndarray
    u: np.ndarray
    trace: RefineTrace


def refine(h: np.ndarray | None, params: UgcpParams, cfg: UgcpConfig, *, s0: np.ndarray | None = None,
           f: np.ndarray | None = None, keep_snapshots: bool = False, kernel=None) -> RefineResult:
    """Run ``cfg.T`` update steps from the head logits and map to probabilities.

    Pass either ``h`` or the pair ``(s0, f)``.  With ``T == 0`` the result is
    the one-shot head probability.
    """
    if h is not None:
        s0 = project_logits(h, params)
        f = project_features(h, params)
    elif s0 is None or f is None:
        raise DomainError("refine needs h or both s0 and f")
    state = StepState.initial(s0, f, cfg.eps)
    trace = RefineTrace()
    trace.record(None, state, cfg.theta, keep_snapshots)
    for _ in range(cfg.T):
        prev = state.s
        state = ugcp_step(state, params, cfg, kernel)
        trace.record(prev, state, cfg.theta, keep_snapshots)
    alpha = alpha_from_logits(state.s)
    return RefineResult(s=state.s, pi=expected_prob(alpha, cfg.eps), u=state.u, trace=trace)
