"""Total training loss and its reverse-mode gradient through the unrolled refinement.

The backward pass stores every intermediate logit state and re-derives
gates, edge factors and uncertainty from it, so the dependence of the
gates on the evolving state is differentiated rather than frozen.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._pykernels import edge_slices
from .errors import NumericError
from .evidence import alpha_from_logits, sigmoid, softplus
from .heads import PARAM_NAMES, UgcpConfig, UgcpParams, project_features, project_logits
from .losses import (
    LossBreakdown, bce_grad, bce_loss, evidential_grad, evidential_loss,
    soft_dice_grad, soft_dice_loss,
)
from .propagation import feature_scalar, step_arrays


@dataclass
class GradientSet:
    W_s: np.ndarray
    b_s: np.ndarray
    W_f: np.ndarray
    b_f: np.ndarray
    w: np.ndarray
    h: np.ndarray | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays().values()])


@dataclass
class Forward:
    h: np.ndarray
    s0: np.ndarray
    f: np.ndarray
    g: np.ndarray
    states: list[np.ndarray]
    alpha: np.ndarray
    pi: np.ndarray


def forward(h, params: UgcpParams, cfg: UgcpConfig, kernel=None) -> Forward:
    h = np.asarray(h, dtype=np.float64)
    s0 = project_logits(h, params)
    f = project_features(h, params)
    g = feature_scalar(f, params.w)
    states = [s0]
    for t in range(cfg.T):
        nxt = step_arrays(states[-1], s0, g, cfg, kernel)
        if not np.all(np.isfinite(nxt)):
            raise NumericError(f"non-finite logits after step {t + 1}")
        states.append(nxt)
    alpha = alpha_from_logits(states[-1])
    pi = alpha / (alpha.sum(axis=0, keepdims=True) + cfg.eps)
    return Forward(h, s0, f, g, states, alpha, pi)


def losses_from_forward(fw: Forward, y, cfg: UgcpConfig) -> LossBreakdown:
    y = np.asarray(y, dtype=np.float64).reshape(fw.pi.shape[1:])
    pi_fg = fw.pi[1]
    uq = evidential_loss(fw.alpha, y) if cfg.lambda_uq else 0.0
    return LossBreakdown.build(soft_dice_loss(pi_fg, y), bce_loss(pi_fg, y), uq, cfg.lambda_uq)


def total_loss(h, y, params: UgcpParams, cfg: UgcpConfig, kernel=None) -> LossBreakdown:
    """Dice + BCE on the final foreground probability, plus the weighted evidential term."""
    return losses_from_forward(forward(h, params, cfg, kernel), y, cfg)


def step_backward(s, s0, g, G, cfg: UgcpConfig):
    """Pull the adjoint ``G`` of step t+1 back through one update.

    Returns adjoints for the step-t state, the anchor ``s0`` and the
    feature scalar field ``g``.
    """
    K = s.shape[0]
    nd = s.ndim - 1
    kappa = cfg.tau + cfg.eps
    alpha = softplus(s) + 1
    u = K / (alpha.sum(axis=0) + cfg.eps)
    Gb = cfg.theta * G
    s_bar = G.copy()
    u_bar = np.zeros(s.shape[1:])
    g_bar = np.zeros(s.shape[1:])
    s0_bar = np.zeros_like(s)
    allc = (slice(None),)
    for axis in range(nd):
        for sign in (-1, 1):
            ps, qs = edge_slices(nd, axis, sign)
            if cfg.enable_gamma:
                d = (u[ps] - u[qs]) / kappa
                gin, gout = sigmoid(d), sigmoid(-d)
            else:
                gin = gout = 0.5
            phi = np.tanh(g[ps] - g[qs]) if cfg.enable_phi else 1.0
            Gp = Gb[allc + ps]
            sq = s[allc + qs]
            sp = s[allc + ps]
            s_bar[allc + qs] += gin * phi * Gp
            s_bar[allc + ps] -= gout * Gp
            if cfg.enable_gamma:
                x_bar = np.sum(Gp * (gin * (1 - gin) * phi * sq + gout * (1 - gout) * sp), axis=0) / kappa
                u_bar[ps] += x_bar
                u_bar[qs] -= x_bar
            if cfg.enable_phi:
                e_bar = np.sum(Gp * gin * sq, axis=0) * (1 - phi * phi)
                g_bar[ps] += e_bar
                g_bar[qs] -= e_bar
    if cfg.enable_source:
        r = sigmoid((cfg.u0 - u) / kappa)
        s0_bar += r * Gb
        s_bar -= r * Gb
        u_bar -= np.sum(Gb * (s0 - s), axis=0) * r * (1 - r) / kappa
    s_bar += (u_bar * (-u * u / K))[None] * sigmoid(s)
    return s_bar, s0_bar, g_bar


def _require_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite gradient in {where}")


def loss_and_grad(h, y, params: UgcpParams, cfg: UgcpConfig, wrt_h: bool = False, kernel=None):
    fw = forward(h, params, cfg, kernel)
    y = np.asarray(y, dtype=np.float64).reshape(fw.pi.shape[1:])
    loss = losses_from_forward(fw, y, cfg)

    S = fw.alpha.sum(axis=0) + cfg.eps
    d_pi = soft_dice_grad(fw.pi[1], y) + bce_grad(fw.pi[1], y)
    a_bar = (-d_pi * fw.alpha[1] / S**2)[None] * np.ones_like(fw.alpha)
    a_bar[1] += d_pi / S
    if cfg.lambda_uq:
        a_bar += cfg.lambda_uq * evidential_grad(fw.alpha, y)
    s_bar = a_bar * sigmoid(fw.states[-1])
    _require_finite(s_bar, "loss head")

    s0_acc = np.zeros_like(fw.s0)
    g_bar = np.zeros_like(fw.g)
    for t in range(cfg.T - 1, -1, -1):
        s_bar, s0b, gb = step_backward(fw.states[t], fw.s0, fw.g, s_bar, cfg)
        _require_finite(s_bar, f"step {t} state adjoint")
        _require_finite(gb, f"step {t} edge modulation")
        s0_acc += s0b
        g_bar += gb
    s0_bar = s_bar + s0_acc

    nd = fw.h.ndim - 1
    spatial = tuple(range(1, nd + 1))
    f_bar = params.w.reshape((-1,) + (1,) * nd) * g_bar[None]
    grads = GradientSet(
        W_s=np.tensordot(fw.h, s0_bar, axes=(spatial, spatial)),
        b_s=s0_bar.sum(axis=spatial),
        W_f=np.tensordot(fw.h, f_bar, axes=(spatial, spatial)),
        b_f=f_bar.sum(axis=spatial),
        w=np.tensordot(fw.f, g_bar, axes=(spatial, tuple(range(nd)))),
    )
    if wrt_h:
        grads.h = np.tensordot(params.W_s, s0_bar, axes=([1], [0])) + np.tensordot(params.W_f, f_bar, axes=([1], [0]))
    for name, arr in grads.arrays().items():
        _require_finite(arr, f"parameter {name}")
    return loss, grads


def backward(h, y, params: UgcpParams, cfg: UgcpConfig, wrt_h: bool = False, kernel=None) -> GradientSet:
    return loss_and_grad(h, y, params, cfg, wrt_h, kernel)[1]
