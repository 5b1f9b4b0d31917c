"""Finite-difference verification of the analytic gradients."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .gradients import loss_and_grad, total_loss
from .heads import UgcpConfig, init_params
from .rng import Stream

TOLERANCE = 1e-5
STEP = 1e-5
# gradients below this magnitude are compared on an absolute scale
GRAD_FLOOR = 1e-4

FLAG_COMBOS = list(itertools.product((True, False), repeat=3))


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), GRAD_FLOOR)


def numeric_grad(fn, x: np.ndarray) -> np.ndarray:
    """Central differences with step ``1e-5 * max(1, |x_i|)``."""
    out = np.empty_like(x)
    for i in range(x.size):
        e = STEP * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += e
        xm[i] -= e
        out[i] = (fn(xp) - fn(xm)) / (2 * e)
    return out


@dataclass
class CheckEntry:
    dim: int
    T: int
    enable_gamma: bool
    enable_phi: bool
    enable_source: bool
    worst: float
    worst_at: str

    @property
    def passed(self) -> bool:
        return self.worst <= TOLERANCE


@dataclass
class GradcheckReport:
    entries: list[CheckEntry] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def worst(self) -> float:
        return max((e.worst for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst_relative_error": self.worst,
            "tolerance": TOLERANCE,
            "seconds": self.seconds,
            "entries": [dict(vars(e), passed=e.passed) for e in self.entries],
        }


def problem(dim: int, seed: int, C_h: int = 4, C_f: int = 8, K: int = 2):
    ext = (6, 6) if dim == 2 else (4, 4, 4)
    rng = Stream(seed)
    h = rng.normal((C_h, *ext))
    y = (rng.uniform(ext) < 0.4).astype(np.float64)
    params = init_params(seed, C_h, C_f, K)
    params.b_s[:] = rng.normal(K, 0.5)
    params.b_f[:] = rng.normal(C_f, 0.5)
    return h, y, params


def check_one(h, y, params, cfg: UgcpConfig, wrt_h: bool = True) -> tuple[float, str]:
    _, grads = loss_and_grad(h, y, params, cfg, wrt_h=wrt_h)
    x = params.flat()
    num = numeric_grad(lambda v: total_loss(h, y, params.with_flat(v), cfg).total, x)
    rel = relative_error(grads.flat(), num)
    worst, where = float(rel.max()), f"param[{int(rel.argmax())}]"
    if wrt_h:
        num_h = numeric_grad(lambda v: total_loss(v.reshape(h.shape), y, params, cfg).total, h.ravel().copy())
        rel_h = relative_error(grads.h.ravel(), num_h)
        if rel_h.max() > worst:
            worst, where = float(rel_h.max()), f"h[{int(rel_h.argmax())}]"
    return worst, where


def gradcheck(cfg: UgcpConfig | None = None, dims=(2, 3), Ts=(0, 1, 2, 3), flags=None,
              seed: int = 0, wrt_h: bool = True) -> GradcheckReport:
    """Sweep dimension, step count and ablation flags; each entry records the worst relative error."""
    start = time.perf_counter()
    report = GradcheckReport()
    for dim in dims:
        base = UgcpConfig.for_dim(dim) if cfg is None else cfg
        h, y, params = problem(dim, seed + dim, base.C_h, base.C_f, base.K)
        for T in Ts:
            for gam, phi, src in flags or FLAG_COMBOS:
                c = base.replace(T=T, enable_gamma=gam, enable_phi=phi, enable_source=src)
                worst, where = check_one(h, y, params, c, wrt_h)
                report.entries.append(CheckEntry(dim, T, gam, phi, src, worst, where))
    report.seconds = time.perf_counter() - start
    return report
