"""Sliding-window refinement with logit-space blending."""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import backend
from .errors import ConfigError
from .evidence import alpha_from_logits, expected_prob, uncertainty
from .heads import UgcpConfig, UgcpParams
from .propagation import refine


@dataclass(frozen=True)
class WindowPlan:
    extents: tuple[int, ...]
    patch: tuple[int, ...]
    stride: tuple[int, ...]
    origins: tuple[tuple[int, ...], ...]  # per-axis origins
    blend: str = "mean-logit"

    @property
    def windows(self) -> list[tuple[int, ...]]:
        return list(itertools.product(*self.origins))

    def slices(self, origin) -> tuple[slice, ...]:
        return tuple(slice(o, o + p) for o, p in zip(origin, self.patch))

    def coverage(self) -> np.ndarray:
        cov = np.zeros(self.extents, dtype=np.int64)
        for o in self.windows:
            cov[self.slices(o)] += 1
        return cov


def axis_origins(extent: int, patch: int, overlap: float) -> tuple[tuple[int, ...], int]:
    if patch > extent or patch < 1:
        raise ConfigError(f"patch {patch} must lie in 1..{extent}")
    if not 0 <= overlap < 1:
        raise ConfigError("overlap must lie in [0, 1)")
    stride = max(1, int(np.floor(patch * (1 - overlap))))
    out = []
    o = 0
    while True:
        cand = min(o, extent - patch)
        if not out or out[-1] != cand:
            out.append(cand)
        if o + patch >= extent:
            break
        o += stride
    return tuple(out), stride


def plan_windows(extents: Sequence[int], patch: Sequence[int] | int, overlap: float = 0.5) -> WindowPlan:
    extents = tuple(int(e) for e in extents)
    patch = (int(patch),) * len(extents) if np.isscalar(patch) else tuple(int(p) for p in patch)
    if len(patch) != len(extents):
        raise ConfigError("patch and extents differ in length")
    per_axis = [axis_origins(e, p, overlap) for e, p in zip(extents, patch)]
    return WindowPlan(extents, patch, tuple(s for _, s in per_axis), tuple(o for o, _ in per_axis))


@dataclass
class SlidingResult:
    s: np.ndarray
    pi: np.ndarray
    u: np.ndarray
    coverage: np.ndarray


def sliding_refine(h: np.ndarray, params: UgcpParams, cfg: UgcpConfig, patch, overlap: float = 0.5,
                   num_threads: int | None = None, kernel=None) -> SlidingResult:
    """Refine each window independently and average final logits where windows overlap.

    Window results are summed in window-index order, so the output does not
    depend on the number of worker threads.
    """
    h = np.asarray(h)
    plan = plan_windows(h.shape[1:], patch, overlap)
    windows = plan.windows

    def run(origin):
        return refine(h[(slice(None),) + plan.slices(origin)], params, cfg, kernel=kernel).s

    workers = num_threads or backend.num_threads()
    if workers > 1 and len(windows) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, windows))
    else:
        parts = [run(o) for o in windows]
    acc = np.zeros((cfg.K,) + plan.extents, dtype=np.float64)
    for origin, s in zip(windows, parts):
        acc[(slice(None),) + plan.slices(origin)] += s
    cov = plan.coverage()
    s = (acc / cov).astype(parts[0].dtype, copy=False)
    alpha = alpha_from_logits(s)
    return SlidingResult(s, expected_prob(alpha, cfg.eps), uncertainty(alpha, cfg.eps), cov)
