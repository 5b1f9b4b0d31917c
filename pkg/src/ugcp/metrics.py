"""Vessel segmentation metrics: Dice, clDice, HD95 and component counts."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage.morphology import skeletonize as _sk_skeletonize

from . import backend
from .errors import DomainError, UndefinedMetricError

THRESHOLD = 0.5


def _mask(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim in (3, 4) and m.shape[0] == 1:
        m = m[0]
    if m.ndim not in (2, 3):
        raise DomainError(f"mask must be 2D or 3D, got shape {m.shape}")
    if m.dtype != bool:
        if not np.all((m == 0) | (m == 1)):
            raise DomainError("mask must be binary")
        m = m.astype(bool)
    return m


def _pair(pred, gt):
    p, g = _mask(pred), _mask(gt)
    if p.shape != g.shape:
        raise DomainError(f"shape mismatch: {p.shape} vs {g.shape}")
    return p, g


def binarize(prob_fg, threshold: float = THRESHOLD) -> np.ndarray:
    """Foreground where the probability is strictly above the threshold."""
    return np.asarray(prob_fg) > threshold


def dice(pred, gt) -> float:
    p, g = _pair(pred, gt)
    total = p.sum() + g.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(p, g).sum() / total)


def skeletonize(mask) -> np.ndarray:
    """Connectivity-preserving thinning (Zhang-style in 2D, Lee's simple-point peeling in 3D)."""
    m = _mask(mask)
    if not m.any():
        return np.zeros_like(m)
    return _sk_skeletonize(m).astype(bool)


def cl_dice(pred, gt) -> float:
    p, g = _pair(pred, gt)
    if not p.any() and not g.any():
        return 1.0
    sp, sg = skeletonize(p), skeletonize(g)
    if not sp.any() or not sg.any():
        return 0.0
    tprec = np.logical_and(sp, g).sum() / sp.sum()
    tsens = np.logical_and(sg, p).sum() / sg.sum()
    if tprec + tsens == 0:
        return 0.0
    return float(2 * tprec * tsens / (tprec + tsens))


def boundary(mask) -> np.ndarray:
    """Mask cells with a face neighbor outside the mask or outside the domain."""
    m = _mask(mask)
    inner = ndimage.binary_erosion(m, structure=ndimage.generate_binary_structure(m.ndim, 1), border_value=0)
    return m & ~inner


def _directed(a_pts, b_pts):
    return cKDTree(b_pts).query(a_pts, k=1)[0]


def surface_distances(pred, gt, spacing: Sequence[float] | None = None):
    p, g = _pair(pred, gt)
    if not p.any() or not g.any():
        raise UndefinedMetricError("HD95 undefined: empty mask")
    sp = np.ones(p.ndim) if spacing is None else np.asarray(spacing, dtype=np.float64)
    if sp.shape != (p.ndim,) or np.any(sp <= 0):
        raise DomainError(f"spacing must be {p.ndim} positive values")
    bp = np.argwhere(boundary(p)) * sp
    bg = np.argwhere(boundary(g)) * sp
    return _directed(bp, bg), _directed(bg, bp)


def hd95(pred, gt, spacing: Sequence[float] | None = None) -> float:
    """Max of the two directed 95th-percentile boundary distances, in spacing units."""
    d_pg, d_gp = surface_distances(pred, gt, spacing)
    return float(max(np.percentile(d_pg, 95), np.percentile(d_gp, 95)))


def count_components(mask, connectivity: str = "face") -> int:
    """Connected foreground components; ``connectivity`` is ``"face"`` or ``"full"``."""
    m = _mask(mask)
    rank = {"face": 1, "full": m.ndim}.get(connectivity)
    if rank is None:
        raise DomainError(f"unknown connectivity {connectivity!r}")
    return int(ndimage.label(m, structure=ndimage.generate_binary_structure(m.ndim, rank))[1])


@dataclass
class MetricReport:
    case: str
    dsc: float
    cldice: float
    hd95: float | None
    components_pred: int
    components_gt: int

    def row(self) -> dict:
        d = asdict(self)
        d["hd95"] = "undefined" if self.hd95 is None else self.hd95
        return d


def evaluate_case(pred, gt, spacing=None, case: str = "") -> MetricReport:
    p, g = _pair(pred, gt)
    try:
        h = hd95(p, g, spacing)
    except UndefinedMetricError:
        h = None
    return MetricReport(case, dice(p, g), cl_dice(p, g), h, count_components(p), count_components(g))


def evaluate_cases(cases, spacing=None, num_threads: int | None = None) -> list[MetricReport]:
    """``evaluate_case`` over ``(name, pred, gt)`` triples; results keep input order."""
    cases = list(cases)

    def one(c):
        return evaluate_case(c[1], c[2], spacing, case=c[0])

    workers = num_threads or backend.num_threads()
    if workers <= 1 or len(cases) < 2:
        return [one(c) for c in cases]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, cases))


def summarize(reports: Sequence[MetricReport]) -> dict:
    """Mean and standard deviation per metric; undefined HD95 values are skipped and counted."""
    out = {"n_cases": len(reports)}
    for key in ("dsc", "cldice", "hd95", "components_pred", "components_gt"):
        vals = np.array([getattr(r, key) for r in reports if getattr(r, key) is not None], dtype=np.float64)
        out[key] = {
            "mean": float(vals.mean()) if vals.size else None,
            "std": float(vals.std()) if vals.size else None,
            "n": int(vals.size),
        }
    return out
