"""Synthetic vascular phantoms: branching tube trees, degraded observations, feature fields."""
from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import backend
from .errors import ConfigError
from .metrics import count_components
from .rng import Stream


@dataclass
class PhantomConfig:
    dim: int = 2
    extents: tuple[int, ...] = (64, 64)
    n_branches: int = 5
    radius_min: float = 1.0
    radius_max: float = 4.0
    angle_spread: float = 0.7  # radians, branch deviation from the parent direction
    gap_count: int = 2
    gap_length: int = 8
    noise_sigma: float = 0.1
    contrast: float = 1.0
    blur_radius: int = 1
    feature_blur: int = 2
    C_h: int = 4
    seed: int = 0

    def __post_init__(self):
        self.extents = tuple(int(e) for e in self.extents)
        if self.dim not in (2, 3) or len(self.extents) != self.dim:
            raise ConfigError(f"extents {self.extents} do not match dim={self.dim}")
        if min(self.extents) < 8:
            raise ConfigError("phantom extents must be at least 8 cells per axis")
        if self.radius_min < 1 or self.radius_max < self.radius_min:
            raise ConfigError("radii must satisfy 1 <= radius_min <= radius_max")
        if 2 * self.radius_max + 4 > min(self.extents):
            raise ConfigError("radius_max too large for the grid")
        if self.gap_length < 1 or self.gap_count < 0 or self.n_branches < 0:
            raise ConfigError("gap_length >= 1, gap_count >= 0 and n_branches >= 0 required")
        if self.noise_sigma < 0 or not 0 < self.contrast <= 1:
            raise ConfigError("noise_sigma >= 0 and contrast in (0, 1] required")
        if self.blur_radius < 0 or self.feature_blur < 0:
            raise ConfigError("blur radii must be non-negative")
        if self.C_h < 2:
            raise ConfigError("C_h must be at least 2")

    @classmethod
    def for_dim(cls, dim: int, **overrides) -> "PhantomConfig":
        base = {} if dim == 2 else {"dim": 3, "extents": (48, 48, 48), "radius_max": 3.0, "gap_length": 6}
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "PhantomConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["extents"] = list(self.extents)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown phantom config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Segment:
    a: np.ndarray
    b: np.ndarray
    radius: float


@dataclass
class Tree:
    gt: np.ndarray
    centerline: np.ndarray
    segments: list[Segment]
    keypoints: np.ndarray  # segment end points and branch origins


@dataclass
class PhantomSample:
    gt: np.ndarray  # bool, (*ext)
    centerline: np.ndarray  # bool, (*ext)
    observation: np.ndarray  # (1, *ext)
    h: np.ndarray  # (C_h, *ext)
    seed: int
    config: PhantomConfig = field(repr=False, default=None)


def _unit(v):
    return v / np.linalg.norm(v)


def _fit_length(start, direction, length, lo, hi):
    # shrink until the end point stays inside [lo, hi] on every axis
    for _ in range(64):
        end = start + direction * length
        if np.all(end >= lo) and np.all(end <= hi):
            return end, length
        length *= 0.9
    return start.copy(), 0.0


def _turn(direction, angle, rng: Stream):
    if direction.size == 2:
        c, s = np.cos(angle), np.sin(angle)
        return np.array([c * direction[0] - s * direction[1], s * direction[0] + c * direction[1]])
    # 3D: rotate toward a random direction perpendicular to the parent
    v = rng.normal(3)
    v -= v.dot(direction) * direction
    n = np.linalg.norm(v)
    perp = v / n if n > 1e-9 else _unit(np.cross(direction, [1.0, 0.0, 0.0]) + 1e-3)
    return _unit(np.cos(angle) * direction + np.sin(angle) * perp)


def _grid_points(extents):
    return np.stack(np.meshgrid(*[np.arange(e, dtype=np.float64) for e in extents], indexing="ij"), axis=-1)


def segment_distance(points, a, b):
    """Euclidean distance from each point to the closed segment ab."""
    ab = b - a
    denom = ab.dot(ab)
    t = np.zeros(points.shape[:-1]) if denom == 0 else np.clip((points - a) @ ab / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(points - closest, axis=-1)


def generate_tree(cfg: PhantomConfig) -> Tree:
    """Random binary branching tree of tubes, rasterized on the grid."""
    rng = Stream(2 * cfg.seed)
    ext = np.array(cfg.extents, dtype=np.float64)
    margin = cfg.radius_max + 1
    lo, hi = np.full(cfg.dim, margin), ext - 1 - margin

    # trunk enters from a random face and heads across the grid
    axis = int(rng.integers(0, cfg.dim)[0])
    side = int(rng.integers(0, 2)[0])
    start = lo + rng.uniform(cfg.dim) * (hi - lo)
    start[axis] = lo[axis] if side == 0 else hi[axis]
    direction = np.zeros(cfg.dim)
    direction[axis] = 1.0 if side == 0 else -1.0
    direction = _turn(direction, rng.uniform(1, -0.3, 0.3)[0], rng)
    length = (0.7 + 0.25 * rng.uniform(1)[0]) * (hi[axis] - lo[axis])
    end, _ = _fit_length(start, direction, length, lo, hi)
    r0 = float(rng.uniform(1, cfg.radius_min, cfg.radius_max)[0])
    segments = [Segment(start, end, r0)]
    keypoints = [start, end]

    for _ in range(cfg.n_branches):
        parent = segments[int(rng.integers(0, len(segments))[0])]
        t = rng.uniform(1, 0.2, 0.8)[0]
        origin = parent.a + t * (parent.b - parent.a)
        pdir = parent.b - parent.a
        if np.linalg.norm(pdir) == 0:
            continue
        sign = 1.0 if rng.uniform(1)[0] < 0.5 else -1.0
        angle = sign * (0.35 + cfg.angle_spread * rng.uniform(1)[0])
        d = _turn(_unit(pdir), angle, rng)
        length = (0.2 + 0.3 * rng.uniform(1)[0]) * float(np.min(ext))
        radius = max(cfg.radius_min, parent.radius * float(rng.uniform(1, 0.6, 1.0)[0]))
        b, length = _fit_length(origin, d, length, lo, hi)
        if length < 3:
            continue
        segments.append(Segment(origin, b, radius))
        keypoints += [origin, b]

    pts = _grid_points(cfg.extents)
    gt = np.zeros(cfg.extents, dtype=bool)
    centerline = np.zeros(cfg.extents, dtype=bool)
    for seg in segments:
        gt |= segment_distance(pts, seg.a, seg.b) <= seg.radius
        n = max(2, int(np.ceil(np.linalg.norm(seg.b - seg.a) * 4)) + 1)
        axis_pts = seg.a + np.linspace(0.0, 1.0, n)[:, None] * (seg.b - seg.a)
        idx = np.clip(np.rint(axis_pts).astype(np.int64), 0, np.array(cfg.extents) - 1)
        centerline[tuple(idx.T)] = True
    return Tree(gt, centerline, segments, np.array(keypoints))


def box_blur(x: np.ndarray, radius: int) -> np.ndarray:
    """Separable box mean over a (2r+1)^d window, normalized by the in-domain cell count.

    Integer or boolean input is summed in int64, so binary masks blur exactly.
    """
    if radius <= 0:
        return np.asarray(x, dtype=np.float64).copy()
    x = np.asarray(x)
    acc_dtype = np.int64 if (x.dtype == bool or np.issubdtype(x.dtype, np.integer)) else np.float64
    total = x.astype(acc_dtype)
    count = np.ones(x.shape, dtype=np.int64)
    for axis in range(x.ndim):
        total = _box_sum(total, radius, axis)
        count = _box_sum(count, radius, axis)
    return total / count


def _box_sum(x, r, axis):
    n = x.shape[axis]
    pad = [(0, 0)] * x.ndim
    pad[axis] = (1, 0)
    c = np.cumsum(np.pad(x, pad), axis=axis)
    hi = np.minimum(np.arange(n) + r + 1, n)
    lo = np.maximum(np.arange(n) - r, 0)
    return np.take(c, hi, axis=axis) - np.take(c, lo, axis=axis)


MAX_GAP_TRIALS = 64


def _cut_mask(pts, site, cfg: PhantomConfig) -> np.ndarray:
    c, d, radius = site
    rel = pts - c
    if d is None:
        return np.linalg.norm(rel, axis=-1) <= cfg.gap_length / 2
    along = rel @ d
    perp = np.linalg.norm(rel - along[..., None] * d, axis=-1)
    return (np.abs(along) <= cfg.gap_length / 2) & (perp <= radius + cfg.blur_radius + 1)


def _candidates(centerline, keypoints, segments, cfg: PhantomConfig):
    half = cfg.gap_length / 2
    if segments:
        out = []
        for seg in segments:
            length = float(np.linalg.norm(seg.b - seg.a))
            d = (seg.b - seg.a) / length if length else None
            for t in np.arange(half + 2, length - half - 2 + 1e-9, 1.0):
                out.append((seg.a + t * d, d, seg.radius))
        return out
    out = [(c, None, cfg.radius_max) for c in np.argwhere(centerline).astype(np.float64)]
    if len(keypoints):
        clearance = half + cfg.radius_max + 2
        out = [c for c in out if np.min(np.linalg.norm(keypoints - c[0], axis=1)) > clearance]
    return out


def gap_cuts(gt, centerline, cfg: PhantomConfig, rng: Stream, keypoints=(), segments=()) -> np.ndarray:
    """Union of the gap regions to zero in the observation.

    Candidate sites (along segment axes, or centerline cells when segments
    are unknown) are tried in a seeded random order; a cut is kept only if it
    raises the component count of the blurred vessel mask and leaves no piece
    smaller than ``2 * gap_length`` cells.
    """
    gt = box_blur(np.asarray(gt, dtype=bool), cfg.blur_radius) >= 0.5
    total = np.zeros(gt.shape, dtype=bool)
    if cfg.gap_count == 0:
        return total
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, gt.ndim)
    cands = _candidates(centerline, kp, list(segments), cfg)
    if not cands:
        return total
    pts = _grid_points(gt.shape)
    order = rng.permutation(len(cands))[:MAX_GAP_TRIALS]
    kept = 0
    current = count_components(gt)
    for i in order:
        cut = total | _cut_mask(pts, cands[i], cfg)
        remaining = gt & ~cut
        lab, n = ndimage.label(remaining)
        if n <= current or np.bincount(lab.ravel())[1:].min() < 2 * cfg.gap_length:
            continue
        total, current, kept = cut, n, kept + 1
        if kept == cfg.gap_count:
            break
    return total


def corrupt(gt, centerline, cfg: PhantomConfig, keypoints=(), segments=()) -> np.ndarray:
    """Blurred, contrast-scaled, noisy copy of ``gt`` with gaps cut along the vessels.

    With ``segments`` each gap zeroes a slab of length ``gap_length`` along a
    vessel axis spanning the tube cross-section; otherwise a ball of diameter
    ``gap_length`` around a centerline cell away from ``keypoints``.  Returns
    a ``(1, *ext)`` field clamped to [0, 1].
    """
    rng = Stream(2 * cfg.seed + 1)
    gt = np.asarray(gt, dtype=bool)
    obs = cfg.contrast * box_blur(gt, cfg.blur_radius)
    if cfg.noise_sigma > 0:
        obs = obs + rng.normal(gt.shape, cfg.noise_sigma)
    obs[gap_cuts(gt, centerline, cfg, rng, keypoints, segments)] = 0.0
    return np.clip(obs, 0.0, 1.0)[None]


def gradient_magnitude(x: np.ndarray) -> np.ndarray:
    """Central differences inside, one-sided at the border."""
    grads = np.gradient(np.asarray(x, dtype=np.float64))
    return np.sqrt(sum(g * g for g in grads))


def synth_features(observation, cfg: PhantomConfig) -> np.ndarray:
    """Feature field standing in for a backbone: observation, its blur, gradient magnitude, bias.

    For ``C_h > 4`` further blurs at growing radii are appended; for
    ``C_h < 4`` the leading channels are kept.
    """
    obs = np.asarray(observation, dtype=np.float64)
    if obs.ndim == cfg.dim + 1:
        obs = obs[0]
    chans = [obs, box_blur(obs, cfg.feature_blur), gradient_magnitude(obs), np.ones_like(obs)]
    j = 2
    while len(chans) < cfg.C_h:
        chans.append(box_blur(obs, max(1, cfg.feature_blur) * j))
        j += 1
    return np.stack(chans[:cfg.C_h])


def make_sample(cfg: PhantomConfig) -> PhantomSample:
    tree = generate_tree(cfg)
    obs = corrupt(tree.gt, tree.centerline, cfg, tree.keypoints, tree.segments)
    return PhantomSample(tree.gt, tree.centerline, obs, synth_features(obs, cfg), cfg.seed, cfg)


def make_dataset(n: int, cfg: PhantomConfig, num_threads: int | None = None) -> list[PhantomSample]:
    """``n`` samples with seeds ``cfg.seed + i``; each sample is generated on one thread."""
    if n < 1:
        raise ConfigError("dataset size must be at least 1")
    cfgs = [cfg.replace(seed=cfg.seed + i) for i in range(n)]
    workers = num_threads or backend.num_threads()
    if workers <= 1:
        return [make_sample(c) for c in cfgs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(make_sample, cfgs))


def split(samples, n_train: int):
    return samples[:n_train], samples[n_train:]


def tree_components(cfg: PhantomConfig) -> int:
    return count_components(generate_tree(cfg).gt)
