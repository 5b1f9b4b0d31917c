"""Grid domains, multi-channel fields and the axis-aligned neighborhood.

Fields are stored channel-major: ``data.shape == (C, *extents)``, with the
spatial part in C (row-major) order.  Every module in the package uses this
layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "GridShape",
    "GridField",
    "neighbor_offsets",
    "neighbors",
    "field_stats",
]


@dataclass(frozen=True)
class GridShape:
    extents: tuple[int, ...]
    spacing: tuple[float, ...] | None = None

    def __post_init__(self):
        ext = tuple(int(e) for e in self.extents)
        if len(ext) not in (2, 3):
            raise DomainError(f"grid must be 2D or 3D, got {len(ext)} axes")
        if any(e < 1 for e in ext):
            raise DomainError(f"extents must be >= 1, got {ext}")
        sp = (1.0,) * len(ext) if self.spacing is None else tuple(float(s) for s in self.spacing)
        if len(sp) != len(ext):
            raise DomainError("spacing and extents differ in length")
        if any(not (s > 0) for s in sp):
            raise DomainError(f"spacing must be positive, got {sp}")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "spacing", sp)

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def size(self) -> int:
        return int(np.prod(self.extents))

    def contains(self, p: Sequence[int]) -> bool:
        return len(p) == self.dim and all(0 <= c < e for c, e in zip(p, self.extents))


@dataclass(frozen=True)
class GridField:
    """A C-channel real field over a grid; ``data`` has shape ``(C, *extents)``."""

    data: np.ndarray
    spacing: tuple[float, ...] | None = None
    shape: GridShape = field(init=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim not in (3, 4):
            raise DomainError(f"field data must have shape (C, *extents) with 2 or 3 axes, got {data.shape}")
        if data.shape[0] < 1:
            raise DomainError("field needs at least one channel")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[0]
            raise DomainError(f"non-finite value at index {tuple(int(i) for i in bad)}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shape", GridShape(data.shape[1:], self.spacing))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @classmethod
    def zeros(cls, channels: int, extents: Sequence[int], dtype=np.float64, spacing=None) -> "GridField":
        return cls(np.zeros((channels, *extents), dtype=dtype), spacing)


def neighbor_offsets(dim: int) -> list[tuple[int, ...]]:
    """Unit steps in the fixed order: axis 0 -/+, axis 1 -/+, ..."""
    if dim not in (2, 3):
        raise DomainError(f"dim must be 2 or 3, got {dim}")
    out = []
    for axis in range(dim):
        for sign in (-1, 1):
            step = [0] * dim
            step[axis] = sign
            out.append(tuple(step))
    return out


def neighbors(p: Sequence[int], shape: GridShape) -> list[tuple[int, ...]]:
    """In-domain face neighbors of ``p``; out-of-domain neighbors are dropped."""
    p = tuple(int(c) for c in p)
    if not shape.contains(p):
        raise DomainError(f"location {p} outside grid {shape.extents}")
    out = []
    for step in neighbor_offsets(shape.dim):
        q = tuple(a + b for a, b in zip(p, step))
        if shape.contains(q):
            out.append(q)
    return out


def iter_locations(shape: GridShape) -> Iterator[tuple[int, ...]]:
    yield from np.ndindex(*shape.extents)


def field_stats(f: GridField | np.ndarray) -> dict:
    data = f.data if isinstance(f, GridField) else np.asarray(f)
    flat = data.astype(np.float64, copy=False).ravel()
    return {
        "min": float(flat.min()),
        "max": float(flat.max()),
        "mean": float(flat.mean()),
        "finite_count": int(np.isfinite(flat).sum()),
    }
