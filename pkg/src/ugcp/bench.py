"""Wall-clock benchmark of refinement across grid sizes, backends and thread counts."""
from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import backend
from .heads import UgcpConfig, init_params
from .propagation import refine
from .rng import Stream


@dataclass
class BenchRow:
    shape: tuple[int, ...]
    voxels: int
    backend: str
    threads: int
    T: int
    dtype: str
    median_s: float
    min_s: float
    max_s: float
    reps: int


def _case(shape, cfg: UgcpConfig, dtype, seed=0):
    rng = Stream(seed)
    h = rng.normal((cfg.C_h, *shape)).astype(dtype)
    return h, init_params(seed, cfg.C_h, cfg.C_f, cfg.K)


def time_refine(shape, T=2, reps=5, backend_name=None, threads=1, dtype=np.float32, warmup=1) -> BenchRow:
    cfg = UgcpConfig.for_dim(len(shape), T=T)
    h, params = _case(shape, cfg, dtype)
    kernel = backend.get(backend_name)
    old = os.environ.get(backend.THREADS_ENV)
    os.environ[backend.THREADS_ENV] = str(threads)
    try:
        for _ in range(warmup):
            refine(h, params, cfg, kernel=kernel)
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            refine(h, params, cfg, kernel=kernel)
            times.append(time.perf_counter() - t0)
    finally:
        if old is None:
            os.environ.pop(backend.THREADS_ENV, None)
        else:
            os.environ[backend.THREADS_ENV] = old
    return BenchRow(tuple(shape), int(np.prod(shape)), kernel.NAME, threads, T, np.dtype(dtype).name,
                    float(np.median(times)), float(min(times)), float(max(times)), reps)


def doubling_shapes(base=(32, 32, 32), n: int = 4) -> list[tuple[int, ...]]:
    """``base`` and successive shapes that each double the voxel count (one axis at a time)."""
    shapes = [tuple(base)]
    for i in range(n - 1):
        s = list(shapes[-1])
        s[i % len(s)] *= 2
        shapes.append(tuple(s))
    return shapes


def linearity(rows: list[BenchRow]) -> list[dict]:
    """time(2N)/time(N) for consecutive rows whose voxel counts double."""
    out = []
    for a, b in zip(rows, rows[1:]):
        if b.voxels == 2 * a.voxels:
            out.append({"from": a.shape, "to": b.shape, "ratio": b.median_s / a.median_s})
    return out


def bench(shapes=None, T=2, reps=5, backends=None, threads=(1,), dtype=np.float32) -> dict:
    shapes = shapes or doubling_shapes()
    backends = backends or backend.available()
    rows = []
    result = {"T": T, "reps": reps, "rows": [], "linearity": {}, "speedup": []}
    for name in backends:
        for nt in threads:
            series = [time_refine(s, T, reps, name, nt, dtype) for s in shapes]
            rows += series
            result["linearity"][f"{name}/threads={nt}"] = linearity(series)
    result["rows"] = [asdict(r) for r in rows]
    if "python" in backends and "compiled" in backends:
        for s in shapes:
            py = [r for r in rows if r.shape == tuple(s) and r.backend == "python" and r.threads == threads[0]]
            cc = [r for r in rows if r.shape == tuple(s) and r.backend == "compiled" and r.threads == threads[0]]
            if py and cc:
                result["speedup"].append({"shape": tuple(s), "python_over_compiled": py[0].median_s / cc[0].median_s})
    return result
