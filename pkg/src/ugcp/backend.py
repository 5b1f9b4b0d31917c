"""Kernel selection and thread count.

The compiled core is used when it imports; ``UGCP_BACKEND=python`` forces
the numpy fallback.  ``UGCP_NUM_THREADS`` sets the worker count for the
compiled kernel and for per-case/per-window pools.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

THREADS_ENV = "UGCP_NUM_THREADS"
BACKEND_ENV = "UGCP_BACKEND"


def available() -> list[str]:
    return ["python"] + (["compiled"] if _ckernels is not None else [])


def get(name: str | None = None) -> ModuleType:
    name = name or os.environ.get(BACKEND_ENV) or ("compiled" if _ckernels is not None else "python")
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernel not built; reinstall with Cython available")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def num_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1
