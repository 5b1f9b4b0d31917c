"""Self-describing little-endian array files.

Byte map of the native format (all integers little-endian)::

    offset  size  field
    0       6     magic b"UGCPAR"
    6       1     version (1)
    7       1     dtype code: 1 = f32, 2 = f64, 3 = u8
    8       1     ndim (1..8)
    9       7     reserved, zero
    16      8*n   extents, uint64 each
    16+8n   ...   payload, C order

Paths ending in ``.npy`` are written and read as numpy ``.npy`` files
instead, for inspection with external tools.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ArrayFileError

MAGIC = b"UGCPAR"
VERSION = 1
HEADER = struct.Struct("<6sBBB7x")
CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
CODE_OF = {v: k for k, v in CODES.items()}
MAX_BYTES = 1 << 40


def _code(dtype) -> int:
    dt = np.dtype(dtype)
    if dt == bool:
        dt = np.dtype("u1")
    dt = dt.newbyteorder("<") if dt.itemsize > 1 else dt
    if dt not in CODE_OF:
        raise ArrayFileError(f"unsupported dtype {dtype}; use float32, float64 or uint8")
    return CODE_OF[dt]


def write_array(arr, path) -> Path:
    path = Path(path)
    arr = np.asarray(arr)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if path.suffix == ".npy":
        np.save(path, arr, allow_pickle=False)
        return path
    code = _code(arr.dtype)
    if not 1 <= arr.ndim <= 8:
        raise ArrayFileError(f"ndim must be in 1..8, got {arr.ndim}")
    payload = np.ascontiguousarray(arr, dtype=CODES[code]).tobytes()
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(payload)
    return path


def read_array(path, dtype=None) -> np.ndarray:
    """Read a native or ``.npy`` array file; ``dtype`` asserts the stored type."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:6] == b"\x93NUMPY":
        arr = np.load(path, allow_pickle=False)
    else:
        arr = _decode(raw, path)
    if dtype is not None and arr.dtype != np.dtype(dtype):
        raise ArrayFileError(f"{path}: stored dtype {arr.dtype} does not match requested {np.dtype(dtype)}")
    return arr


def _decode(raw: bytes, path) -> np.ndarray:
    if len(raw) < HEADER.size:
        raise ArrayFileError(f"{path}: header needs {HEADER.size} bytes, file has {len(raw)}")
    magic, version, code, ndim = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ArrayFileError(f"{path}: bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise ArrayFileError(f"{path}: unsupported version {version} at offset 6")
    if code not in CODES:
        raise ArrayFileError(f"{path}: unknown dtype code {code} at offset 7")
    if not 1 <= ndim <= 8:
        raise ArrayFileError(f"{path}: invalid ndim {ndim} at offset 8")
    ext_end = HEADER.size + 8 * ndim
    if len(raw) < ext_end:
        raise ArrayFileError(f"{path}: extents need bytes {HEADER.size}..{ext_end}, file has {len(raw)}")
    shape = struct.unpack_from(f"<{ndim}Q", raw, HEADER.size)
    dt = CODES[code]
    count = 1
    for e in shape:
        count *= e
        if count * dt.itemsize > MAX_BYTES:
            raise ArrayFileError(f"{path}: shape {shape} overflows the payload limit")
    expected = count * dt.itemsize
    actual = len(raw) - ext_end
    if actual != expected:
        raise ArrayFileError(
            f"{path}: payload at offset {ext_end} should be {expected} bytes for shape {shape}, found {actual}")
    return np.frombuffer(raw, dtype=dt, count=count, offset=ext_end).reshape(shape).astype(dt.newbyteorder("="))


def save_params(params, directory, meta: dict | None = None) -> Path:
    """Write each parameter tensor as a float64 array file plus a ``params.json`` sidecar."""
    from .heads import PARAM_NAMES

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for name in PARAM_NAMES:
        arr = np.asarray(getattr(params, name), dtype=np.float64)
        write_array(arr, directory / f"{name}.ugcp")
        shapes[name] = list(arr.shape)
    side = {"format": "ugcp-params/1", "shapes": shapes, **(meta or {})}
    (directory / "params.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return directory


def load_params(directory):
    """Inverse of :func:`save_params`; returns ``(params, sidecar)``."""
    from .heads import PARAM_NAMES, UgcpParams

    directory = Path(directory)
    side_path = directory / "params.json"
    if not side_path.is_file():
        raise ArrayFileError(f"{directory}: missing params.json sidecar")
    side = json.loads(side_path.read_text())
    arrays = {}
    for name in PARAM_NAMES:
        arr = read_array(directory / f"{name}.ugcp", dtype=np.float64)
        want = tuple(side["shapes"][name])
        if arr.shape != want:
            raise ArrayFileError(f"{directory / name}.ugcp: shape {arr.shape} but sidecar records {want}")
        arrays[name] = arr
    return UgcpParams(**arrays), side
