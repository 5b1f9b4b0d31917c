"""Hyperparameters, learnable parameters and the per-location linear heads."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .evidence import EPS
from .rng import Stream


@dataclass
class UgcpConfig:
    """Refinement and loss hyperparameters.

    ``tau`` and ``lambda_uq`` default to the 2D values; use :meth:`for_dim`
    to get the 3D defaults (0.1 and 0.2).
    """

    T: int = 2
    theta: float = 1.0
    tau: float = 0.01
    u0: float = 0.5
    eps: float = EPS
    lambda_uq: float = 0.1
    K: int = 2
    C_h: int = 4
    C_f: int = 8
    enable_gamma: bool = True
    enable_phi: bool = True
    enable_source: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @classmethod
    def for_dim(cls, dim: int, **overrides) -> "UgcpConfig":
        if dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {dim}")
        base = {"tau": 0.01, "lambda_uq": 0.1} if dim == 2 else {"tau": 0.1, "lambda_uq": 0.2}
        base.update(overrides)
        return cls(**base)

    def validate(self):
        if int(self.T) != self.T or self.T < 0:
            raise ConfigError(f"T must be a non-negative integer, got {self.T}")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not 0 < self.u0 < 1:
            raise ConfigError("u0 must lie in (0, 1)")
        if self.theta < 0:
            raise ConfigError("theta must be non-negative")
        if self.lambda_uq < 0:
            raise ConfigError("lambda_uq must be non-negative")
        if self.K < 2:
            raise ConfigError("K must be at least 2")
        if self.C_h < 1 or self.C_f < 1:
            raise ConfigError("C_h and C_f must be positive")

    def replace(self, **changes) -> "UgcpConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UgcpConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


PARAM_NAMES = ("W_s", "b_s", "W_f", "b_f", "w")


@dataclass
class UgcpParams:
    W_s: np.ndarray  # (C_h, K)
    b_s: np.ndarray  # (K,)
    W_f: np.ndarray  # (C_h, C_f)
    b_f: np.ndarray  # (C_f,)
    w: np.ndarray  # (C_f,)
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in PARAM_NAMES:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"parameter {name} has non-finite entries")
            setattr(self, name, arr)
        C_h, K = self.W_s.shape
        C_f = self.W_f.shape[1]
        if (self.b_s.shape != (K,) or self.W_f.shape[0] != C_h
                or self.b_f.shape != (C_f,) or self.w.shape != (C_f,)):
            raise DomainError("inconsistent parameter shapes")

    @property
    def C_h(self) -> int:
        return self.W_s.shape[0]

    @property
    def K(self) -> int:
        return self.W_s.shape[1]

    @property
    def C_f(self) -> int:
        return self.W_f.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "UgcpParams":
        return UgcpParams(**{k: v.copy() for k, v in self.arrays().items()}, seed=self.seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays().values()])

    def with_flat(self, vec: np.ndarray) -> "UgcpParams":
        out, i = {}, 0
        for name, arr in self.arrays().items():
            out[name] = np.asarray(vec[i:i + arr.size], dtype=np.float64).reshape(arr.shape)
            i += arr.size
        return UgcpParams(**out, seed=self.seed)


def init_params(seed: int, C_h: int = 4, C_f: int = 8, K: int = 2) -> UgcpParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    if min(C_h, C_f, K) < 1:
        raise ConfigError(f"dimensions must be positive, got C_h={C_h}, C_f={C_f}, K={K}")
    rng = Stream(seed)

    def glorot(fan_in, fan_out, shape):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(shape, -a, a)

    return UgcpParams(
        W_s=glorot(C_h, K, (C_h, K)),
        b_s=np.zeros(K),
        W_f=glorot(C_h, C_f, (C_h, C_f)),
        b_f=np.zeros(C_f),
        w=glorot(C_f, 1, (C_f,)),
        seed=seed,
    )


def _project(h: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    h = np.asarray(h)
    if h.ndim < 3 or h.shape[0] != W.shape[0]:
        raise DomainError(f"feature field has {h.shape[0] if h.ndim else 0} channels, head expects {W.shape[0]}")
    dtype = h.dtype if np.issubdtype(h.dtype, np.floating) else np.float64
    W = W.astype(dtype, copy=False)
    b = b.astype(dtype, copy=False)
    out = np.tensordot(W, h, axes=([0], [0]))
    return out + b.reshape((-1,) + (1,) * (h.ndim - 1))


def project_logits(h: np.ndarray, params: UgcpParams) -> np.ndarray:
    """Initial logit state ``W_s^T h_p + b_s`` at every location."""
    return _project(h, params.W_s, params.b_s)


def project_features(h: np.ndarray, params: UgcpParams) -> np.ndarray:
    return _project(h, params.W_f, params.b_f)
