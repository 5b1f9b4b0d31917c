"""Adam training loop over phantom samples."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, TrainingError
from .gradients import loss_and_grad
from .heads import UgcpConfig, UgcpParams, init_params
from .losses import LossBreakdown
from .rng import Stream


@dataclass
class OptConfig:
    epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    batch_size: int = 0  # 0 = full batch
    cosine: bool = False
    shuffle_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params: UgcpParams, opt: OptConfig):
        self.opt = opt
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.t = 0

    def step(self, params: UgcpParams, grads: dict[str, np.ndarray], lr: float):
        o = self.opt
        self.t += 1
        bc1 = 1 - o.beta1**self.t
        bc2 = 1 - o.beta2**self.t
        for name, p in params.arrays().items():
            g = grads[name] + o.weight_decay * p
            self.m[name] = o.beta1 * self.m[name] + (1 - o.beta1) * g
            self.v[name] = o.beta2 * self.v[name] + (1 - o.beta2) * g * g
            denom = np.sqrt(self.v[name] / bc2) + o.adam_eps
            p -= lr * (self.m[name] / bc1) / denom


@dataclass
class TrainResult:
    params: UgcpParams
    curve: list[LossBreakdown] = field(default_factory=list)


def batch_loss_and_grad(batch, params: UgcpParams, cfg: UgcpConfig):
    """Mean loss and gradient over ``(h, y)`` pairs, reduced in sample order."""
    n = len(batch)
    acc = None
    parts = np.zeros(3)
    for h, y in batch:
        loss, g = loss_and_grad(h, y, params, cfg)
        parts += (loss.dice, loss.bce, loss.uq)
        arrs = g.arrays()
        acc = arrs if acc is None else {k: acc[k] + arrs[k] for k in acc}
    parts /= n
    mean = LossBreakdown.build(*parts, cfg.lambda_uq)
    return mean, {k: v / n for k, v in acc.items()}


def _pairs(dataset):
    out = []
    for item in dataset:
        if isinstance(item, tuple):
            out.append(item)
        else:
            out.append((item.h, item.gt))
    return out


def train(dataset, cfg: UgcpConfig, opt: OptConfig | None = None,
          params: UgcpParams | None = None, log_every: int = 0, log=print) -> TrainResult:
    """Fit the heads and edge vector by Adam; deterministic given seeds.

    ``dataset`` holds phantom samples or ``(h, y)`` pairs.  The curve has one
    entry per epoch (mean of the batch losses seen during that epoch, each
    taken before its update) plus a final full-dataset entry after training.
    """
    opt = opt or OptConfig()
    pairs = _pairs(dataset)
    if not pairs:
        raise ConfigError("training needs a non-empty dataset")
    params = params.copy() if params is not None else init_params(cfg.seed, cfg.C_h, cfg.C_f, cfg.K)
    adam = Adam(params, opt)
    order_rng = Stream(opt.shuffle_seed)
    bs = opt.batch_size or len(pairs)
    curve = []
    for epoch in range(opt.epochs):
        lr = opt.lr
        if opt.cosine:
            lr = 0.5 * opt.lr * (1 + math.cos(math.pi * epoch / opt.epochs))
        order = order_rng.permutation(len(pairs)) if bs < len(pairs) else np.arange(len(pairs))
        parts = np.zeros(3)
        for start in range(0, len(pairs), bs):
            batch = [pairs[i] for i in order[start:start + bs]]
            try:
                loss, grads = batch_loss_and_grad(batch, params, cfg)
            except NumericError as err:
                raise TrainingError(f"diverged at epoch {epoch}: {err}") from err
            if not math.isfinite(loss.total):
                raise TrainingError(f"loss became non-finite at epoch {epoch}")
            parts += len(batch) * np.array([loss.dice, loss.bce, loss.uq])
            adam.step(params, grads, lr)
        epoch_loss = LossBreakdown.build(*(parts / len(pairs)), cfg.lambda_uq)
        curve.append(epoch_loss)
        if log_every and epoch % log_every == 0:
            log(f"epoch {epoch}: total={epoch_loss.total:.6f}")
    curve.append(evaluate_loss(pairs, params, cfg))
    return TrainResult(params, curve)


def evaluate_loss(dataset, params: UgcpParams, cfg: UgcpConfig) -> LossBreakdown:
    from .gradients import total_loss

    pairs = _pairs(dataset)
    parts = np.zeros(3)
    for h, y in pairs:
        loss = total_loss(h, y, params, cfg)
        parts += (loss.dice, loss.bce, loss.uq)
    parts /= len(pairs)
    return LossBreakdown.build(*parts, cfg.lambda_uq)
