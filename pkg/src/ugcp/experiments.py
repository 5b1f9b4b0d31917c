"""Phantom-scale comparisons: baseline versus refinement, and the component ablation."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .heads import UgcpConfig, UgcpParams
from .metrics import MetricReport, binarize, evaluate_case
from .phantom import PhantomConfig, make_dataset
from .propagation import refine
from .training import OptConfig, train

ABLATION_ROWS = {
    "none": dict(enable_gamma=False, enable_phi=False, enable_source=False),
    "gamma": dict(enable_gamma=True, enable_phi=False, enable_source=False),
    "gamma+phi": dict(enable_gamma=True, enable_phi=True, enable_source=False),
    "gamma+phi+R": dict(enable_gamma=True, enable_phi=True, enable_source=True),
}


PROTOCOL_THETA = 1.0


def protocol_phantom(seed: int = 1000) -> PhantomConfig:
    """Gap-corrupted 64x64 trees used by the directional experiments."""
    return PhantomConfig(dim=2, extents=(64, 64), n_branches=5, radius_min=1.0, radius_max=3.0,
                         gap_count=2, gap_length=6, noise_sigma=0.1, contrast=1.0,
                         blur_radius=1, feature_blur=2, seed=seed)


def protocol_opt(epochs: int = 500) -> OptConfig:
    """Adam at 1e-3 with cosine decay, weight decay 1e-4 and batches of four."""
    return OptConfig(epochs=epochs, lr=1e-3, weight_decay=1e-4, batch_size=4, cosine=True, shuffle_seed=7)


@dataclass
class ModeResult:
    name: str
    cfg: UgcpConfig
    params: UgcpParams
    reports: list[MetricReport]
    final_loss: float
    seconds: float

    diagonals: list[float] = field(default_factory=list)

    def column(self, key: str) -> np.ndarray:
        """Per-case values; an undefined HD95 (one mask empty) scores as the grid diagonal."""
        vals = [getattr(r, key) for r in self.reports]
        if key == "hd95":
            vals = [d if v is None else v for v, d in zip(vals, self.diagonals)]
        return np.array([np.nan if v is None else v for v in vals], dtype=np.float64)

    def component_error(self) -> np.ndarray:
        return np.array([abs(r.components_pred - r.components_gt) for r in self.reports], dtype=np.float64)


def evaluate(samples, params: UgcpParams, cfg: UgcpConfig) -> list[MetricReport]:
    out = []
    for smp in samples:
        res = refine(smp.h, params, cfg)
        out.append(evaluate_case(binarize(res.pi[1]), smp.gt, case=f"seed{smp.seed}"))
    return out


def run_mode(name, cfg: UgcpConfig, train_set, eval_set, opt: OptConfig, log=None) -> ModeResult:
    t0 = time.perf_counter()
    fit = train(train_set, cfg, opt)
    reports = evaluate(eval_set, fit.params, cfg)
    diagonals = [float(np.linalg.norm(np.asarray(smp.gt.shape) - 1)) for smp in eval_set]
    res = ModeResult(name, cfg, fit.params, reports, fit.curve[-1].total, time.perf_counter() - t0, diagonals)
    if log:
        log(f"{name}: loss {fit.curve[0].total:.4f} -> {res.final_loss:.4f}, "
            f"median clDice {np.nanmedian(res.column('cldice')):.4f}, "
            f"median HD95 {np.nanmedian(res.column('hd95')):.3f}, {res.seconds:.0f}s")
    return res


@dataclass
class Comparison:
    baseline: ModeResult
    ugcp: ModeResult
    deltas: dict = field(default_factory=dict)

    def __post_init__(self):
        b, u = self.baseline, self.ugcp
        self.deltas = {
            "median_delta_dsc": float(np.nanmedian(u.column("dsc") - b.column("dsc"))),
            "median_delta_cldice": float(np.nanmedian(u.column("cldice") - b.column("cldice"))),
            "median_delta_hd95": float(np.nanmedian(u.column("hd95") - b.column("hd95"))),
            "median_component_error_reduction": float(np.median(b.component_error() - u.component_error())),
            "median_component_error_baseline": float(np.median(b.component_error())),
            "median_component_error_ugcp": float(np.median(u.component_error())),
        }


def datasets(n_train=32, n_eval=20, phantom: PhantomConfig | None = None):
    phantom = phantom or protocol_phantom()
    train_set = make_dataset(n_train, phantom)
    eval_set = make_dataset(n_eval, phantom.replace(seed=phantom.seed + 10_000))
    return train_set, eval_set


def directional(n_train=32, n_eval=20, epochs=500, seed=0, log=None, data=None,
                theta=PROTOCOL_THETA) -> Comparison:
    """Baseline (no refinement, base loss) versus T=2 refinement with the evidential term."""
    train_set, eval_set = data or datasets(n_train, n_eval)
    opt = protocol_opt(epochs)
    base_cfg = UgcpConfig.for_dim(2, T=0, lambda_uq=0.0, seed=seed)
    ugcp_cfg = UgcpConfig.for_dim(2, T=2, theta=theta, seed=seed)
    base = run_mode("baseline T=0", base_cfg, train_set, eval_set, opt, log)
    ugcp = run_mode("UGCP T=2", ugcp_cfg, train_set, eval_set, opt, log)
    return Comparison(base, ugcp)


def ablation(n_train=32, n_eval=20, epochs=500, seed=0, log=None, data=None, reuse: dict | None = None,
             theta=PROTOCOL_THETA) -> dict:
    """The four gate/modulation/source rows at T=2; ``reuse`` maps row names to finished results."""
    train_set, eval_set = data or datasets(n_train, n_eval)
    opt = protocol_opt(epochs)
    out = {}
    for name, flags in ABLATION_ROWS.items():
        if reuse and name in reuse:
            out[name] = reuse[name]
            continue
        cfg = UgcpConfig.for_dim(2, T=2, theta=theta, seed=seed, **flags)
        out[name] = run_mode(name, cfg, train_set, eval_set, opt, log)
    return out


def ablation_table(rows: dict) -> list[dict]:
    table = []
    for name, res in rows.items():
        table.append({
            "row": name,
            "gamma": res.cfg.enable_gamma, "phi": res.cfg.enable_phi, "R": res.cfg.enable_source,
            "dsc_median": float(np.nanmedian(res.column("dsc"))),
            "cldice_median": float(np.nanmedian(res.column("cldice"))),
            "hd95_median": float(np.nanmedian(res.column("hd95"))),
            "dsc_mean": float(np.nanmean(res.column("dsc"))),
            "cldice_mean": float(np.nanmean(res.column("cldice"))),
            "hd95_mean": float(np.nanmean(res.column("hd95"))),
        })
    return table
