"""Uncertainty-gated conservative propagation of segmentation logits on 2D/3D grids."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import (ArrayFileError, ConfigError, DomainError, NumericError, TrainingError, UgcpError,
                     UndefinedMetricError)
from .evidence import alpha_from_logits, expected_prob, uncertainty
from .field import GridField, GridShape, neighbors
from .heads import UgcpConfig, UgcpParams, init_params
from .propagation import RefineResult, refine, ugcp_step
from .gradients import loss_and_grad, total_loss
from .training import OptConfig, train
from .metrics import cl_dice, dice, evaluate_case, evaluate_cases, hd95
from .phantom import PhantomConfig, make_dataset, make_sample
from .windows import plan_windows, sliding_refine
from .arrayio import load_params, read_array, save_params, write_array

__all__ = [
    "ArrayFileError", "ConfigError", "DomainError", "NumericError", "TrainingError", "UgcpError",
    "UndefinedMetricError", "alpha_from_logits", "expected_prob", "uncertainty", "GridField", "GridShape",
    "neighbors", "UgcpConfig", "UgcpParams", "init_params", "RefineResult", "refine", "ugcp_step",
    "loss_and_grad", "total_loss", "OptConfig", "train", "cl_dice", "dice", "evaluate_case", "evaluate_cases", "hd95",
    "PhantomConfig", "make_dataset", "make_sample", "plan_windows", "sliding_refine", "load_params",
    "read_array", "save_params", "write_array",
]
