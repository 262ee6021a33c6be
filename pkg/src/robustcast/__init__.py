"""Shift-robust precipitation nowcasting toolkit: D4 augmentation policy,
test-time geometric ensembles and spatial-temporal smoothness losses."""
from .estimator import NowcastSegmenter
from .geometry import PAPER_POLICY, GeomTransform, apply, compose, inverse
from .losses import LossConfig, total_loss
from .tensor_core import GridLayout, read_tensor, write_tensor
from .tta import EnsembleConfig, ensemble_predict

__version__ = "0.1.0"

__all__ = [
    "EnsembleConfig",
    "GeomTransform",
    "GridLayout",
    "LossConfig",
    "NowcastSegmenter",
    "PAPER_POLICY",
    "apply",
    "compose",
    "ensemble_predict",
    "inverse",
    "read_tensor",
    "total_loss",
    "write_tensor",
]
