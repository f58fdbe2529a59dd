"""Unfolded reweighted l1-l1 recurrent networks for sequential sparse recovery."""

from .core import DimensionError
from .model import ModelParams, Variant, forward, forward_frames, init_params, load_checkpoint, save_checkpoint
from .prox import prox_rw, prox_rw_array, soft_threshold
from .solvers import algorithm1, fista, ista

__all__ = [
    "DimensionError", "ModelParams", "Variant", "algorithm1", "fista", "forward", "forward_frames",
    "init_params", "ista", "load_checkpoint", "prox_rw", "prox_rw_array", "save_checkpoint",
    "soft_threshold",
]
__version__ = "0.1.0"
