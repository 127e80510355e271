"""Segmentation network with gated skip paths and text-guided Gaussian attention."""

from .backbone import GRUNet, ModelConfig
from .losses import bce_loss, dice_loss, hybrid_loss, metrics

__all__ = ["GRUNet", "ModelConfig", "bce_loss", "dice_loss", "hybrid_loss", "metrics"]
__version__ = "0.1.0"
