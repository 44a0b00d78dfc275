"""Monocular 3D detection heads with sequential feature association and depth hints,
on a small numpy autodiff engine."""

from .geometry import Box2D, Box3D, CameraIntrinsics, DimensionTemplate, KeypointEstimate
from .losses import LossConfig, total_loss
from .model import FADNet, ModelConfig, NetworkOutput

__version__ = "0.1.0"
