from .losses import (
    LossConfig,
    bce,
    chamfer_loss,
    deepmapping_loss,
    occupancy_loss,
    occupancy_loss_from_poses,
    pose_loss,
    sample_free_space,
    total_loss,
)
from .mapping import Region, explored_mask, occupancy_probabilities, rasterize_map
from .networks import LNet, LNetConfig, MNet, MNetConfig

__all__ = [
    "LNet",
    "LNetConfig",
    "LossConfig",
    "MNet",
    "MNetConfig",
    "Region",
    "bce",
    "chamfer_loss",
    "deepmapping_loss",
    "explored_mask",
    "occupancy_loss",
    "occupancy_loss_from_poses",
    "occupancy_probabilities",
    "pose_loss",
    "rasterize_map",
    "sample_free_space",
    "total_loss",
]
