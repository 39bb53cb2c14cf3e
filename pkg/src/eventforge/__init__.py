"""Ground-truth-free data factory for event-based stereo."""

from .geometry import (
    SENTINEL,
    CameraModel,
    Pose,
    StereoRig,
    backproject,
    depth_to_disparity,
    disparity_to_depth,
    project,
    reorthogonalize,
    transform,
)

__version__ = "0.1.0"

__all__ = [
    "SENTINEL",
    "CameraModel",
    "Pose",
    "StereoRig",
    "backproject",
    "depth_to_disparity",
    "disparity_to_depth",
    "project",
    "reorthogonalize",
    "transform",
]
