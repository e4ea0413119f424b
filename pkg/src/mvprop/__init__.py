"""Multi-view 3D object proposals from RGB-D frames with SfM poses."""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .geometry import (BoundingBox2D, CameraFrame, DepthMap, Intrinsics, InvalidInput,  # noqa: E402
                       PointCloud, Pose)

__all__ = ["BACKEND", "BoundingBox2D", "CameraFrame", "DepthMap", "Intrinsics", "InvalidInput",
           "PointCloud", "Pose", "__version__"]
