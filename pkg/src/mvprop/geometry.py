"""Core geometric types and pinhole camera math.

Conventions: poses map camera coordinates to world coordinates
(``p_world = R @ p_cam + t``); pixel centres sit on integer coordinates with
``u`` along columns and ``v`` along rows; depth maps hold integer millimetres
with 0 marking an invalid pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ORTHO_TOL = 1e-6


class InvalidInput(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    source_frame: Optional[str] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            cols = np.asarray(self.colors)
            if cols.shape != pts.shape:
                raise InvalidInput(f"colors shape {cols.shape} does not match points {pts.shape}")
            if cols.size and (cols.min() < 0 or cols.max() > 255):
                raise InvalidInput("colors must lie in 0..255")
            object.__setattr__(self, "colors", cols.astype(np.uint8))

    def __len__(self):
        return len(self.points)

    def subset(self, indices) -> "PointCloud":
        cols = None if self.colors is None else self.colors[indices]
        return PointCloud(self.points[indices], cols, self.source_frame)


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidInput("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or np.linalg.det(R) <= 0:
            raise InvalidInput("pose rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def scaled(self, alpha: float) -> "Pose":
        """Same rotation, translation multiplied by ``alpha``."""
        return Pose(self.rotation, self.translation * alpha)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInput("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise InvalidInput("image size must be positive")

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class DepthMap:
    """Row-major depth grid in millimetres, shape (height, width)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise InvalidInput("depth values must be a 2-D grid")
        if v.size and (v.min() < 0 or v.max() > 65535):
            raise InvalidInput("depth values must lie in 0..65535")
        object.__setattr__(self, "values", v.astype(np.uint16))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def meters(self) -> np.ndarray:
        return self.values.astype(np.float64) / 1000.0


@dataclass(frozen=True)
class CameraFrame:
    id: str
    intrinsics: Intrinsics
    pose: Pose
    depth: Optional[DepthMap] = None
    rgb_file: Optional[str] = None


@dataclass
class BoundingBox2D:
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    label: Optional[str] = None

    def __post_init__(self):
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise InvalidInput(f"inverted box {self.as_tuple()}")

    def as_tuple(self):
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)


def project_points(intr: Intrinsics, pose: Pose, points):
    """Vectorised world-to-image projection.

    Returns ``(u, v, depth)`` arrays; entries with depth <= 0 are meaningless
    and must be masked by the caller.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = (pts - pose.translation) @ pose.rotation  # R^T (p - t), row-wise
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    return u, v, z


def project_point(intr: Intrinsics, pose: Pose, p):
    """Project one world point; ``None`` when it is not in front of the camera."""
    u, v, z = project_points(intr, pose, p)
    if not z[0] > 0:
        return None
    return float(u[0]), float(v[0]), float(z[0])


def backproject_depth(intr: Intrinsics, depth: DepthMap) -> PointCloud:
    """Camera-frame cloud with one point per valid pixel, row-major order."""
    if depth.width != intr.width or depth.height != intr.height:
        raise InvalidInput(
            f"depth map is {depth.width}x{depth.height}, intrinsics expect {intr.width}x{intr.height}")
    rows, cols = np.nonzero(depth.values)
    z = depth.values[rows, cols].astype(np.float64) / 1000.0
    x = (cols - intr.cx) * z / intr.fx
    y = (rows - intr.cy) * z / intr.fy
    return PointCloud(np.column_stack([x, y, z]))


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    pts = cloud.points @ pose.rotation.T + pose.translation
    return PointCloud(pts, cloud.colors, cloud.source_frame)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Replace the points of each occupied voxel by their centroid.

    Voxels are anchored at the world origin and emitted in sorted key order,
    so the result does not depend on input order beyond floating-point sums.
    """
    if voxel_size <= 0 or len(cloud) == 0:
        return cloud
    ijk = np.floor(cloud.points / voxel_size).astype(np.int64)
    ijk -= ijk.min(axis=0)
    span = ijk.max(axis=0) + 1
    if int(span[0]) * int(span[1]) * int(span[2]) < 2 ** 62:
        keys = (ijk[:, 0] * span[1] + ijk[:, 1]) * span[2] + ijk[:, 2]
        _, inverse = np.unique(keys, return_inverse=True)
    else:
        _, inverse = np.unique(ijk, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    n = int(inverse.max()) + 1
    counts = np.bincount(inverse, minlength=n).astype(np.float64)
    pts = np.column_stack([np.bincount(inverse, weights=cloud.points[:, k], minlength=n)
                           for k in range(3)]) / counts[:, None]
    cols = None
    if cloud.colors is not None:
        cols = np.column_stack([np.bincount(inverse, weights=cloud.colors[:, k].astype(np.float64),
                                            minlength=n) for k in range(3)]) / counts[:, None]
        cols = np.clip(np.rint(cols), 0, 255).astype(np.uint8)
    return PointCloud(pts, cols, cloud.source_frame)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose at ``eye`` looking at ``target`` (camera z forward, y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(fwd)
    if norm == 0:
        raise InvalidInput("camera looks along a zero direction")
    fwd /= norm
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return Pose(np.column_stack([right, down, fwd]), eye)
