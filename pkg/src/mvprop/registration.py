"""Metric scale recovery for an up-to-scale SfM reconstruction, and fusion of
registered depth frames into a single world-frame cloud."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import InvalidInput, PointCloud, backproject_depth, transform_cloud, voxel_downsample


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class DepthCorrespondence:
    sfm_depth: float
    metric_depth: float

    def __post_init__(self):
        for v in (self.sfm_depth, self.metric_depth):
            if not (math.isfinite(v) and v > 0):
                raise InvalidInput("correspondence depths must be positive and finite")


@dataclass(frozen=True)
class ScaleEstimate:
    alpha: float
    sample_count: int
    per_frame: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FusionParams:
    voxel_size: float = 0.005
    percentile_low: float = 10.0
    percentile_high: float = 90.0

    def __post_init__(self):
        if self.voxel_size < 0:
            raise InvalidInput("voxel_size must be >= 0")
        if not (0 <= self.percentile_low < self.percentile_high <= 100):
            raise InvalidInput("need 0 <= percentile_low < percentile_high <= 100")


def nearest_rank(sorted_values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile of an ascending array."""
    n = len(sorted_values)
    rank = max(1, math.ceil(p * n / 100.0 - 1e-9))
    return float(sorted_values[min(rank, n) - 1])


def _as_arrays(pairs):
    if isinstance(pairs, np.ndarray):
        arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
        Z, z = arr[:, 0], arr[:, 1]
    else:
        pairs = list(pairs)
        Z = np.array([p.sfm_depth for p in pairs], dtype=np.float64)
        z = np.array([p.metric_depth for p in pairs], dtype=np.float64)
    bad = ~(np.isfinite(Z) & np.isfinite(z) & (Z > 0) & (z > 0))
    if bad.any():
        raise InvalidInput(f"{int(bad.sum())} correspondences are not positive and finite")
    return Z, z


def _median(values: np.ndarray) -> float:
    v = np.sort(values)
    n = len(v)
    mid = n // 2
    if n % 2:
        return float(v[mid])
    return float((v[mid - 1] + v[mid]) / 2.0)


def estimate_scale(pairs, params: FusionParams = FusionParams(), frame_ids=None) -> ScaleEstimate:
    """Median of metric/SfM depth ratios over pairs whose SfM depth lies in the
    configured percentile band.

    ``pairs`` is a sequence of DepthCorrespondence or an (n, 2) array of
    ``(Z, z)`` rows. With ``frame_ids`` the per-frame medians (same filtering
    band) are reported alongside the global value.
    """
    Z, z = _as_arrays(pairs)
    if len(Z) == 0:
        raise EstimationError("no correspondences")
    srt = np.sort(Z)
    lo = nearest_rank(srt, params.percentile_low) if params.percentile_low > 0 else -math.inf
    hi = nearest_rank(srt, params.percentile_high)
    keep = (Z >= lo) & (Z <= hi)
    if not keep.any():
        raise EstimationError("percentile filter removed every correspondence")
    alpha = _median(z[keep] / Z[keep])
    per_frame = {}
    if frame_ids is not None:
        fids = np.asarray(frame_ids, dtype=object)
        for fid in dict.fromkeys(frame_ids):
            m = keep & (fids == fid)
            if m.any():
                per_frame[str(fid)] = _median(z[m] / Z[m])
    return ScaleEstimate(alpha, int(keep.sum()), per_frame)


def fuse_frames(frames, alpha, params: FusionParams = FusionParams(), threads: int = 1) -> PointCloud:
    """Back-project every frame, move it to the world with its translation
    rescaled by ``alpha``, concatenate, and voxel-downsample."""
    a = alpha.alpha if isinstance(alpha, ScaleEstimate) else float(alpha)
    if not a > 0:
        raise InvalidInput("alpha must be positive")
    frames = list(frames)
    if not frames:
        return PointCloud(np.empty((0, 3)))
    intr = frames[0].intrinsics
    if any(f.intrinsics != intr for f in frames):
        raise InvalidInput("all frames must share one set of intrinsics")

    def one(frame):
        cam = backproject_depth(frame.intrinsics, frame.depth)
        return transform_cloud(cam, frame.pose.scaled(a)).points

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(one, frames))
    else:
        parts = [one(f) for f in frames]
    fused = PointCloud(np.concatenate(parts, axis=0))
    return voxel_downsample(fused, params.voxel_size)


def fusion_report(estimate: Optional[ScaleEstimate], fused: PointCloud) -> dict:
    rep = {"alpha": None, "sample_count": 0, "fused_points": len(fused), "per_frame_alpha": {}}
    if estimate is not None:
        rep.update(alpha=estimate.alpha, sample_count=estimate.sample_count,
                   per_frame_alpha=dict(estimate.per_frame))
    return rep
