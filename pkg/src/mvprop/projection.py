"""Occlusion-aware projection of 3D point sets into camera frames as 2D boxes.

Used both for proposals (class-agnostic) and for labelled ground-truth
segments. Pixel centres sit on integer coordinates, so a point is inside the
image when ``0 <= u <= w - 1`` and ``0 <= v <= h - 1``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import BoundingBox2D, CameraFrame, InvalidInput, PointCloud, project_points


@dataclass(frozen=True)
class VisibilityParams:
    depth_tolerance: float = 0.03
    min_visible_points: int = 50
    min_box_side: float = 10.0

    def __post_init__(self):
        if not (self.depth_tolerance > 0 and self.min_visible_points > 0 and self.min_box_side > 0):
            raise InvalidInput("visibility parameters must be positive")


@dataclass(frozen=True)
class ObjectSegment:
    label: str
    points: PointCloud

    def __post_init__(self):
        if not self.label:
            raise InvalidInput("segment label must be nonempty")
        if len(self.points) == 0:
            raise InvalidInput(f"segment {self.label!r} has no points")


@dataclass
class FrameProposals:
    frame_id: str
    boxes: list = field(default_factory=list)          # BoundingBox2D
    proposal_indices: list = field(default_factory=list)

    def __len__(self):
        return len(self.boxes)


def visible_pixels(points, frame: CameraFrame, vis: VisibilityParams):
    """Project world points into ``frame``; returns (u, v, visible mask)."""
    intr = frame.intrinsics
    u, v, z = project_points(intr, frame.pose, points)
    inside = (z > 0) & (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)
    vis_mask = inside.copy()
    if frame.depth is not None and inside.any():
        idx = np.flatnonzero(inside)
        col = np.floor(u[idx] + 0.5).astype(np.int64)
        row = np.floor(v[idx] + 0.5).astype(np.int64)
        d = frame.depth.values[row, col].astype(np.float64) / 1000.0
        occluded = (d > 0) & (z[idx] > d + vis.depth_tolerance)
        vis_mask[idx[occluded]] = False
    return u, v, vis_mask


def _box_from(us, vs, intr, vis, label=None) -> Optional[BoundingBox2D]:
    if len(us) < vis.min_visible_points:
        return None
    x0 = min(max(float(us.min()), 0.0), intr.width)
    x1 = min(max(float(us.max()), 0.0), intr.width)
    y0 = min(max(float(vs.min()), 0.0), intr.height)
    y1 = min(max(float(vs.max()), 0.0), intr.height)
    if x1 - x0 < vis.min_box_side or y1 - y0 < vis.min_box_side:
        return None
    return BoundingBox2D(x0, y0, x1, y1, label)


def project_points_to_box(points, frame: CameraFrame, vis: VisibilityParams = VisibilityParams(),
                          label=None) -> Optional[BoundingBox2D]:
    """Box around the visible projections of ``points``; None when too few
    points are visible or the box is thinner than ``min_box_side``."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        return None
    u, v, m = visible_pixels(pts, frame, vis)
    return _box_from(u[m], v[m], frame.intrinsics, vis, label)


def collapse_duplicates(boxes: np.ndarray, iou_threshold: float = 0.95) -> np.ndarray:
    """Indices of boxes kept when any box overlapping an earlier kept box by
    more than ``iou_threshold`` is dropped (earlier = lower row)."""
    n = len(boxes)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    keep = np.ones(n, dtype=bool)
    for start in range(0, n, 1024):
        stop = min(n, start + 1024)
        M = _iou_matrix_rect(boxes[start:stop], boxes)
        for r in range(stop - start):
            i = start + r
            if keep[i]:
                row = M[r]
                dup = row > iou_threshold
                dup[:i + 1] = False
                keep &= ~dup
    return np.flatnonzero(keep)


def _iou_matrix_rect(a, b):
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    union = area_a[:, None] + area_b[None] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def _project_sets(index_sets, u, v, m, intr, vis):
    """Boxes for many index sets over one projected cloud: (boxes (k, 4), ok)."""
    k = len(index_sets)
    out = np.zeros((k, 4))
    ok = np.zeros(k, dtype=bool)
    if k == 0:
        return out, ok
    sel = [np.asarray(s, dtype=np.int64) for s in index_sets]
    sel = [s[m[s]] for s in sel]
    counts = np.array([len(s) for s in sel])
    has = counts >= vis.min_visible_points
    if not has.any():
        return out, ok
    rows = np.flatnonzero(has)
    cat = np.concatenate([sel[i] for i in rows])
    starts = np.concatenate([[0], np.cumsum(counts[rows])[:-1]])
    uu, vv = u[cat], v[cat]
    box = np.column_stack([np.minimum.reduceat(uu, starts), np.minimum.reduceat(vv, starts),
                           np.maximum.reduceat(uu, starts), np.maximum.reduceat(vv, starts)])
    box[:, [0, 2]] = np.clip(box[:, [0, 2]], 0, intr.width)
    box[:, [1, 3]] = np.clip(box[:, [1, 3]], 0, intr.height)
    wide = ((box[:, 2] - box[:, 0]) >= vis.min_box_side) & ((box[:, 3] - box[:, 1]) >= vis.min_box_side)
    out[rows] = box
    ok[rows[wide]] = True
    return out, ok


def project_proposals(proposals, cloud: PointCloud, frames, vis: VisibilityParams = VisibilityParams(),
                      dedup_iou: float = 0.95, threads: int = 1):
    """Per-frame 2D boxes of each proposal's member points.

    Boxes overlapping an earlier proposal's box in the same frame by more than
    ``dedup_iou`` are dropped, so the lowest proposal index survives.
    """
    n = len(cloud)
    index_sets = []
    for p in proposals:
        idx = np.asarray(p.point_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise InvalidInput("proposal point indices out of range for the cloud")
        index_sets.append(idx)

    def one(frame):
        if not index_sets:
            return FrameProposals(frame.id)
        u, v, m = visible_pixels(cloud.points, frame, vis)
        boxes, ok = _project_sets(index_sets, u, v, m, frame.intrinsics, vis)
        rows = np.flatnonzero(ok)
        kept = rows[collapse_duplicates(boxes[rows], dedup_iou)]
        return FrameProposals(frame.id, [BoundingBox2D(*map(float, boxes[i])) for i in kept],
                              [int(i) for i in kept])

    frames = list(frames)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, frames))
    return [one(f) for f in frames]


def project_annotations(segments, frames, vis: VisibilityParams = VisibilityParams()):
    """Per frame ``(frame_id, [labelled BoundingBox2D])`` for every segment
    visible in that frame."""
    out = []
    for frame in frames:
        boxes = []
        for seg in segments:
            b = project_points_to_box(seg.points, frame, vis, label=seg.label)
            if b is not None:
                boxes.append(b)
        out.append((frame.id, boxes))
    return out
