"""Support-surface detection with a deterministic 3D Hough transform and
removal of the largest detected planes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from .geometry import InvalidInput, PointCloud


@dataclass(frozen=True)
class HoughParams:
    theta_bins: int = 90          # polar angle over [0, pi/2]
    phi_bins: int = 180           # azimuth over [0, 2 pi)
    rho_resolution: float = 0.02
    inlier_threshold: float = 0.01
    min_inliers: Optional[int] = None   # None: min_inlier_fraction of the cloud
    min_inlier_fraction: float = 0.005
    max_planes: int = 64
    vote_budget: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if min(self.theta_bins, self.phi_bins, self.max_planes, self.vote_budget) <= 0:
            raise InvalidInput("Hough bin counts, max_planes and vote_budget must be positive")
        if not (self.rho_resolution > 0 and self.inlier_threshold > 0):
            raise InvalidInput("rho_resolution and inlier_threshold must be positive")
        if self.min_inliers is not None and self.min_inliers <= 0:
            raise InvalidInput("min_inliers must be positive")

    def min_support(self, n_points: int) -> int:
        if self.min_inliers is not None:
            return int(self.min_inliers)
        return max(1, math.ceil(self.min_inlier_fraction * n_points))


@dataclass(frozen=True)
class PlaneModel:
    normal: np.ndarray
    rho: float
    inlier_indices: np.ndarray

    @property
    def inlier_count(self) -> int:
        return len(self.inlier_indices)

    def distance(self, points) -> np.ndarray:
        return np.abs(np.asarray(points) @ self.normal - self.rho)

    def sort_key(self):
        return (-self.inlier_count, self.rho, tuple(self.normal.tolist()))


def canonical_plane(normal, rho):
    """Unit normal and offset with rho >= 0 (or the first nonzero normal
    component positive for planes through the origin)."""
    n = np.asarray(normal, dtype=np.float64)
    norm = np.linalg.norm(n)
    n = n / norm
    rho = float(rho) / norm
    flip = rho < 0
    if abs(rho) < 1e-12:
        nz = n[np.abs(n) > 1e-12]
        flip = bool(nz.size and nz[0] < 0)
    if flip:
        n, rho = -n, -rho
    return n, rho


def hough_directions(theta_bins: int, phi_bins: int) -> np.ndarray:
    """Unit normals at the accumulator cell centres (upper hemisphere)."""
    theta = (np.arange(theta_bins) + 0.5) * (math.pi / 2) / theta_bins
    phi = (np.arange(phi_bins) + 0.5) * (2 * math.pi) / phi_bins
    T, P = np.meshgrid(theta, phi, indexing="ij")
    return np.column_stack([(np.sin(T) * np.cos(P)).ravel(),
                            (np.sin(T) * np.sin(P)).ravel(),
                            np.cos(T).ravel()])


def fit_plane(points: np.ndarray):
    """Total least-squares plane: (unit normal, rho) in canonical form."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    return canonical_plane(n, n @ c)


def _refine(points, alive_idx, n0, rho0, params: HoughParams):
    pts = points[alive_idx]
    d = np.abs(pts @ n0 - rho0)
    sel = d <= params.rho_resolution
    if sel.sum() < 3:
        return None
    band = params.rho_resolution
    n, rho = n0, rho0
    for _ in range(20):
        n, rho = fit_plane(pts[sel])
        band = max(params.inlier_threshold, band / 2)
        new = np.abs(pts @ n - rho) <= band
        if new.sum() < 3:
            return None
        if band == params.inlier_threshold and np.array_equal(new, sel):
            break
        sel = new
    inl = np.abs(pts @ n - rho) <= params.inlier_threshold
    return n, rho, alive_idx[inl]


def detect_planes(cloud, params: HoughParams = HoughParams(), threads: int = 1):
    """Iteratively extract planes: vote, take the accumulator peak, refine by
    least squares, drop its inliers, repeat.

    Returns planes sorted by inlier count (descending), then rho, then normal.
    """
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(points)
    if n == 0:
        raise InvalidInput("cannot detect planes in an empty cloud")
    min_support = params.min_support(n)

    if n > params.vote_budget:
        rng = np.random.default_rng(params.seed)
        vote_idx = np.sort(rng.choice(n, size=params.vote_budget, replace=False))
    else:
        vote_idx = np.arange(n)
    vote_scale = len(vote_idx) / n
    center = points[vote_idx].mean(axis=0)
    vpts = points[vote_idx] - center
    radius = float(np.sqrt((vpts ** 2).sum(axis=1).max()))
    rho_min = -radius - params.rho_resolution
    n_rho = int(math.ceil((2 * radius + 2 * params.rho_resolution) / params.rho_resolution)) + 1

    dirs = hough_directions(params.theta_bins, params.phi_bins)
    acc = np.zeros((len(dirs), n_rho), dtype=np.int32)
    _backend.hough_vote(vpts, dirs, rho_min, params.rho_resolution, acc, 1, threads)
    blocked = np.zeros(acc.shape, dtype=bool)

    alive = np.ones(n, dtype=bool)
    vote_alive = np.ones(len(vote_idx), dtype=bool)
    planes = []
    attempts = 0
    while len(planes) < params.max_planes and attempts < 4 * params.max_planes:
        attempts += 1
        masked = np.where(blocked, -1, acc)
        flat = int(np.argmax(masked))
        peak = int(masked.flat[flat])
        if peak < min_support * vote_scale or peak <= 0:
            break
        k, b = divmod(flat, n_rho)
        n0 = dirs[k]
        rho0 = rho_min + (b + 0.5) * params.rho_resolution + float(n0 @ center)
        alive_idx = np.flatnonzero(alive)
        ref = _refine(points, alive_idx, n0, rho0, params)
        if ref is None or len(ref[2]) < min_support:
            blocked[k, b] = True
            continue
        normal, rho, inliers = ref
        planes.append(PlaneModel(normal, rho, inliers))
        alive[inliers] = False
        gone = vote_alive & ~alive[vote_idx]
        if gone.any():
            _backend.hough_vote(vpts[gone], dirs, rho_min, params.rho_resolution, acc, -1, threads)
            vote_alive &= ~gone
    planes.sort(key=PlaneModel.sort_key)
    return planes


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def planes_to_remove(n_planes: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise InvalidInput("plane fraction must lie in (0, 1]")
    if n_planes == 0:
        return 0
    return min(n_planes, max(1, round_half_away(fraction * n_planes)))


def removal_mask(n_points: int, planes, fraction: float) -> np.ndarray:
    """Boolean mask of points that survive removing the top ``fraction`` of planes."""
    keep = np.ones(n_points, dtype=bool)
    for pl in planes[:planes_to_remove(len(planes), fraction)]:
        keep[pl.inlier_indices] = False
    return keep


def remove_planes(cloud: PointCloud, planes, fraction: float) -> PointCloud:
    """Drop the inliers of the largest ``max(1, round(fraction * len(planes)))``
    planes, keeping the remaining points in their original order."""
    if not planes:
        return cloud
    return cloud.subset(np.flatnonzero(removal_mask(len(cloud), planes, fraction)))


def planes_to_json(planes, with_indices=True):
    out = []
    for p in planes:
        d = {"normal": p.normal.tolist(), "rho": p.rho, "inlier_count": p.inlier_count}
        if with_indices:
            d["inlier_indices"] = p.inlier_indices.tolist()
        out.append(d)
    return out


def planes_from_json(doc, cloud: Optional[PointCloud] = None, inlier_threshold: float = 0.01):
    """Rebuild PlaneModels; without stored indices the inliers are recomputed
    sequentially (each point goes to the first plane within the threshold)."""
    planes = []
    taken = None if cloud is None else np.zeros(len(cloud), dtype=bool)
    for d in doc:
        normal, rho = canonical_plane(d["normal"], d["rho"])
        if "inlier_indices" in d:
            idx = np.asarray(d["inlier_indices"], dtype=np.int64)
        elif cloud is not None:
            near = (np.abs(cloud.points @ normal - rho) <= inlier_threshold) & ~taken
            idx = np.flatnonzero(near)
            taken[idx] = True
        else:
            raise InvalidInput("plane entries lack inlier_indices and no cloud was given")
        planes.append(PlaneModel(normal, rho, idx))
    return planes
