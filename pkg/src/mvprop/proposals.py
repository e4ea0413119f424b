"""3D object proposals: plane-filtered clouds, mean-shift clustering over a
radius sweep, and outlier-rejecting axis-aligned cuboids."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import _backend
from .geometry import CameraFrame, InvalidInput, PointCloud, backproject_depth, voxel_downsample
from .planes import HoughParams, detect_planes, planes_to_remove, removal_mask

DEFAULT_RADII = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DEFAULT_FRACTIONS = (0.50, 0.33, 0.25, 0.15, 0.10)


@dataclass(frozen=True)
class Cluster:
    point_indices: np.ndarray
    mode: np.ndarray

    def __len__(self):
        return len(self.point_indices)


@dataclass(frozen=True)
class Cuboid3D:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise InvalidInput("cuboid min_corner exceeds max_corner")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.max_corner - self.min_corner))

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points)
        return np.all((p >= self.min_corner) & (p <= self.max_corner), axis=1)

    def corners(self) -> np.ndarray:
        lo, hi = self.min_corner, self.max_corner
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                         for z in (lo[2], hi[2])])


@dataclass(frozen=True)
class Proposal3D:
    cuboid: Cuboid3D
    point_indices: np.ndarray
    provenance: tuple  # (plane_fraction, radius)

    @property
    def objective(self) -> float:
        return self.cuboid.volume / len(self.point_indices)


@dataclass(frozen=True)
class ProposalParams:
    radii: tuple = DEFAULT_RADII
    plane_fractions: tuple = DEFAULT_FRACTIONS
    coverage: float = 0.9
    min_cluster_size: int = 50
    merge_iou3d: float = 0.7
    max_seeds: int = 20_000

    def __post_init__(self):
        if len(self.radii) == 0 or any(not r > 0 for r in self.radii):
            raise InvalidInput("radii must be a nonempty list of positive values")
        if len(self.plane_fractions) == 0 or any(not 0 < f <= 1 for f in self.plane_fractions):
            raise InvalidInput("plane_fractions must be a nonempty list in (0, 1]")
        if not 0 < self.coverage <= 1:
            raise InvalidInput("coverage must lie in (0, 1]")
        if self.min_cluster_size < 1 or self.max_seeds < 1:
            raise InvalidInput("min_cluster_size and max_seeds must be positive")
        if not 0 <= self.merge_iou3d <= 1:
            raise InvalidInput("merge_iou3d must lie in [0, 1]")


# ---------------------------------------------------------------- mean shift

def merge_modes(modes: np.ndarray, weights: np.ndarray, radius: float):
    """Group converged positions closer than radius/2 (transitively).

    Returns (labels, merged_modes) with labels indexing merged_modes.

    Thousands of seeds usually land on a handful of modes, so enumerating all
    close pairs is quadratic in memory. Positions sharing a grid cell whose
    diagonal is below radius/2 are linked outright; between cells only the
    closest member pair decides.
    """
    m = len(modes)
    half = radius / 2.0
    side = 0.99 * half / math.sqrt(3.0)
    keys = np.floor((modes - modes.min(axis=0)) / side).astype(np.int64)
    _, cell = np.unique(keys, axis=0, return_inverse=True)
    cell = cell.reshape(-1)
    n_cells = int(cell.max()) + 1
    order = np.argsort(cell, kind="stable")
    bounds = np.searchsorted(cell[order], np.arange(n_cells + 1))
    members = [order[bounds[c]:bounds[c + 1]] for c in range(n_cells)]
    lo = np.array([modes[g].min(axis=0) for g in members])
    hi = np.array([modes[g].max(axis=0) for g in members])
    centre = (lo + hi) / 2
    reach = np.linalg.norm(hi - lo, axis=1).max() / 2
    cand = cKDTree(centre).query_pairs(half + 2 * reach, output_type="ndarray")
    rows, cols = [], []
    trees = {}
    for a, b in cand:
        # axis gap between the two cells' member extents bounds the distance
        gap = np.maximum(0.0, np.maximum(lo[a] - hi[b], lo[b] - hi[a]))
        if gap @ gap >= half * half:
            continue
        if len(members[a]) < len(members[b]):
            a, b = b, a
        if a not in trees:
            trees[a] = cKDTree(modes[members[a]])
        d, _ = trees[a].query(modes[members[b]], k=1)
        if (d < half).any():
            rows.append(a)
            cols.append(b)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_cells, n_cells))
    n_comp, cell_label = connected_components(graph, directed=False)
    labels = cell_label[cell]
    w = weights.astype(np.float64)
    tot = np.bincount(labels, weights=w, minlength=n_comp)
    merged = np.column_stack([np.bincount(labels, weights=w * modes[:, k], minlength=n_comp)
                              for k in range(3)]) / tot[:, None]
    return labels, merged


def seed_indices(n: int, max_seeds: int) -> np.ndarray:
    k = max(1, math.ceil(n / max_seeds))
    return np.arange(0, n, k)


def mean_shift(cloud, radius: float, max_seeds: int = 20_000, tol: float = 1e-4,
               max_iter: int = 100, threads: int = 1):
    """Flat-kernel mean shift.

    Seeds are every k-th point (k chosen so there are at most ``max_seeds``);
    points that are not seeds follow their nearest seed. Clusters are returned
    largest first, ties broken by mode coordinates.
    """
    if not radius > 0:
        raise InvalidInput("radius must be positive")
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(points)
    if n == 0:
        return []
    sidx = seed_indices(n, max_seeds)
    modes, _ = _backend.mean_shift_converge(points, points[sidx], radius, tol, max_iter, threads)
    if len(sidx) == n:
        owner = np.arange(n)
    else:
        _, owner = cKDTree(points[sidx]).query(points)
    weights = np.bincount(owner, minlength=len(sidx))
    labels, merged = merge_modes(modes, weights, radius)
    point_label = labels[owner]
    sizes = np.bincount(point_label, minlength=len(merged))
    order = sorted((c for c in range(len(merged)) if sizes[c]),
                   key=lambda c: (-sizes[c], tuple(merged[c])))
    return [Cluster(np.flatnonzero(point_label == c), merged[c]) for c in order]


# ------------------------------------------------------------- cuboid fitting

def _pick(counts, tlo, thi, need, rel_tie):
    """Index of the best feasible trial box (lowest objective, then more
    points, then first), with its (objective, count); None if none is feasible."""
    feas = counts >= need
    if not feas.any():
        return None
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(feas, np.prod(thi - tlo, axis=1) / np.maximum(counts, 1), np.inf)
    fmin = f.min()
    near = feas & (f <= fmin + rel_tie * fmin)
    c = np.where(near, counts, -1)
    i = int(np.argmax(c))
    return i, float(f[i]), int(counts[i])


def _improves(f, c, best, count, rel_tie):
    return f < best - rel_tie * best or (abs(f - best) <= rel_tie * best and c > count)


class _Search:
    """State shared by the polling phases of one cuboid fit."""

    def __init__(self, pts, need, rel_tie):
        self.pts = pts
        self.need = need
        self.rel_tie = rel_tie
        self.by_axis = [pts[np.argsort(pts[:, ax], kind="stable")] for ax in range(3)]

    def count(self, lo, hi):
        return int(np.all((self.pts >= lo) & (self.pts <= hi), axis=1).sum())

    def score(self, lo, hi):
        c = self.count(lo, hi)
        return float(np.prod(hi - lo)) / c, c

    def poll(self, groups, best, count):
        """Best improving box over groups of (los, his) trials, or None.

        Trials are grouped so each group's boxes share most of their points,
        which keeps the per-box work in ``box_stats`` to the group's shell."""
        cs, ls, hs = [], [], []
        for los, his in groups:
            ok = np.all(los <= his, axis=1)
            if ok.any():
                c, l, h = _backend.box_stats(self.pts, los[ok], his[ok])
                cs.append(c)
                ls.append(l)
                hs.append(h)
        if not cs:
            return None
        counts, tlo, thi = np.concatenate(cs), np.concatenate(ls), np.concatenate(hs)
        got = _pick(counts, tlo, thi, self.need, self.rel_tie)
        if got is None:
            return None
        i, f, c = got
        if _improves(f, c, best, count, self.rel_tie):
            return f, c, tlo[i].copy(), thi[i].copy()
        return None

    def continuous(self, lo, hi, min_step):
        """Compass polling in (min corner, max corner) space: shift, scale and
        single-face moves, steps from 10% of the extent, halved on failure."""
        best, count = self.score(lo, hi)
        step = 0.1 * (hi - lo)
        eye = np.eye(3)
        zero = np.zeros(3)
        d_lo, d_hi = [], []
        for ax in range(3):
            e = eye[ax]
            for a, b in ((e, e), (-e, -e), (-e, e), (e, -e), (e, zero), (-e, zero), (zero, e), (zero, -e)):
                d_lo.append(a)
                d_hi.append(b)
        d_lo = np.array(d_lo)
        d_hi = np.array(d_hi)
        while np.any(step >= min_step):
            s = np.where(step >= min_step, step, 0.0)
            moved = np.any((d_lo * s != 0) | (d_hi * s != 0), axis=1)
            res = self.poll([((lo + d_lo * s)[moved], (hi + d_hi * s)[moved])], best, count)
            if res is None:
                step = step / 2
            else:
                best, count, lo, hi = res
        return lo, hi, best, count

    def line_search(self, lo, hi, ax, side):
        """Best position for one face with the other five fixed.

        Candidates are the coordinates of the points the other faces admit;
        suffix extrema of those points (sorted along ``ax``) give every
        candidate's count and tightened box at once.
        """
        counts, smin, smax = _backend.face_sweep(self.by_axis[ax], lo, hi, ax, side, self.need)
        if len(counts) == 0:
            return None
        got = _pick(counts, smin, smax, self.need, self.rel_tie)
        if got is None:
            return None
        i, f, cnt = got
        return f, cnt, smin[i].copy(), smax[i].copy()

    def face_offsets(self, lo, hi, k):
        """Per face (ax, side): the next 1..k distinct point coordinates
        inward and outward."""
        pts = self.pts
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        out = []
        for ax in range(3):
            inc = np.unique(pts[inside, ax])
            col = pts[:, ax]
            below = np.unique(col[col < lo[ax]])[::-1][:k]
            above = np.unique(col[col > hi[ax]])[:k]
            out.append((ax, 0, list(inc[1:k + 1]) + list(below)))
            out.append((ax, 1, list(inc[::-1][1:k + 1]) + list(above)))
        return out

    def discrete(self, lo, hi, best, count, k):
        """Coordinate descent over faces: each face jumps to its best point
        coordinate; when no single face improves, pairs of faces take small
        joint steps so trimming can shift from one face to another."""
        while True:
            res = None
            for ax in range(3):
                for side in range(2):
                    got = self.line_search(lo, hi, ax, side)
                    if got is None:
                        continue
                    f, c, tlo, thi = got
                    cur = res[:2] if res is not None else (best, count)
                    if _improves(f, c, cur[0], cur[1], self.rel_tie):
                        res = got
            if res is None:
                near = self.face_offsets(lo, hi, k)
                groups = []
                for i in range(len(near)):
                    ax1, s1, v1 = near[i]
                    for j in range(i + 1, len(near)):
                        ax2, s2, v2 = near[j]
                        if not v1 or not v2:
                            continue
                        a, b = np.meshgrid(v1, v2, indexing="ij")
                        los = np.repeat(lo[None], a.size, axis=0)
                        his = np.repeat(hi[None], a.size, axis=0)
                        (los if s1 == 0 else his)[:, ax1] = a.ravel()
                        (los if s2 == 0 else his)[:, ax2] = b.ravel()
                        groups.append((los, his))
                if groups:
                    res = self.poll(groups, best, count)
            if res is None:
                return lo, hi, best, count
            best, count, lo, hi = res

    def restarts(self):
        """Boxes spending the exclusion budget on one face, split over two
        faces, or spread evenly over all six."""
        pts = self.pts
        n = len(pts)
        e = n - self.need
        if e == 0:
            return []
        srt = np.sort(pts, axis=0)
        starts = []
        for ax in range(3):
            lo, hi = srt[0].copy(), srt[-1].copy()
            lo[ax] = srt[e, ax]
            starts.append((lo, hi))
            lo, hi = srt[0].copy(), srt[-1].copy()
            hi[ax] = srt[n - 1 - e, ax]
            starts.append((lo, hi))
        h = e // 2
        if h and n <= PAIR_RESTART_MAX_POINTS:
            faces = [(ax, side) for ax in range(3) for side in range(2)]
            for i in range(6):
                for j in range(i + 1, 6):
                    lo, hi = srt[0].copy(), srt[-1].copy()
                    for ax, side in (faces[i], faces[j]):
                        if side == 0:
                            lo[ax] = srt[h, ax]
                        else:
                            hi[ax] = srt[n - 1 - h, ax]
                    starts.append((lo, hi))
        q = e // 6
        if q:
            starts.append((srt[q].copy(), srt[n - 1 - q].copy()))
        return starts


# two-face splits of the exclusion budget matter for small, ragged clusters;
# on large ones they cost 15 extra searches for no measurable gain
PAIR_RESTART_MAX_POINTS = 1000


def fit_cuboid_points(points, coverage: float = 0.9, min_step: float = 1e-4,
                      rel_tie: float = 1e-9, k: int = 3) -> Cuboid3D:
    """Axis-aligned cuboid minimising volume / included points subject to
    including at least ``ceil(coverage * n)`` points.

    Direct search started from the full bounding box: compass polling over
    centre shift and extent scale (steps from 10% of the extent, halved on
    failure, stopping below ``min_step``), then a discrete polling phase
    whose steps move faces onto neighbouring point coordinates. The discrete
    phase is restarted from a few trimmed boxes and the best result kept.
    Every trial box is tightened onto the points it includes before scoring.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        raise InvalidInput("cannot fit a cuboid to zero points")
    if not 0 < coverage <= 1:
        raise InvalidInput("coverage must lie in (0, 1]")
    need = max(1, math.ceil(coverage * n - 1e-9))
    search = _Search(pts, need, rel_tie)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    lo, hi, best, count = search.continuous(lo, hi, min_step)
    lo, hi, best, count = search.discrete(lo, hi, best, count, k)
    for slo, shi in search.restarts():
        f, c = search.score(slo, shi)
        rlo, rhi, rf, rc = search.discrete(slo, shi, f, c, k)
        if _improves(rf, rc, best, count, rel_tie):
            lo, hi, best, count = rlo, rhi, rf, rc
    return Cuboid3D(lo, hi)


def fit_cuboid(cloud, cluster: Optional[Cluster] = None, coverage: float = 0.9) -> Cuboid3D:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if cluster is not None:
        pts = pts[cluster.point_indices]
    return fit_cuboid_points(pts, coverage)


def iou_3d(a: Cuboid3D, b: Cuboid3D) -> float:
    inter = np.clip(np.minimum(a.max_corner, b.max_corner) - np.maximum(a.min_corner, b.min_corner), 0, None)
    iv = float(np.prod(inter))
    union = a.volume + b.volume - iv
    return iv / union if union > 0 else 0.0


def _iou3d_matrix(lo, hi, i):
    inter = np.clip(np.minimum(hi[i], hi) - np.maximum(lo[i], lo), 0, None).prod(axis=1)
    vol = (hi - lo).prod(axis=1)
    union = vol[i] + vol - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def merge_proposals(proposals, merge_iou3d: float):
    """Greedy suppression: best objective first; drop anything overlapping a
    kept proposal by more than ``merge_iou3d`` in 3D IoU."""
    if not proposals:
        return []
    order = sorted(range(len(proposals)),
                   key=lambda i: (proposals[i].objective, -len(proposals[i].point_indices), i))
    props = [proposals[i] for i in order]
    lo = np.array([p.cuboid.min_corner for p in props])
    hi = np.array([p.cuboid.max_corner for p in props])
    alive = np.ones(len(props), dtype=bool)
    kept = []
    for i in range(len(props)):
        if not alive[i]:
            continue
        kept.append(props[i])
        ov = _iou3d_matrix(lo, hi, i)
        alive &= ~(ov > merge_iou3d)
    return kept


# ------------------------------------------------------------------- pipeline

def _proposals_from_clusters(points, index_map, clusters, params, provenance, fits=None):
    # the same cluster often reappears at several radii; ``fits`` maps a
    # cloud-level member set to its fitted (cuboid, inside indices)
    fits = {} if fits is None else fits
    out = []
    for cl in clusters:
        if len(cl) < params.min_cluster_size:
            continue
        members = index_map[cl.point_indices]
        key = np.sort(members).tobytes()
        if key not in fits:
            cpts = points[cl.point_indices]
            cub = fit_cuboid_points(cpts, params.coverage)
            fits[key] = (cub, members[cub.contains(cpts)])
        cub, inside = fits[key]
        if len(inside) < params.min_cluster_size:
            continue
        out.append(Proposal3D(cub, inside, provenance))
    return out


def sweep_proposals(cloud: PointCloud, planes, params: ProposalParams = ProposalParams(),
                    threads: int = 1):
    """Every (plane fraction, radius) pass, before merging.

    Fractions that remove the same number of planes share one filtered cloud
    and its clusterings.
    """
    n_planes = len(planes)
    jobs = []
    removed_for = {}
    for frac in params.plane_fractions:
        k = planes_to_remove(n_planes, frac)
        removed_for.setdefault(k, frac)
        for r in params.radii:
            jobs.append((frac, k, r))

    filtered = {}
    for k, frac in removed_for.items():
        keep = np.flatnonzero(removal_mask(len(cloud), planes, frac)) if k else np.arange(len(cloud))
        filtered[k] = keep

    unique = sorted({(k, r) for _, k, r in jobs})

    def run(key):
        k, r = key
        idx = filtered[k]
        pts = cloud.points[idx]
        if len(pts) == 0:
            return key, []
        clusters = mean_shift(pts, r, params.max_seeds)
        return key, clusters

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = dict(ex.map(run, unique))
    else:
        results = dict(run(u) for u in unique)

    out = []
    cache = {}
    fits = {}
    for frac, k, r in jobs:
        if (k, r) not in cache:
            idx = filtered[k]
            cache[(k, r)] = _proposals_from_clusters(cloud.points[idx], idx, results[(k, r)],
                                                     params, (removed_for[k], r), fits)
        out.extend(Proposal3D(p.cuboid, p.point_indices, (frac, r)) for p in cache[(k, r)])
    return out


def generate_proposals_multiview(world_cloud: PointCloud, planes,
                                 params: ProposalParams = ProposalParams(), threads: int = 1):
    return merge_proposals(sweep_proposals(world_cloud, planes, params, threads), params.merge_iou3d)


def generate_proposals_singleview(frame: CameraFrame, params: ProposalParams = ProposalParams(),
                                  hough: HoughParams = HoughParams(), voxel_size: float = 0.0,
                                  threads: int = 1):
    """Same pipeline on one frame's back-projected cloud.

    Returns (camera_frame_cloud, proposals); proposal indices refer to that cloud.
    """
    cloud = backproject_depth(frame.intrinsics, frame.depth)
    cloud = voxel_downsample(cloud, voxel_size)
    if len(cloud) == 0:
        return cloud, []
    planes = detect_planes(cloud, hough, threads)
    return cloud, generate_proposals_multiview(cloud, planes, params, threads)


def proposals_to_json(proposals, with_indices=True):
    out = []
    for p in proposals:
        d = {"min_corner": p.cuboid.min_corner.tolist(), "max_corner": p.cuboid.max_corner.tolist(),
             "provenance": {"plane_fraction": p.provenance[0], "radius": p.provenance[1]},
             "point_count": int(len(p.point_indices))}
        if with_indices:
            d["point_indices"] = p.point_indices.tolist()
        out.append(d)
    return out


def proposals_from_json(doc, cloud: Optional[PointCloud] = None):
    out = []
    for d in doc:
        cub = Cuboid3D(d["min_corner"], d["max_corner"])
        if "point_indices" in d:
            idx = np.asarray(d["point_indices"], dtype=np.int64)
        elif cloud is not None:
            idx = np.flatnonzero(cub.contains(cloud.points))
        else:
            raise InvalidInput("proposal entries lack point_indices and no cloud was given")
        prov = d.get("provenance", {})
        out.append(Proposal3D(cub, idx, (prov.get("plane_fraction"), prov.get("radius"))))
    return out
