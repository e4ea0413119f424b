"""Deterministic synthetic RGB-D scenes with ground truth.

Scenes are made of finite support rectangles, boxes and upright cylinders.
Every camera is ray-cast independently with its own noise stream derived
from ``(seed, frame index)``, so rendering order cannot change the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import (BoundingBox2D, CameraFrame, DepthMap, Intrinsics, InvalidInput, PointCloud,
                       Pose, look_at, voxel_downsample)
from .projection import ObjectSegment

NO_HIT = -1


@dataclass(frozen=True)
class SupportPlane:
    normal: tuple
    rho: float
    extent: tuple            # half-sizes along the two in-plane axes
    center: Optional[tuple] = None  # point on the plane; default rho * normal


@dataclass(frozen=True)
class SceneObject:
    label: str
    shape: str               # "box" or "cylinder"
    size: tuple              # box: (sx, sy, sz); cylinder: (diameter, diameter, height)
    position: tuple          # centre of the shape, world frame
    yaw: float = 0.0         # degrees about world z

    def __post_init__(self):
        if self.shape not in ("box", "cylinder"):
            raise InvalidInput(f"unknown shape {self.shape!r}")
        if len(self.size) != 3 or min(self.size) <= 0:
            raise InvalidInput("object sizes must be three positive lengths")


@dataclass(frozen=True)
class SceneSpec:
    support_planes: tuple
    objects: tuple
    camera_path: tuple       # camera-to-world Poses (metric)
    intrinsics: Intrinsics
    depth_noise_sigma: float = 0.0
    occluders: tuple = ()    # SceneObjects rendered but never annotated
    sfm_scale: float = 1.0   # metric / SfM ratio used for exported poses
    correspondences_per_frame: int = 200
    correspondence_outlier_fraction: float = 0.0
    gt_min_pixels: int = 50
    gt_min_box_side: float = 10.0
    segment_voxel: float = 0.002

    def __post_init__(self):
        if not self.camera_path:
            raise InvalidInput("scene needs at least one camera")
        if self.depth_noise_sigma < 0 or not self.sfm_scale > 0:
            raise InvalidInput("noise must be >= 0 and sfm_scale > 0")

    def to_json(self):
        return {
            "support_planes": [asdict(p) for p in self.support_planes],
            "objects": [asdict(o) for o in self.objects],
            "occluders": [asdict(o) for o in self.occluders],
            "camera_path": [{"rotation": p.rotation.reshape(-1).tolist(),
                             "translation": p.translation.tolist()} for p in self.camera_path],
            "intrinsics": self.intrinsics.to_dict(),
            "depth_noise_sigma": self.depth_noise_sigma,
            "sfm_scale": self.sfm_scale,
            "correspondences_per_frame": self.correspondences_per_frame,
            "correspondence_outlier_fraction": self.correspondence_outlier_fraction,
            "gt_min_pixels": self.gt_min_pixels,
            "gt_min_box_side": self.gt_min_box_side,
            "segment_voxel": self.segment_voxel,
        }

    @classmethod
    def from_json(cls, doc):
        def obj(d):
            return SceneObject(d["label"], d["shape"], tuple(d["size"]), tuple(d["position"]),
                               d.get("yaw", 0.0))
        cams = []
        for c in doc["camera_path"]:
            if "eye" in c:
                cams.append(look_at(c["eye"], c["target"], c.get("up", (0, 0, 1))))
            else:
                cams.append(Pose(np.asarray(c["rotation"]).reshape(3, 3), c["translation"]))
        planes = tuple(SupportPlane(tuple(p["normal"]), p["rho"], tuple(p["extent"]),
                                    tuple(p["center"]) if p.get("center") is not None else None)
                       for p in doc["support_planes"])
        extra = {k: doc[k] for k in ("depth_noise_sigma", "sfm_scale", "correspondences_per_frame",
                                     "correspondence_outlier_fraction", "gt_min_pixels",
                                     "gt_min_box_side", "segment_voxel") if k in doc}
        return cls(planes, tuple(obj(o) for o in doc["objects"]), tuple(cams),
                   Intrinsics(**doc["intrinsics"]),
                   occluders=tuple(obj(o) for o in doc.get("occluders", [])), **extra)


@dataclass
class SceneTruth:
    frames: list                 # CameraFrames with metric poses and depth maps
    gt_boxes: list               # per frame: list of labelled BoundingBox2D
    segments: list               # ObjectSegments (world frame, noise-free)
    plane_points: list           # per support plane: world points seen on it
    visible_pixels: list         # per frame: {label: visible pixel count}
    sfm_poses: list              # poses with translation divided by sfm_scale
    correspondences: tuple       # (Z, z, frame_ids)


# ------------------------------------------------------------------ ray casting

def _plane_axes(normal):
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    a = np.cross(n, ref)
    a /= np.linalg.norm(a)
    return n, a, np.cross(n, a)


def _hit_plane(o, d, plane: SupportPlane):
    n, a, b = _plane_axes(plane.normal)
    c = np.asarray(plane.center if plane.center is not None else np.asarray(plane.normal) * plane.rho,
                   dtype=np.float64)
    rho = float(n @ c)
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rho - o @ n) / denom
    p = o + t[:, None] * d
    rel = p - c
    ok = (np.abs(denom) > 1e-12) & (t > 0) & (np.abs(rel @ a) <= plane.extent[0]) & (np.abs(rel @ b) <= plane.extent[1])
    return np.where(ok, t, np.inf)


def _to_local(o, d, obj: SceneObject):
    yaw = math.radians(obj.yaw)
    c, s = math.cos(yaw), math.sin(yaw)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    lo = (o - np.asarray(obj.position)) @ Rz
    ld = d @ Rz
    return lo, ld


def _hit_box(o, d, obj: SceneObject):
    lo, ld = _to_local(o, d, obj)
    half = np.asarray(obj.size) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / ld
        t1 = (-half - lo) * inv
        t2 = (half - lo) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    ok = (tmax >= tmin) & (tmin > 0)
    return np.where(ok, tmin, np.inf)


def _hit_cylinder(o, d, obj: SceneObject):
    lo, ld = _to_local(o, d, obj)
    r = obj.size[0] / 2.0
    hz = obj.size[2] / 2.0
    t_best = np.full(len(o), np.inf)
    a = ld[:, 0] ** 2 + ld[:, 1] ** 2
    b = 2 * (lo[:, 0] * ld[:, 0] + lo[:, 1] * ld[:, 1])
    c = lo[:, 0] ** 2 + lo[:, 1] ** 2 - r * r
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        ts = (-b - np.sqrt(disc)) / (2 * a)
    z = lo[:, 2] + ts * ld[:, 2]
    side = (disc >= 0) & (a > 1e-15) & (ts > 0) & (np.abs(z) <= hz)
    t_best = np.where(side, ts, t_best)
    for zc in (-hz, hz):
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = (zc - lo[:, 2]) / ld[:, 2]
        px = lo[:, 0] + tc * ld[:, 0]
        py = lo[:, 1] + tc * ld[:, 1]
        cap = (tc > 0) & (px * px + py * py <= r * r)
        t_best = np.where(cap & (tc < t_best), tc, t_best)
    return t_best


def _hit_object(o, d, obj):
    return _hit_box(o, d, obj) if obj.shape == "box" else _hit_cylinder(o, d, obj)


def render(spec: SceneSpec, pose: Pose):
    """Noise-free ray cast of one camera.

    Returns (depth_m, hit_id) grids; ids index ``[*support_planes, *objects,
    *occluders]`` and depth is camera-frame z (0 where nothing is hit).
    """
    intr = spec.intrinsics
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    rays = np.column_stack([((u - intr.cx) / intr.fx).ravel(),
                            ((v - intr.cy) / intr.fy).ravel(),
                            np.ones(u.size)])
    d = rays @ pose.rotation.T          # world directions with unit camera-z
    o = np.broadcast_to(pose.translation, d.shape)
    best = np.full(len(d), np.inf)
    ids = np.full(len(d), NO_HIT, dtype=np.int32)
    prims = [("plane", p) for p in spec.support_planes] + \
            [("obj", ob) for ob in spec.objects] + [("obj", ob) for ob in spec.occluders]
    for k, (kind, prim) in enumerate(prims):
        t = _hit_plane(o, d, prim) if kind == "plane" else _hit_object(o, d, prim)
        closer = t < best
        best[closer] = t[closer]
        ids[closer] = k
    best[~np.isfinite(best)] = 0.0
    return best.reshape(intr.height, intr.width), ids.reshape(intr.height, intr.width)


def _noisy_mm(depth_m, sigma, rng):
    valid = depth_m > 0
    z = depth_m.copy()
    if sigma > 0:
        noise = np.clip(rng.standard_normal(z.shape), -3.0, 3.0) * sigma
        z = z + noise
    mm = np.rint(z * 1000.0)
    mm[~valid | (mm <= 0) | (mm > 65535)] = 0
    return mm.astype(np.uint16)


def _render_frame(spec: SceneSpec, fi: int, seed: int):
    """Everything derived from one camera; depends only on (spec, seed, fi)."""
    intr = spec.intrinsics
    n_planes = len(spec.support_planes)
    pose = spec.camera_path[fi]
    rng = np.random.default_rng([seed, fi])
    depth_m, ids = render(spec, pose)
    mm = _noisy_mm(depth_m, spec.depth_noise_sigma, rng)
    fid = f"frame_{fi:04d}"
    frame = CameraFrame(fid, intr, pose, DepthMap(mm))

    # exact surface points of this view, world frame
    valid = depth_m > 0
    v_grid, u_grid = np.nonzero(valid)
    z = depth_m[valid]
    cam = np.column_stack([(u_grid - intr.cx) * z / intr.fx, (v_grid - intr.cy) * z / intr.fy, z])
    world = cam @ pose.rotation.T + pose.translation
    vid = ids[valid]
    planes = [world[vid == k] for k in range(n_planes)]

    boxes, counts, segs = [], {}, []
    for j, obj in enumerate(spec.objects):
        mask = ids == n_planes + j
        cnt = int(mask.sum())
        counts[obj.label] = cnt
        segs.append(world[vid == n_planes + j])
        if cnt < spec.gt_min_pixels:
            continue
        rows, cols = np.nonzero(mask)
        box = BoundingBox2D(float(cols.min()), float(rows.min()), float(cols.max()), float(rows.max()),
                            obj.label)
        if min(box.xmax - box.xmin, box.ymax - box.ymin) < spec.gt_min_box_side:
            continue
        boxes.append(box)

    # sparse SfM-style correspondences: true depth / scale vs measured depth
    Z = zmeas = np.empty(0)
    good = np.flatnonzero(mm.ravel() > 0)
    if len(good) and spec.correspondences_per_frame:
        pick = rng.choice(good, size=min(spec.correspondences_per_frame, len(good)), replace=False)
        pick.sort()
        Z = depth_m.ravel()[pick] / spec.sfm_scale
        zmeas = mm.ravel()[pick].astype(np.float64) / 1000.0
        n_out = int(round(spec.correspondence_outlier_fraction * len(pick)))
        if n_out:
            bad = rng.choice(len(pick), size=n_out, replace=False)
            zmeas[bad] *= rng.uniform(2.0, 10.0, size=n_out)
    return frame, boxes, counts, segs, planes, Z, zmeas


def generate_scene(spec: SceneSpec, seed: int = 0, threads: int = 1) -> SceneTruth:
    n = len(spec.camera_path)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda fi: _render_frame(spec, fi, seed), range(n)))
    else:
        parts = [_render_frame(spec, fi, seed) for fi in range(n)]

    frames = [p[0] for p in parts]
    segments = []
    for j, obj in enumerate(spec.objects):
        pts = [p[3][j] for p in parts if len(p[3][j])]
        if pts:
            segments.append(ObjectSegment(obj.label, voxel_downsample(PointCloud(np.concatenate(pts)),
                                                                      spec.segment_voxel)))
    plane_points = []
    for k in range(len(spec.support_planes)):
        pts = [p[4][k] for p in parts]
        plane_points.append(voxel_downsample(PointCloud(np.concatenate(pts) if pts else np.empty((0, 3))),
                                             0.01).points)
    sfm_poses = [Pose(p.rotation, p.translation / spec.sfm_scale) for p in spec.camera_path]
    fids = [f.id for f, p in zip(frames, parts) for _ in range(len(p[5]))]
    corr = (np.concatenate([p[5] for p in parts]), np.concatenate([p[6] for p in parts]), fids)
    return SceneTruth(frames, [p[1] for p in parts], segments, plane_points, [p[2] for p in parts],
                      sfm_poses, corr)


# ---------------------------------------------------------------- scene export

def write_scene(truth: SceneTruth, spec: SceneSpec, out_dir) -> Path:
    """Write a scene directory in the formats the pipeline consumes."""
    from . import io as mio

    out = Path(out_dir)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    (out / "segments").mkdir(exist_ok=True)
    sfm_frames = []
    dfiles = []
    for f, sp in zip(truth.frames, truth.sfm_poses):
        dfile = f"depth/{f.id}.pgm"
        mio.save_pgm16(f.depth, out / dfile)
        dfiles.append(dfile)
        sfm_frames.append(CameraFrame(f.id, f.intrinsics, sp))
    mio.save_scene(out / "scene.json", spec.intrinsics, sfm_frames, dfiles)
    Z, z, fids = truth.correspondences
    mio.save_correspondences(out / "correspondences.csv", Z, z, fids)
    mio.save_boxes(out / "gt_boxes.json", [(f.id, b) for f, b in zip(truth.frames, truth.gt_boxes)])
    manifest = []
    for k, seg in enumerate(truth.segments):
        fname = f"segments/{k:02d}_{seg.label.replace(' ', '_')}.ply"
        mio.save_cloud(seg.points, out / fname)
        manifest.append({"label": seg.label, "file": fname})
    mio.write_json(out / "segments" / "manifest.json", manifest)
    mio.write_json(out / "spec.json", spec.to_json())
    return out


# ------------------------------------------------------------ reference scenes

def kinect_intrinsics(width=640, height=480) -> Intrinsics:
    f = 525.0 * width / 640.0
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def orbit(center, radius, height, n, start_deg=0.0, span_deg=360.0, target_z=None):
    cx, cy, cz = center
    poses = []
    for i in range(n):
        ang = math.radians(start_deg + span_deg * i / (n if span_deg >= 360 else max(n - 1, 1)))
        eye = (cx + radius * math.cos(ang), cy + radius * math.sin(ang), height)
        poses.append(look_at(eye, (cx, cy, cz if target_z is None else target_z)))
    return tuple(poses)


def scene_a1(n_frames=30, sigma=0.005, width=640, height=480) -> SceneSpec:
    """Ten boxes and cylinders on a counter and a raised shelf, seen from an
    orbit of cameras."""
    counter = SupportPlane((0, 0, 1), 0.9, (1.5, 1.0), (0.0, 0.0, 0.9))
    shelf = SupportPlane((0, 0, 1), 1.25, (0.75, 0.2), (0.0, 0.6, 1.25))
    objs = []
    spots = [(-0.9, -0.5), (-0.3, -0.55), (0.3, -0.5), (0.9, -0.55), (-1.0, 0.15), (1.0, 0.1),
             (-0.55, -0.05)]
    shapes = [("box", (0.16, 0.08, 0.24), 15.0), ("cylinder", (0.08, 0.08, 0.14), 0.0),
              ("box", (0.12, 0.12, 0.10), 40.0), ("cylinder", (0.10, 0.10, 0.20), 0.0),
              ("box", (0.20, 0.07, 0.28), -20.0), ("box", (0.10, 0.10, 0.18), 5.0),
              ("cylinder", (0.07, 0.07, 0.12), 0.0)]
    names = ["honey bunches", "red bull", "mahatma rice", "coffee mate", "pop secret",
             "nature valley", "pringles bbq"]
    for (x, y), (shape, size, yaw), name in zip(spots, shapes, names):
        objs.append(SceneObject(name, shape, size, (x, y, 0.9 + size[2] / 2), yaw))
    shelf_items = [("hunts sauce", "cylinder", (0.08, 0.08, 0.12), (-0.5, 0.6)),
                   ("palmolive orange", "box", (0.09, 0.06, 0.20), (0.0, 0.6)),
                   ("coca cola", "cylinder", (0.07, 0.07, 0.22), (0.5, 0.6))]
    for name, shape, size, (x, y) in shelf_items:
        objs.append(SceneObject(name, shape, size, (x, y, 1.25 + size[2] / 2), 10.0))
    cams = orbit((0.0, -0.1, 0.9), 1.9, 1.85, n_frames, start_deg=200.0, span_deg=140.0,
                 target_z=1.0)
    return SceneSpec((counter, shelf), tuple(objs), cams, kinect_intrinsics(width, height),
                     depth_noise_sigma=sigma, sfm_scale=0.37, correspondence_outlier_fraction=0.1)


def scene_a2(n_frames=16, sigma=0.005, width=320, height=240) -> SceneSpec:
    """A large box behind a low wall, flanked by two small cylinders.

    Half the cameras sit low in front of the wall and never see the box. A
    quarter look over the wall from higher up and catch only its top strip,
    while both cylinders stand in full view beside it. The rest circle behind
    and see the whole box.
    """
    counter = SupportPlane((0, 0, 1), 0.9, (1.2, 0.9), (0.0, 0.0, 0.9))
    objs = (
        SceneObject("mahatma rice", "box", (0.18, 0.14, 0.24), (0.0, 0.0, 1.02), 0.0),
        SceneObject("coffee mate", "cylinder", (0.08, 0.08, 0.14), (0.42, 0.0, 0.97)),
        SceneObject("red bull", "cylinder", (0.08, 0.08, 0.16), (-0.42, 0.0, 0.98)),
        SceneObject("nature valley", "box", (0.14, 0.08, 0.20), (0.7, 0.5, 1.0), 20.0),
    )
    occ = (SceneObject("occluder", "box", (0.5, 0.01, 0.28), (0.0, -0.35, 1.04), 0.0),)
    n_low = n_frames // 2
    n_over = n_frames // 4
    centre = (0.0, 0.0, 0.9)
    cams = (orbit(centre, 0.9, 0.98, n_low, start_deg=245.0, span_deg=50.0, target_z=0.97)
            + orbit(centre, 0.9, 1.3, n_over, start_deg=245.0, span_deg=50.0, target_z=0.97)
            + orbit(centre, 0.9, 1.3, n_frames - n_low - n_over, start_deg=75.0, span_deg=30.0,
                    target_z=0.97))
    return SceneSpec((counter,), objs, cams, kinect_intrinsics(width, height), depth_noise_sigma=sigma,
                     occluders=occ, sfm_scale=2.5, correspondence_outlier_fraction=0.1)


def scene_tabletop(n_frames=12, sigma=0.003, width=320, height=240) -> SceneSpec:
    """Four well separated objects on a table; little occlusion."""
    table = SupportPlane((0, 0, 1), 0.75, (0.9, 0.6), (0.0, 0.0, 0.75))
    objs = (
        SceneObject("honey bunches", "box", (0.16, 0.08, 0.24), (-0.4, -0.2, 0.87), 10.0),
        SceneObject("pringles bbq", "cylinder", (0.08, 0.08, 0.22), (0.4, -0.25, 0.86)),
        SceneObject("pop secret", "box", (0.20, 0.07, 0.16), (-0.35, 0.3, 0.83), -30.0),
        SceneObject("hunts sauce", "cylinder", (0.08, 0.08, 0.12), (0.35, 0.3, 0.81)),
    )
    cams = orbit((0.0, 0.0, 0.75), 1.5, 1.5, n_frames, start_deg=230.0, span_deg=80.0, target_z=0.8)
    return SceneSpec((table,), objs, cams, kinect_intrinsics(width, height), depth_noise_sigma=sigma)
