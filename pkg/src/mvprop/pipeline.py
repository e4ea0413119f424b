"""Configuration and stage orchestration for the multi-view and single-view
flows.

A config is one JSON document. Built-in defaults are overlaid by the file's
optional ``defaults`` layer, then by the file's top-level keys, then by
``--set key=value`` overrides (dotted keys, JSON-parsed values).
"""

from __future__ import annotations

import copy
import hashlib
import json
import platform
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__, _backend
from . import io as mio
from .evaluation import DEFAULT_THRESHOLDS, RecallReport, average_precision, recall_report, write_ap_csv
from .geometry import CameraFrame, InvalidInput, PointCloud, Pose
from .planes import HoughParams, detect_planes, planes_from_json, planes_to_json
from .projection import ObjectSegment, VisibilityParams, project_annotations, project_proposals
from .proposals import (ProposalParams, generate_proposals_multiview, generate_proposals_singleview,
                        proposals_from_json, proposals_to_json)
from .registration import (EstimationError, FusionParams, ScaleEstimate, estimate_scale, fuse_frames,
                           fusion_report)

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "fusion": asdict(FusionParams()) | {"alpha": None},
    "hough": {k: v for k, v in asdict(HoughParams()).items() if k != "seed"},
    "proposals": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(ProposalParams()).items()},
    "visibility": asdict(VisibilityParams()),
    "evaluation": {"thresholds": list(DEFAULT_THRESHOLDS), "exclude": [], "iou_threshold": 0.5,
                   "eleven_point": False},
    "singleview": {"voxel_size": None, "frame_stride": 1},
}

# keys that may change run time but never results; left out of the config hash
NON_RESULT_KEYS = ("threads",)


class ConfigError(InvalidInput):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _merge(base, over, path=""):
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[k], dict) and v is not None:
            if not isinstance(v, dict):
                raise ConfigError(f"config key '{where}' must be an object")
            _merge(base[k], v, where + ".")
        else:
            base[k] = v
    return base


def parse_override(text):
    """``a.b=value`` -> (["a", "b"], value); value is JSON when it parses."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip().split("."), val


def load_config(path=None, overrides=()):
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = mio.read_json(path)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        doc = dict(doc)
        _merge(cfg, doc.pop("defaults", {}) or {})
        _merge(cfg, doc)
    for item in overrides:
        keys, val = parse_override(item)
        node = {}
        cur = node
        for k in keys[:-1]:
            cur[k] = {}
            cur = cur[k]
        cur[keys[-1]] = val
        _merge(cfg, node)
    validate_config(cfg)
    return cfg


def _build(cls, d):
    names = {f.name for f in fields(cls)}
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names}
    return cls(**kw)


def validate_config(cfg):
    """Instantiate every parameter bundle so bad values fail before any stage."""
    seed = cfg["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not -2 ** 63 <= seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit integer")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    try:
        params(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    thr = cfg["evaluation"]["thresholds"]
    if not thr or any(not (0 <= t <= 1) for t in thr):
        raise ConfigError("evaluation thresholds must be a nonempty list in [0, 1]")
    if cfg["singleview"]["frame_stride"] < 1:
        raise ConfigError("singleview.frame_stride must be >= 1")
    return cfg


def params(cfg):
    """(FusionParams, HoughParams, ProposalParams, VisibilityParams) from a config."""
    fusion = _build(FusionParams, cfg["fusion"])
    hough = _build(HoughParams, dict(cfg["hough"], seed=cfg["seed"] % 2 ** 32))
    prop = _build(ProposalParams, cfg["proposals"])
    vis = _build(VisibilityParams, cfg["visibility"])
    return fusion, hough, prop, vis


def config_hash(cfg) -> str:
    body = {k: v for k, v in cfg.items() if k not in NON_RESULT_KEYS}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ------------------------------------------------------------------ stages

class Run:
    """Sequential stage runner that records timings and output files, and
    leaves a ``.partial`` marker when a stage fails."""

    def __init__(self, cfg, out_dir, flow):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.flow = flow
        self.times = {}
        self.files = []
        marker = self.out / ".partial"
        if marker.exists():
            marker.unlink()

    def stage(self, name, fn, *args):
        t0 = time.perf_counter()
        try:
            result = fn(*args)
        except Exception as exc:  # noqa: BLE001  (any failure aborts the flow)
            (self.out / ".partial").write_text(f"{name}: {type(exc).__name__}: {exc}\n")
            raise StageError(name, exc) from exc
        self.times[name] = round(time.perf_counter() - t0, 3)
        return result

    def wrote(self, *names):
        self.files.extend(names)

    def finish(self):
        manifest = {
            "flow": self.flow,
            "config_hash": config_hash(self.cfg),
            "config": self.cfg,
            "versions": {"mvprop": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version(), "kernel_backend": _backend.BACKEND},
            "stage_seconds": self.times,
            "artifacts": {f: file_hash(self.out / f) for f in sorted(self.files)},
        }
        mio.write_json(self.out / "manifest.json", manifest)
        return manifest


def _scene_paths(scene_dir):
    d = Path(scene_dir)
    scene = d / "scene.json"
    if not scene.exists():
        raise ConfigError(f"{scene} does not exist")
    return d, scene


def metric_frames(frames, alpha):
    return [CameraFrame(f.id, f.intrinsics, f.pose.scaled(alpha), f.depth, f.rgb_file) for f in frames]


def stage_fuse(frames, corr_path, cfg, threads):
    fusion = _build(FusionParams, cfg["fusion"])
    if cfg["fusion"].get("alpha") is not None:
        est = ScaleEstimate(float(cfg["fusion"]["alpha"]), 0)
    elif corr_path is not None and Path(corr_path).exists():
        Z, z, fids = mio.load_correspondences(corr_path)
        if len(Z) == 0:
            raise EstimationError("correspondence file is empty")
        est = estimate_scale(np.column_stack([Z, z]), fusion,
                             fids if fids is not None and None not in fids else None)
    else:
        est = ScaleEstimate(1.0, 0)  # poses already metric
    cloud = fuse_frames(frames, est, fusion, threads) if frames else PointCloud(np.empty((0, 3)))
    return est, cloud


def stage_planes(cloud, hough, threads):
    if len(cloud) == 0:
        return []
    return detect_planes(cloud, hough, threads)


def load_ground_truth(scene_dir, frames, vis):
    """Ground-truth boxes from ``gt_boxes.json`` if present, else projected
    from the labelled segments listed in ``segments/manifest.json``."""
    d = Path(scene_dir)
    if (d / "gt_boxes.json").exists():
        return mio.load_boxes(d / "gt_boxes.json")
    seg_manifest = d / "segments" / "manifest.json"
    if seg_manifest.exists():
        segs = [ObjectSegment(e["label"], mio.load_cloud(d / e["file"]))
                for e in mio.read_json(seg_manifest)]
        return project_annotations(segs, frames, vis)
    return None


def write_report(out, stem, rep: RecallReport, exclude):
    doc = rep.to_json()
    if rep.classes:
        doc["average"] = {f"{t:.2f}": rep.average(t) for t in rep.thresholds}
        kept = [c for c in rep.classes if c not in set(exclude)]
        if exclude and kept:
            doc["average_excluding"] = {"excluded": list(exclude),
                                        **{f"{t:.2f}": rep.average(t, exclude) for t in rep.thresholds}}
    mio.write_json(out / f"{stem}.json", doc)
    rep.write_csv(out / f"{stem}.csv")
    return [f"{stem}.json", f"{stem}.csv"]


def empty_report(thresholds):
    return RecallReport([], list(thresholds), np.zeros((0, len(thresholds))), 0.0, [])


def run_multiview(cfg, scene_dir, out_dir):
    """fuse -> planes -> propose -> project -> eval, all artifacts in ``out_dir``."""
    validate_config(cfg)
    d, scene = _scene_paths(scene_dir)
    fusion, hough, prop, vis = params(cfg)
    threads = cfg["threads"]
    run = Run(cfg, out_dir, "multiview")
    out = run.out

    intr, frames = run.stage("load", mio.load_scene, scene)
    est, cloud = run.stage("fuse", stage_fuse, frames, d / "correspondences.csv", cfg, threads)
    mio.save_cloud(cloud, out / "world.ply")
    mio.write_json(out / "fusion.json", fusion_report(est, cloud))
    run.wrote("world.ply", "fusion.json")

    planes = run.stage("planes", stage_planes, cloud, hough, threads)
    mio.write_json(out / "planes.json", planes_to_json(planes), compact=True)
    run.wrote("planes.json")

    proposals = run.stage("propose", lambda: generate_proposals_multiview(cloud, planes, prop, threads)
                          if len(cloud) else [])
    mio.write_json(out / "proposals.json", proposals_to_json(proposals), compact=True)
    run.wrote("proposals.json")

    mframes = metric_frames(frames, est.alpha)
    fps = run.stage("project", project_proposals, proposals, cloud, mframes, vis, 0.95, threads)
    mio.save_boxes(out / "boxes.json", [(f.frame_id, list(zip(f.boxes, f.proposal_indices))) for f in fps])
    run.wrote("boxes.json")

    gt = run.stage("eval", _evaluate, run, d, mframes, fps, cfg, vis)
    return run.finish(), gt


def _evaluate(run, scene_dir, frames, frame_props, cfg, vis):
    thr = cfg["evaluation"]["thresholds"]
    if not frames:
        rep = empty_report(thr)
    else:
        gt = load_ground_truth(scene_dir, frames, vis)
        if gt is None:
            return None
        rep = recall_report(frame_props, gt, thr)
    run.wrote(*write_report(run.out, "recall", rep, cfg["evaluation"]["exclude"]))
    return rep


def run_singleview(cfg, scene_dir, out_dir):
    """The same sweep on each frame's own back-projected cloud; proposals are
    projected into their own frame only."""
    validate_config(cfg)
    d, scene = _scene_paths(scene_dir)
    fusion, hough, prop, vis = params(cfg)
    threads = cfg["threads"]
    voxel = cfg["singleview"]["voxel_size"]
    voxel = fusion.voxel_size if voxel is None else float(voxel)
    run = Run(cfg, out_dir, "singleview")
    out = run.out
    (out / "frames").mkdir(exist_ok=True)

    intr, frames = run.stage("load", mio.load_scene, scene)
    frames = frames[::cfg["singleview"]["frame_stride"]]
    identity = Pose(np.eye(3), np.zeros(3))
    all_boxes = []

    def one(frame):
        cloud, props = generate_proposals_singleview(frame, prop, hough, voxel, threads)
        cam = CameraFrame(frame.id, frame.intrinsics, identity, frame.depth)
        fp = project_proposals(props, cloud, [cam], vis, 0.95, threads)[0]
        return props, fp

    for frame in frames:
        props, fp = run.stage(f"frame:{frame.id}", one, frame)
        name = f"frames/{frame.id}_proposals.json"
        mio.write_json(out / name, proposals_to_json(props, with_indices=False))
        run.wrote(name)
        all_boxes.append(fp)
    mio.save_boxes(out / "boxes.json", [(f.frame_id, list(zip(f.boxes, f.proposal_indices))) for f in all_boxes])
    run.wrote("boxes.json")

    # ground truth needs metric poses only when projected from segments
    alpha = 1.0
    if (d / "correspondences.csv").exists() or cfg["fusion"].get("alpha") is not None:
        alpha = stage_fuse([], d / "correspondences.csv", cfg, threads)[0].alpha
    mframes = metric_frames(frames, alpha)
    gt = run.stage("eval", _evaluate, run, d, mframes, all_boxes, cfg, vis)
    return run.finish(), gt


def evaluate_files(proposals_path, gt_path, out_dir, cfg, detections_path=None, stem="recall"):
    """The ``eval`` subcommand: recall report (+ AP when detections are given)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    props = mio.load_boxes(proposals_path)
    gt = mio.load_boxes(gt_path)
    rep = recall_report(props, gt, cfg["evaluation"]["thresholds"])
    written = write_report(out, stem, rep, cfg["evaluation"]["exclude"])
    if detections_path is not None:
        dets = mio.load_detections(detections_path)
        ap, m = average_precision(dets, gt, cfg["evaluation"]["iou_threshold"],
                                  cfg["evaluation"]["eleven_point"])
        mio.write_json(out / "ap.json", {"iou_threshold": cfg["evaluation"]["iou_threshold"],
                                         "ap": {c: (None if np.isnan(v) else v) for c, v in ap.items()},
                                         "mAP": None if np.isnan(m) else m})
        write_ap_csv(out / "ap.csv", ap, m)
        written += ["ap.json", "ap.csv"]
    return rep, written


def load_planes_or_detect(cloud, planes_path, hough, threads):
    if planes_path is not None:
        return planes_from_json(mio.read_json(planes_path), cloud, hough.inlier_threshold)
    return stage_planes(cloud, hough, threads)


def load_proposals(path, cloud):
    return proposals_from_json(mio.read_json(path), cloud)
