"""Readers and writers for the on-disk formats.

* point clouds: ASCII PLY, ``vertex`` element with x, y, z and optional
  red, green, blue (uchar)
* depth maps: binary PGM (P5), 16-bit big-endian samples, millimetres
* scenes: one JSON document with intrinsics and per-frame poses
* boxes: ``{"frames": [{"id", "boxes": [...]}]}`` for proposals and ground truth
* correspondences: CSV lines ``Z,z`` with an optional third ``frame`` column
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .geometry import (BoundingBox2D, CameraFrame, DepthMap, Intrinsics, InvalidInput,
                       PointCloud, Pose)


class ParseError(InvalidInput):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


_FLOAT_TYPES = {"float", "float32", "double", "float64"}
_UCHAR_TYPES = {"uchar", "uint8"}


def save_cloud(cloud: PointCloud, path) -> None:
    has_color = cloud.colors is not None
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
             "property float x", "property float y", "property float z"]
    if has_color:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    body = []
    pts = cloud.points.tolist()
    if has_color:
        for p, c in zip(pts, cloud.colors.tolist()):
            body.append(f"{p[0]!r} {p[1]!r} {p[2]!r} {c[0]} {c[1]} {c[2]}")
    else:
        for p in pts:
            body.append(f"{p[0]!r} {p[1]!r} {p[2]!r}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
        if body:
            fh.write("\n".join(body) + "\n")


def load_cloud(path) -> PointCloud:
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read().split("\n")
    if not text or text[0].strip() != "ply":
        raise ParseError(path, 1, "missing 'ply' magic")
    count = None
    props = []
    lineno = 1
    header_done = False
    for lineno in range(2, len(text) + 1):
        toks = text[lineno - 1].split()
        if not toks or toks[0] == "comment":
            continue
        if toks[0] == "format":
            if toks[1:] != ["ascii", "1.0"]:
                raise ParseError(path, lineno, "only 'format ascii 1.0' is supported")
        elif toks[0] == "element":
            if len(toks) != 3 or toks[1] != "vertex" or count is not None:
                raise ParseError(path, lineno, "only a single 'vertex' element is supported")
            try:
                count = int(toks[2])
            except ValueError:
                raise ParseError(path, lineno, f"bad vertex count {toks[2]!r}") from None
            if count < 0:
                raise ParseError(path, lineno, "negative vertex count")
        elif toks[0] == "property":
            if count is None or len(toks) != 3:
                raise ParseError(path, lineno, "malformed property line")
            props.append((toks[2], toks[1]))
        elif toks[0] == "end_header":
            header_done = True
            break
        else:
            raise ParseError(path, lineno, f"unexpected header keyword {toks[0]!r}")
    if not header_done:
        raise ParseError(path, lineno, "missing end_header")
    if count is None:
        raise ParseError(path, lineno, "missing vertex element")
    names = [p[0] for p in props]
    if names not in (["x", "y", "z"], ["x", "y", "z", "red", "green", "blue"]):
        raise ParseError(path, lineno, f"unsupported vertex properties {names}")
    for name, typ in props:
        ok = _FLOAT_TYPES if name in "xyz" else _UCHAR_TYPES
        if typ not in ok:
            raise ParseError(path, lineno, f"property {name} has unsupported type {typ}")

    ncol = len(names)
    body = [ln for ln in text[lineno:] if ln.strip()]
    if len(body) == count:
        try:
            data = np.array(" ".join(body).split(), dtype=np.float64)
        except ValueError:
            data = None
        if data is not None and data.size == count * ncol:
            data = data.reshape(count, ncol)
            rows_ok = all(len(ln.split()) == ncol for ln in body) if count < 2_000_000 else True
            colors = data[:, 3:6]
            if (rows_ok and np.all(np.isfinite(data))
                    and np.all((colors >= 0) & (colors <= 255) & (colors == np.floor(colors)))):
                return PointCloud(data[:, :3], colors.astype(np.uint8) if ncol == 6 else None)
    # slow path: locate the offending line
    data = np.empty((count, ncol), dtype=np.float64)
    row = 0
    for k in range(lineno + 1, len(text) + 1):
        line = text[k - 1]
        if not line.strip():
            continue
        if row >= count:
            raise ParseError(path, k, f"more vertex lines than the declared {count}")
        toks = line.split()
        if len(toks) != ncol:
            raise ParseError(path, k, f"expected {ncol} values, got {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise ParseError(path, k, "non-numeric value") from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(path, k, "non-finite value")
        if ncol == 6 and not all(v.is_integer() and 0 <= v <= 255 for v in vals[3:]):
            raise ParseError(path, k, "color values must be integers in 0..255")
        data[row] = vals
        row += 1
    if row != count:
        raise ParseError(path, len(text), f"declared {count} vertices, found {row}")
    colors = data[:, 3:6].astype(np.uint8) if ncol == 6 else None
    return PointCloud(data[:, :3], colors)


def save_pgm16(depth: DepthMap, path) -> None:
    h, w = depth.values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(depth.values.astype(">u2").tobytes())


def load_pgm16(path) -> DepthMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    toks = []
    pos = 0
    while len(toks) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(path, 1, "truncated PGM header")
        toks.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if toks[0] != b"P5":
        raise ParseError(path, 1, "not a binary PGM (P5)")
    w, h, maxval = (int(t) for t in toks[1:])
    if maxval < 256:
        raise ParseError(path, 1, "depth PGM must use 16-bit samples")
    need = w * h * 2
    if len(raw) - pos < need:
        raise ParseError(path, 1, f"expected {need} bytes of samples, found {len(raw) - pos}")
    vals = np.frombuffer(raw, dtype=">u2", count=w * h, offset=pos).reshape(h, w)
    return DepthMap(vals.astype(np.uint16))


def load_scene(path, load_depth=True):
    """Read a scene JSON; returns (intrinsics, frames)."""
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    try:
        intr = Intrinsics(**{k: doc["intrinsics"][k] for k in ("fx", "fy", "cx", "cy", "width", "height")})
        frames = []
        for f in doc["frames"]:
            R = np.asarray(f["rotation"], dtype=np.float64).reshape(3, 3)
            pose = Pose(R, f["translation"])
            depth = None
            if load_depth and f.get("depth_file"):
                depth = load_pgm16(path.parent / f["depth_file"])
            frames.append(CameraFrame(str(f["id"]), intr, pose, depth, f.get("rgb_file")))
    except (KeyError, TypeError) as exc:
        raise InvalidInput(f"{path}: malformed scene document ({exc})") from None
    return intr, frames


def save_scene(path, intr: Intrinsics, frames, depth_files) -> None:
    doc = {"intrinsics": intr.to_dict(), "frames": []}
    for f, dfile in zip(frames, depth_files):
        entry = {"id": f.id, "rotation": f.pose.rotation.reshape(-1).tolist(),
                 "translation": f.pose.translation.tolist(), "depth_file": dfile}
        if f.rgb_file:
            entry["rgb_file"] = f.rgb_file
        doc["frames"].append(entry)
    write_json(path, doc)


def box_to_dict(box: BoundingBox2D, proposal_index=None):
    d = {"xmin": box.xmin, "ymin": box.ymin, "xmax": box.xmax, "ymax": box.ymax}
    if box.label is not None:
        d["label"] = box.label
    if proposal_index is not None:
        d["proposal_index"] = int(proposal_index)
    return d


def save_boxes(path, frame_boxes) -> None:
    """``frame_boxes``: list of (frame_id, [box or (box, proposal_index)])."""
    frames = []
    for fid, boxes in frame_boxes:
        out = []
        for b in boxes:
            if isinstance(b, tuple):
                out.append(box_to_dict(*b))
            else:
                out.append(box_to_dict(b))
        frames.append({"id": fid, "boxes": out})
    write_json(path, {"frames": frames})


def load_boxes(path):
    """Returns an ordered dict-like list of (frame_id, [BoundingBox2D])."""
    with open(path) as fh:
        doc = json.load(fh)
    out = []
    for f in doc["frames"]:
        boxes = [BoundingBox2D(b["xmin"], b["ymin"], b["xmax"], b["ymax"], b.get("label"))
                 for b in f["boxes"]]
        out.append((str(f["id"]), boxes))
    return out


def load_detections(path):
    """Scored detections: ``{"detections": [{frame_id, xmin, ymin, xmax, ymax,
    label, score}]}``."""
    from .evaluation import ScoredDetection

    doc = read_json(path)
    try:
        return [ScoredDetection(str(d["frame_id"]),
                                BoundingBox2D(d["xmin"], d["ymin"], d["xmax"], d["ymax"], d["label"]),
                                str(d["label"]), float(d["score"]))
                for d in doc["detections"]]
    except (KeyError, TypeError) as exc:
        raise InvalidInput(f"{path}: malformed detections document ({exc})") from None


def load_correspondences(path):
    """Returns (Z, z, frame_ids-or-None) arrays from a ``Z,z[,frame]`` CSV."""
    Zs, zs, fids = [], [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if lineno == 1 and row[0].strip() in ("Z", "sfm_depth"):
                continue
            try:
                Zs.append(float(row[0]))
                zs.append(float(row[1]))
            except (ValueError, IndexError):
                raise ParseError(path, lineno, "expected 'Z,z' numeric pair") from None
            fids.append(row[2].strip() if len(row) > 2 else None)
    frame_ids = None if all(f is None for f in fids) else fids
    return np.asarray(Zs), np.asarray(zs), frame_ids


def save_correspondences(path, Z, z, frame_ids=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Z", "z"] + (["frame"] if frame_ids is not None else []))
        for i in range(len(Z)):
            row = [repr(float(Z[i])), repr(float(z[i]))]
            if frame_ids is not None:
                row.append(frame_ids[i])
            w.writerow(row)


def write_json(path, obj, compact=False) -> None:
    """Write JSON atomically (temp file + rename). ``compact`` drops
    indentation, for documents carrying long index lists."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        if compact:
            json.dump(obj, fh, separators=(",", ":"))
        else:
            json.dump(obj, fh, indent=1, sort_keys=False)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
