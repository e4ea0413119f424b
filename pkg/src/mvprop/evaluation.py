"""Proposal recall, proposal labelling and detection AP."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import BoundingBox2D, InvalidInput

DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
POSITIVE_IOU = 0.5
BACKGROUND_IOU = 0.3


def iou_2d(a: BoundingBox2D, b: BoundingBox2D) -> float:
    """Continuous-area IoU; 0 for disjoint or zero-area boxes."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return float(inter / union) if union > 0 else 0.0


def _as_array(boxes):
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([[b.xmin, b.ymin, b.xmax, b.ymax] for b in boxes], dtype=np.float64)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU of two box lists (or (n, 4) arrays); rows follow ``a``."""
    A = a if isinstance(a, np.ndarray) else _as_array(a)
    B = b if isinstance(b, np.ndarray) else _as_array(b)
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where((union > 0) & (inter > 0), inter / union, 0.0)


def _frame_map(frames):
    """Accept a dict or a list of (frame_id, boxes) / FrameProposals."""
    if isinstance(frames, dict):
        return dict(frames)
    out = {}
    for f in frames:
        if hasattr(f, "frame_id"):
            out[f.frame_id] = list(f.boxes)
        else:
            fid, boxes = f
            out[fid] = list(boxes)
    return out


@dataclass
class RecallReport:
    classes: list
    thresholds: list
    recall: np.ndarray          # (classes, thresholds)
    proposals_per_image: float
    gt_counts: Optional[list] = None

    def __post_init__(self):
        self.recall = np.asarray(self.recall, dtype=np.float64).reshape(len(self.classes), len(self.thresholds))
        if self.recall.size and (self.recall.min() < 0 or self.recall.max() > 1):
            raise InvalidInput("recall values must lie in [0, 1]")

    def at(self, threshold: float) -> dict:
        j = int(np.argmin(np.abs(np.asarray(self.thresholds) - threshold)))
        if abs(self.thresholds[j] - threshold) > 1e-9:
            raise KeyError(f"threshold {threshold} not in report")
        return {c: float(self.recall[i, j]) for i, c in enumerate(self.classes)}

    def average(self, threshold: float, exclude=()) -> float:
        return class_average(self.at(threshold), exclude)

    def to_json(self):
        return {"classes": list(self.classes), "thresholds": list(self.thresholds),
                "recall": self.recall.tolist(), "proposals_per_image": self.proposals_per_image,
                "gt_counts": self.gt_counts}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class"] + [f"{t:.2f}" for t in self.thresholds])
            for c, row in zip(self.classes, self.recall):
                w.writerow([c] + [repr(float(x)) for x in row])
            w.writerow(["proposals_per_image", repr(float(self.proposals_per_image))])


def recall_report(proposals, gt, thresholds=DEFAULT_THRESHOLDS) -> RecallReport:
    """Per-class recall: a ground-truth box counts as found at threshold t if
    any proposal in its frame overlaps it with IoU >= t."""
    props = _frame_map(proposals)
    truth = _frame_map(gt)
    missing = set(truth) - set(props)
    if missing:
        raise InvalidInput(f"{len(missing)} ground-truth frames have no proposal entry")
    thr = np.asarray(list(thresholds), dtype=np.float64)
    classes = sorted({b.label for boxes in truth.values() for b in boxes if b.label is not None})
    cidx = {c: i for i, c in enumerate(classes)}
    hits = np.zeros((len(classes), len(thr)))
    totals = np.zeros(len(classes))
    for fid in sorted(truth):
        gboxes = [b for b in truth[fid] if b.label is not None]
        if not gboxes:
            continue
        best = iou_matrix(gboxes, props[fid]).max(axis=1, initial=0.0)
        for b, m in zip(gboxes, best):
            i = cidx[b.label]
            totals[i] += 1
            hits[i] += m >= thr
    with np.errstate(invalid="ignore"):
        rec = np.where(totals[:, None] > 0, hits / np.maximum(totals[:, None], 1), 0.0)
    ppi = float(np.mean([len(props[f]) for f in props])) if props else 0.0
    return RecallReport(classes, [float(t) for t in thr], rec, ppi, [int(t) for t in totals])


def class_average(per_class: dict, exclude=()) -> float:
    """Unweighted mean recall over classes not in ``exclude``."""
    ex = set(exclude or ())
    vals = [v for c, v in per_class.items() if c not in ex]
    if not vals:
        raise InvalidInput("no classes left to average")
    return float(math.fsum(vals) / len(vals))


@dataclass(frozen=True)
class ProposalLabel:
    kind: str                   # "positive", "background" or "ignore"
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("positive", "background", "ignore"):
            raise InvalidInput(f"unknown proposal label kind {self.kind!r}")
        if (self.kind == "positive") != (self.label is not None):
            raise InvalidInput("only positive labels carry a class")


def label_proposals(proposals, gt):
    """Label each proposal box from its best-overlapping ground truth in the
    same frame. Returns ``{frame_id: [ProposalLabel]}``."""
    props = _frame_map(proposals)
    truth = _frame_map(gt)
    out = {}
    for fid, boxes in props.items():
        g = [b for b in truth.get(fid, []) if b.label is not None]
        M = iou_matrix(boxes, g)
        labels = []
        for r in range(len(boxes)):
            if M.shape[1] == 0:
                labels.append(ProposalLabel("background"))
                continue
            j = int(np.argmax(M[r]))
            m = M[r, j]
            if m > POSITIVE_IOU:
                labels.append(ProposalLabel("positive", g[j].label))
            elif m < BACKGROUND_IOU:
                labels.append(ProposalLabel("background"))
            else:
                labels.append(ProposalLabel("ignore"))
        out[fid] = labels
    return out


@dataclass(frozen=True)
class ScoredDetection:
    frame_id: str
    box: BoundingBox2D
    label: str
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InvalidInput("detection scores must be finite")


def _ap_from_pr(tp, n_gt, eleven_point=False):
    if n_gt == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    rec = ctp / n_gt
    prec = ctp / (ctp + cfp)
    if eleven_point:
        return float(np.mean([prec[rec >= t].max() if (rec >= t).any() else 0.0
                              for t in np.linspace(0, 1, 11)]))
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def average_precision(dets, gt, iou_threshold: float = 0.5, eleven_point: bool = False):
    """Per-class AP with greedy score-ordered matching, plus mAP over classes
    that have ground truth. Returns ``(ap: dict, mAP)``; classes without
    ground truth map to NaN and are left out of the mean."""
    truth = _frame_map(gt)
    gt_by_class = {}
    for fid, boxes in truth.items():
        for b in boxes:
            if b.label is not None:
                gt_by_class.setdefault(b.label, {}).setdefault(fid, []).append(b)
    classes = sorted(set(gt_by_class) | {d.label for d in dets})
    ap = {}
    for c in classes:
        cd = [d for d in dets if d.label == c]
        # stable order: score desc, then frame id and input order
        order = sorted(range(len(cd)), key=lambda k: (-cd[k].score, cd[k].frame_id, k))
        g = gt_by_class.get(c, {})
        n_gt = sum(len(v) for v in g.values())
        used = {fid: np.zeros(len(v), dtype=bool) for fid, v in g.items()}
        tp = np.zeros(len(cd))
        for r, k in enumerate(order):
            d = cd[k]
            boxes = g.get(d.frame_id, [])
            if not boxes:
                continue
            ious = iou_matrix([d.box], boxes)[0]
            ious[used[d.frame_id]] = -1.0
            j = int(np.argmax(ious))
            if ious[j] >= iou_threshold:
                used[d.frame_id][j] = True
                tp[r] = 1
        ap[c] = _ap_from_pr(tp, n_gt, eleven_point)
    defined = [v for v in ap.values() if not math.isnan(v)]
    mean_ap = float(np.mean(defined)) if defined else float("nan")
    return ap, mean_ap


def write_ap_csv(path, ap: dict, mean_ap: float):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "ap"])
        for c in sorted(ap):
            w.writerow([c, "" if math.isnan(ap[c]) else repr(ap[c])])
        w.writerow(["mAP", "" if math.isnan(mean_ap) else repr(mean_ap)])
