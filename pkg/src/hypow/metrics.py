"""Open-world detection scoring: IoU matching, VOC AP, U-Recall and A-OSE.

Boxes are ``(x1, y1, x2, y2)`` tuples. Detections labelled ``UNKNOWN`` are
unknown predictions; background predictions never enter the stream.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNKNOWN = -1
IOU_THRESHOLD = 0.5
DET_SCHEMA = "hypow.detection/1"
GT_SCHEMA = "hypow.ground_truth/1"


@dataclass(frozen=True)
class Detection:
    scene_id: int
    label: int
    confidence: float
    box: tuple[float, float, float, float]


@dataclass(frozen=True)
class GroundTruth:
    scene_id: int
    class_id: int
    box: tuple[float, float, float, float]
    unknown: bool = False


def iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _order(dets: Sequence[Detection]) -> list[int]:
    # descending confidence; ties broken by scene id then box coordinates
    return sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, dets[i].scene_id, dets[i].box))


def _greedy(dets: Sequence[Detection], gts: Sequence[GroundTruth], thr: float) -> list[int]:
    """Index of the ground truth each detection (in input order) claims, or -1."""
    taken = [False] * len(gts)
    by_scene: dict[int, list[int]] = {}
    for j, g in enumerate(gts):
        by_scene.setdefault(g.scene_id, []).append(j)
    out = [-1] * len(dets)
    for i in _order(dets):
        best, best_iou = -1, thr
        for j in by_scene.get(dets[i].scene_id, ()):
            if taken[j]:
                continue
            v = iou(dets[i].box, gts[j].box)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
            out[i] = best
    return out


@dataclass
class ClassPR:
    confidences: list[float]
    tp: list[bool]
    n_gt: int


def match_and_score(
    detections: Sequence[Detection], ground_truth: Sequence[GroundTruth], iou_threshold: float = IOU_THRESHOLD
) -> dict[int, ClassPR]:
    """Per known class: confidence-sorted TP/FP flags and the ground-truth count."""
    classes = sorted({g.class_id for g in ground_truth if not g.unknown} | {d.label for d in detections if d.label != UNKNOWN})
    out = {}
    for k in classes:
        dets = [d for d in detections if d.label == k]
        gts = [g for g in ground_truth if g.class_id == k and not g.unknown]
        claim = _greedy(dets, gts, iou_threshold)
        order = _order(dets)
        out[k] = ClassPR([dets[i].confidence for i in order], [claim[i] >= 0 for i in order], len(gts))
    return out


def average_precision(pr: ClassPR) -> float | None:
    """All-point interpolated AP; ``None`` for a class without ground truth."""
    if pr.n_gt == 0:
        return None
    if not pr.tp:
        return 0.0
    tp = np.cumsum(np.asarray(pr.tp, dtype=float))
    fp = np.cumsum(~np.asarray(pr.tp))
    rec = tp / pr.n_gt
    prec = tp / np.maximum(tp + fp, np.finfo(float).eps)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    i = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def u_recall(detections: Sequence[Detection], ground_truth: Sequence[GroundTruth], iou_threshold: float = IOU_THRESHOLD):
    """Fraction of unknown ground truth claimed by unknown detections; ``None`` without unknown GT."""
    gts = [g for g in ground_truth if g.unknown]
    if not gts:
        return None
    dets = [d for d in detections if d.label == UNKNOWN]
    claim = _greedy(dets, gts, iou_threshold)
    return sum(c >= 0 for c in claim) / len(gts)


def a_ose(detections: Sequence[Detection], ground_truth: Sequence[GroundTruth], iou_threshold: float = IOU_THRESHOLD) -> int:
    """Known-class detections that overlap an unknown object and match no known object of their class."""
    unknown_gt = [g for g in ground_truth if g.unknown]
    if not unknown_gt:
        return 0
    count = 0
    for k in sorted({d.label for d in detections if d.label != UNKNOWN}):
        dets = [d for d in detections if d.label == k]
        gts = [g for g in ground_truth if g.class_id == k and not g.unknown]
        claim = _greedy(dets, gts, iou_threshold)
        for d, c in zip(dets, claim):
            if c < 0 and any(g.scene_id == d.scene_id and iou(d.box, g.box) >= iou_threshold for g in unknown_gt):
                count += 1
    return count


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def grouped_map(per_class_ap: dict[int, float | None], previous: Iterable[int], current: Iterable[int]):
    """Mean AP over previously known classes, newly introduced classes, and both."""
    previous, current = sorted(set(previous)), sorted(set(current))
    prev = _mean(per_class_ap.get(k) for k in previous)
    cur = _mean(per_class_ap.get(k) for k in current)
    both = _mean(per_class_ap.get(k) for k in previous + current)
    return prev, cur, both


@dataclass
class MetricsReport:
    u_recall: float | None
    map_previous: float | None
    map_current: float | None
    map_both: float | None
    a_ose: int
    per_class_ap: dict[int, float | None] = field(default_factory=dict)
    task: int | None = None
    n_unknown_detections: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_ap"] = {str(k): v for k, v in sorted(self.per_class_ap.items())}
        return d


def evaluate(
    detections: Sequence[Detection],
    ground_truth: Sequence[GroundTruth],
    previous: Iterable[int] = (),
    current: Iterable[int] | None = None,
    task: int | None = None,
    iou_threshold: float = IOU_THRESHOLD,
) -> MetricsReport:
    """Score a detection stream; ``current`` defaults to every known GT class not in ``previous``."""
    previous = set(previous)
    if current is None:
        current = {g.class_id for g in ground_truth if not g.unknown} - previous
    known = previous | set(current)
    dets = [d for d in detections if d.label == UNKNOWN or d.label in known]
    gts = [g for g in ground_truth if g.unknown or g.class_id in known]
    pr = match_and_score(dets, gts, iou_threshold)
    ap = {k: average_precision(pr[k]) if k in pr else None for k in sorted(known)}
    prev, cur, both = grouped_map(ap, previous, current)
    return MetricsReport(
        u_recall=u_recall(dets, gts, iou_threshold),
        map_previous=prev,
        map_current=cur,
        map_both=both,
        a_ose=a_ose(dets, gts, iou_threshold),
        per_class_ap=ap,
        task=task,
        n_unknown_detections=sum(d.label == UNKNOWN for d in dets),
    )


# line-delimited JSON streams


def _label_out(label: int):
    return "unknown" if label == UNKNOWN else int(label)


def _label_in(label) -> int:
    return UNKNOWN if label == "unknown" else int(label)


def write_detections(path, detections: Iterable[Detection]) -> None:
    with open(path, "w") as fh:
        for d in detections:
            rec = {"schema": DET_SCHEMA, "scene_id": d.scene_id, "label": _label_out(d.label),
                   "confidence": d.confidence, "box": list(d.box)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_ground_truth(path, ground_truth: Iterable[GroundTruth]) -> None:
    with open(path, "w") as fh:
        for g in ground_truth:
            rec = {"schema": GT_SCHEMA, "scene_id": g.scene_id, "class_id": g.class_id,
                   "box": list(g.box), "unknown": g.unknown}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _records(path, schema: str):
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        if rec.get("schema", schema) != schema:
            raise ValueError(f"{path}:{lineno}: expected schema {schema}, got {rec.get('schema')}")
        yield lineno, rec


def _box(raw, where: str):
    if len(raw) != 4 or not (raw[0] <= raw[2] and raw[1] <= raw[3]):
        raise ValueError(f"{where}: invalid box {raw}")
    return tuple(float(v) for v in raw)


def read_detections(path) -> list[Detection]:
    out = []
    for lineno, r in _records(path, DET_SCHEMA):
        where = f"{path}:{lineno}"
        conf = float(r["confidence"])
        if not np.isfinite(conf):
            raise ValueError(f"{where}: non-finite confidence")
        out.append(Detection(int(r["scene_id"]), _label_in(r["label"]), conf, _box(r["box"], where)))
    return out


def read_ground_truth(path) -> list[GroundTruth]:
    return [
        GroundTruth(int(r["scene_id"]), int(r["class_id"]), _box(r["box"], f"{path}:{n}"), bool(r.get("unknown", False)))
        for n, r in _records(path, GT_SCHEMA)
    ]
