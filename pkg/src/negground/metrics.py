"""Described-object-detection metrics.

Every caption is evaluated as its own category. Standard AP lets a model
score well by firing on both captions of a contradictory pair at the same
place; NMS-AP first runs class-ignored NMS over all captions' detections
in an image so only one of the two boxes can survive.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import (EmptyCandidates, InvalidBox, MixedImages, NoNegativeQueries,
                         NoPositiveQueries, NonFiniteInput, UnknownCaption)

PROTOCOLS = {
    "coco": tuple(np.round(np.linspace(0.5, 0.95, 10), 2)),
    "ap50": (0.5,),
}
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
DEFAULT_MAX_DETS = 100


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBox(f"non-finite box {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidBox(f"box needs x1 < x2 and y1 < y2, got {vals}")

    @classmethod
    def of(cls, seq) -> "Box":
        if isinstance(seq, Box):
            return seq
        if len(seq) != 4:
            raise InvalidBox(f"box needs 4 coordinates, got {len(seq)}")
        return cls(*(float(v) for v in seq))

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float
    caption_id: object
    image_id: object

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise NonFiniteInput(f"detection score {self.score} is not finite")

    @classmethod
    def from_dict(cls, obj) -> "Detection":
        return cls(Box.of(obj["box"]), float(obj["score"]), obj["caption_id"], obj["image_id"])

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "caption_id": self.caption_id,
                "box": self.box.as_list(), "score": self.score}


@dataclass(frozen=True)
class Query:
    caption_id: object
    text: str = ""
    polarity: str = "positive"
    contradicts: object = None


@dataclass
class QuerySet:
    queries: dict
    ground_truth: dict = field(default_factory=dict)

    def __post_init__(self):
        for q in self.queries.values():
            if q.polarity not in ("positive", "negative"):
                raise ValueError(f"query {q.caption_id!r}: polarity must be positive or negative")
            if q.contradicts is not None:
                other = self.queries.get(q.contradicts)
                if other is None or other.contradicts != q.caption_id:
                    raise ValueError(f"query {q.caption_id!r}: 'contradicts' must be symmetric")
        for (_, cid) in self.ground_truth:
            if cid not in self.queries:
                raise UnknownCaption(f"ground truth refers to unknown caption {cid!r}")

    @classmethod
    def from_dict(cls, obj) -> "QuerySet":
        queries = {}
        for q in obj.get("queries", []):
            queries[q["caption_id"]] = Query(q["caption_id"], q.get("text", ""),
                                             q.get("polarity", "positive"), q.get("contradicts"))
        gt = defaultdict(list)
        for entry in obj.get("ground_truth", []):
            key = (entry["image_id"], entry["caption_id"])
            gt[key].extend(Box.of(b) for b in entry.get("boxes", []))
        return cls(queries, dict(gt))

    @classmethod
    def load(cls, path) -> "QuerySet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def gt_boxes(self, image_id, caption_id) -> list:
        return self.ground_truth.get((image_id, caption_id), [])

    def n_gt(self, caption_id) -> int:
        return sum(len(v) for (_, c), v in self.ground_truth.items() if c == caption_id)

    def positive_queries(self) -> list:
        return [c for c in self.queries if self.n_gt(c) > 0]

    def empty_gt_entries(self) -> list:
        return [k for k, v in self.ground_truth.items() if not v]


def load_detections(path) -> list:
    from .formats import read_jsonl
    return [Detection.from_dict(r) for r in read_jsonl(path)]


# ------------------------------------------------------------------ geometry

def iou(a, b) -> float:
    """Intersection over union of two boxes; 0 when they do not overlap."""
    a, b = Box.of(a), Box.of(b)
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / union, 0.0)


def id_sort_key(cid):
    # int ids sort numerically and before string ids
    if isinstance(cid, (int, np.integer)) and not isinstance(cid, bool):
        return (0, int(cid), "")
    return (1, 0, str(cid))


# ----------------------------------------------------------------------- NMS

def class_ignored_nms(dets: Sequence[Detection], iou_thresh: float = 0.5) -> list:
    """Greedy NMS over one image's detections, ignoring caption labels.

    Detections are visited by descending score (ties: lower caption id, then
    input order); one is dropped when its IoU with an already kept box is
    strictly greater than ``iou_thresh``. Survivors keep their input order.
    """
    dets = list(dets)
    if not dets:
        return []
    if len({d.image_id for d in dets}) > 1:
        raise MixedImages("class_ignored_nms expects detections from a single image")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, id_sort_key(dets[i].caption_id), i))
    ious = iou_matrix([d.box.as_list() for d in dets], [d.box.as_list() for d in dets])
    suppressed = np.zeros(len(dets), dtype=bool)
    keep = np.zeros(len(dets), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep[i] = True
        suppressed |= ious[i] > iou_thresh
    return [d for d, k in zip(dets, keep) if k]


class _Indexed:
    """Detection proxy remembering its position in the caller's list."""

    __slots__ = ("box", "score", "caption_id", "image_id", "index")

    def __init__(self, det, index):
        self.box, self.score = det.box, det.score
        self.caption_id, self.image_id = det.caption_id, det.image_id
        self.index = index


def _group_by(dets, key):
    groups = defaultdict(list)
    for d in dets:
        groups[key(d)].append(d)
    return groups


def nms_per_image(dets: Iterable[Detection], iou_thresh: float = 0.5) -> list:
    """Class-ignored NMS on every image separately; input order preserved."""
    dets = list(dets)
    keep = np.zeros(len(dets), dtype=bool)
    for idx in _group_by(range(len(dets)), lambda i: dets[i].image_id).values():
        survivors = class_ignored_nms([_Indexed(dets[i], i) for i in idx], iou_thresh)
        keep[[s.index for s in survivors]] = True
    return [d for d, k in zip(dets, keep) if k]


def cap_detections(dets: Iterable[Detection], max_dets: Optional[int] = DEFAULT_MAX_DETS) -> list:
    """Keep the ``max_dets`` best-scoring detections per (image, caption)."""
    dets = list(dets)
    if max_dets is None:
        return dets
    keep = np.zeros(len(dets), dtype=bool)
    for idx in _group_by(range(len(dets)), lambda i: (dets[i].image_id, dets[i].caption_id)).values():
        ranked = sorted(idx, key=lambda i: -dets[i].score)
        keep[ranked[:max_dets]] = True
    return [d for d, k in zip(dets, keep) if k]


# ------------------------------------------------------------ AP / AR core

def _match(dets: list, gts: list, thr: float) -> np.ndarray:
    """Greedy matching on one image: True where a detection is a TP.

    ``dets`` must already be sorted by descending score.
    """
    tp = np.zeros(len(dets), dtype=bool)
    if not gts or not dets:
        return tp
    ious = iou_matrix([d.box.as_list() for d in dets], [g.as_list() for g in gts])
    taken = np.zeros(len(gts), dtype=bool)
    for i in range(len(dets)):
        cand = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(cand))
        if cand[j] >= thr:
            taken[j] = True
            tp[i] = True
    return tp


def _query_tp(dets: list, qs: QuerySet, caption_id, thr: float):
    """Scores (descending) and TP flags for one caption over all images."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    ranked = [dets[i] for i in order]
    tp = np.zeros(len(ranked), dtype=bool)
    for image_id, idx in _group_by(range(len(ranked)), lambda i: ranked[i].image_id).items():
        tp[idx] = _match([ranked[i] for i in idx], qs.gt_boxes(image_id, caption_id), thr)
    return np.array([d.score for d in ranked]), tp


def _interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    if n_gt == 0:
        return float("nan")
    if tp.size == 0:
        return 0.0
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / n_gt
    precision = tps / (tps + fps)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(q.mean())


def _check_captions(dets, qs):
    for d in dets:
        if d.caption_id not in qs.queries:
            raise UnknownCaption(f"detection refers to unknown caption {d.caption_id!r}")


def _thresholds(protocol):
    try:
        return PROTOCOLS[protocol]
    except KeyError:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {sorted(PROTOCOLS)}") from None


def per_query_scores(dets, qs: QuerySet, protocol="coco", max_dets=DEFAULT_MAX_DETS) -> dict:
    """``{caption_id: {"ap": ..., "ar": ..., "n_gt": ..., "n_dets": ...}}`` for queries with GT."""
    dets = cap_detections(dets, max_dets)
    _check_captions(dets, qs)
    by_caption = _group_by(dets, lambda d: d.caption_id)
    out = {}
    for cid in qs.positive_queries():
        n_gt = qs.n_gt(cid)
        aps, ars = [], []
        for thr in _thresholds(protocol):
            _, tp = _query_tp(by_caption.get(cid, []), qs, cid, thr)
            aps.append(_interpolated_ap(tp, n_gt))
            ars.append(tp.sum() / n_gt)
        out[cid] = {"ap": float(np.mean(aps)), "ar": float(np.mean(ars)),
                    "n_gt": n_gt, "n_dets": len(by_caption.get(cid, []))}
    return out


def average_precision(dets, qs: QuerySet, protocol="coco", max_dets=DEFAULT_MAX_DETS) -> float:
    """Mean 101-point interpolated AP over queries with at least one GT box.

    ``protocol`` is ``"coco"`` (IoU 0.50:0.05:0.95) or ``"ap50"``. Returns a
    fraction in [0, 1].
    """
    scores = per_query_scores(dets, qs, protocol, max_dets)
    if not scores:
        raise NoPositiveQueries("no query has a ground-truth box")
    return float(np.mean([s["ap"] for s in scores.values()]))


def average_recall(dets, qs: QuerySet, protocol="coco", max_dets=DEFAULT_MAX_DETS) -> float:
    scores = per_query_scores(dets, qs, protocol, max_dets)
    if not scores:
        raise NoPositiveQueries("no query has a ground-truth box")
    return float(np.mean([s["ar"] for s in scores.values()]))


def nms_ap(dets, qs: QuerySet, protocol="coco", iou_thresh=0.5, max_dets=DEFAULT_MAX_DETS) -> float:
    """AP after per-image class-ignored NMS across all captions."""
    survivors = nms_per_image(cap_detections(dets, max_dets), iou_thresh)
    return average_precision(survivors, qs, protocol, max_dets)


def nms_ar(dets, qs: QuerySet, protocol="coco", iou_thresh=0.5, max_dets=DEFAULT_MAX_DETS) -> float:
    survivors = nms_per_image(cap_detections(dets, max_dets), iou_thresh)
    return average_recall(survivors, qs, protocol, max_dets)


def precision_recall(dets, qs: QuerySet, iou_thresh=0.5, score_thresh=0.0) -> tuple:
    """Pooled precision and recall at one operating point.

    TP and FP are summed over every caption (including captions whose GT is
    empty, where every detection is a false positive).
    """
    dets = [d for d in dets if d.score >= score_thresh]
    _check_captions(dets, qs)
    tp_total = fp_total = 0
    for cid, group in _group_by(dets, lambda d: d.caption_id).items():
        _, tp = _query_tp(group, qs, cid, iou_thresh)
        tp_total += int(tp.sum())
        fp_total += int((~tp).sum())
    n_gt = sum(len(v) for v in qs.ground_truth.values())
    precision = tp_total / (tp_total + fp_total) if tp_total + fp_total else 0.0
    recall = tp_total / n_gt if n_gt else 0.0
    return precision, recall


def fpr(dets, qs: QuerySet, score_thresh: float = 0.3) -> float:
    """Percentage of empty-GT (image, caption) entries on which something fires.

    An entry fires when at least one of the given detections for that image
    and caption scores ``>= score_thresh``. Pass NMS survivors to measure
    the rate after suppression.
    """
    empty = qs.empty_gt_entries()
    if not empty:
        raise NoNegativeQueries("no (image, caption) entry has empty ground truth")
    fired = {(d.image_id, d.caption_id) for d in dets if d.score >= score_thresh}
    return 100.0 * sum(k in fired for k in empty) / len(empty)


def mcq_select(scores: Sequence[float]) -> int:
    """Index of the highest score; ties go to the lowest index."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise EmptyCandidates("need at least two candidate scores")
    if not np.isfinite(arr).all():
        raise NonFiniteInput("candidate scores must be finite")
    return int(np.argmax(arr))


# ------------------------------------------------------------------- report

@dataclass
class EvalReport:
    ap: float
    ar: float
    nms_ap: Optional[float] = None
    nms_ar: Optional[float] = None
    fpr: Optional[float] = None
    per_query: dict = field(default_factory=dict)
    n_detections: int = 0
    n_nms_detections: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "ap": self.ap, "nms_ap": self.nms_ap, "ar": self.ar, "nms_ar": self.nms_ar,
            "fpr": self.fpr, "n_detections": self.n_detections,
            "n_nms_detections": self.n_nms_detections,
            "per_query": {str(k): v for k, v in self.per_query.items()},
        }

    def to_table(self) -> str:
        cols = [("AP", self.ap), ("NMS-AP", self.nms_ap), ("AR", self.ar),
                ("NMS-AR", self.nms_ar), ("FPR", self.fpr)]
        head = " ".join(f"{name:>8}" for name, _ in cols)
        vals = " ".join(f"{'-':>8}" if v is None else f"{v:8.2f}" for _, v in cols)
        return f"{head}\n{vals}"


def evaluate(dets, qs: QuerySet, iou_thresh=0.5, score_thresh=0.3, protocol="coco",
             nms=True, max_dets=DEFAULT_MAX_DETS) -> EvalReport:
    """All metrics in one pass; AP/AR/FPR are reported in percent.

    ``iou_thresh`` is the NMS suppression threshold. FPR uses NMS survivors
    when ``nms`` is on, raw detections otherwise, and is ``None`` when the
    query set has no empty-GT entries.
    """
    dets = cap_detections(dets, max_dets)
    raw = per_query_scores(dets, qs, protocol, None)
    if not raw:
        raise NoPositiveQueries("no query has a ground-truth box")
    report = EvalReport(
        ap=100 * float(np.mean([s["ap"] for s in raw.values()])),
        ar=100 * float(np.mean([s["ar"] for s in raw.values()])),
        per_query={k: dict(v) for k, v in raw.items()},
        n_detections=len(dets),
    )
    fired_on = dets
    if nms:
        survivors = nms_per_image(dets, iou_thresh)
        post = per_query_scores(survivors, qs, protocol, None)
        report.nms_ap = 100 * float(np.mean([s["ap"] for s in post.values()]))
        report.nms_ar = 100 * float(np.mean([s["ar"] for s in post.values()]))
        report.n_nms_detections = len(survivors)
        for cid, s in post.items():
            report.per_query[cid]["nms_ap"] = s["ap"]
            report.per_query[cid]["nms_ar"] = s["ar"]
        fired_on = survivors
    if qs.empty_gt_entries():
        report.fpr = fpr(fired_on, qs, score_thresh)
    return report
