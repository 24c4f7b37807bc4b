"""Flat per-class AP at a single IoU threshold and its class mean (mAP)."""

from __future__ import annotations

import csv
import io
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Union

from ._parallel import ordered_map
from .detections import Detection, DetectionSet, GroundTruthSet, canonical_key
from .geometry import BBox, iou

MAP_ROW_LABEL = "__mAP__"
REPORT_HEADER = ("label", "ap", "tp", "fp", "fn", "gt_count")


@dataclass(frozen=True)
class MatchParams:
    iou_match_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.iou_match_threshold <= 1.0):
            raise ValueError(f"iou_match_threshold must be in (0, 1], got {self.iou_match_threshold}")


ImageDetection = tuple[str, Detection]


def sort_for_matching(dets: Sequence[ImageDetection]) -> list[ImageDetection]:
    """Score descending; ties broken by image id then canonical detection order."""
    return sorted(dets, key=lambda x: (-x[1].score, x[0], canonical_key(x[1])))


def match_assignments(
    dets: Sequence[ImageDetection],
    gt: Mapping[str, Sequence[BBox]],
    params: MatchParams | None = None,
) -> list[int]:
    """Greedy matching; returns the matched GT index per detection, or -1.

    ``dets`` must already be sorted with :func:`sort_for_matching`. Each
    detection takes the highest-IoU GT box of its image that is still free
    and overlaps by at least the threshold (lowest index on IoU ties).
    """
    params = params or MatchParams()
    thr = params.iou_match_threshold
    used: dict[str, list[bool]] = {img: [False] * len(boxes) for img, boxes in gt.items()}
    out = []
    for img, d in dets:
        boxes = gt.get(img, ())
        taken = used.get(img)
        best, best_iou = -1, -1.0
        for j, g in enumerate(boxes):
            if taken[j]:
                continue
            o = iou(d.box, g)
            if o >= thr and o > best_iou:
                best, best_iou = j, o
        if best >= 0:
            taken[best] = True
        out.append(best)
    return out


def match_class(
    dets: Sequence[ImageDetection],
    gt: Mapping[str, Sequence[BBox]],
    params: MatchParams | None = None,
) -> list[bool]:
    """TP/FP flag per detection (same order as ``dets``)."""
    return [j >= 0 for j in match_assignments(dets, gt, params)]


def average_precision(flags: Sequence[bool], gt_count: int) -> float:
    """All-point interpolated AP for detections already in score order.

    Computed in exact rational arithmetic: every true positive adds
    ``1 / gt_count`` of recall, weighted by the best precision reached at
    that rank or any later one. Returns 0.0 when ``gt_count`` is 0.
    """
    if gt_count < 0:
        raise ValueError("gt_count must be >= 0")
    if gt_count == 0:
        return 0.0
    precisions = []
    tp = 0
    for rank, hit in enumerate(flags, start=1):
        if hit:
            tp += 1
            precisions.append(Fraction(tp, rank))
    if tp > gt_count:
        raise ValueError(f"{tp} true positives exceed gt_count {gt_count}")
    total = Fraction(0)
    running = Fraction(0)
    for p in reversed(precisions):
        running = max(running, p)
        total += running
    return float(total / gt_count)


@dataclass(frozen=True)
class ClassResult:
    ap: float
    tp: int
    fp: int
    fn: int
    gt_count: int


@dataclass(frozen=True)
class EvalReport:
    per_class: dict[str, ClassResult] = field(default_factory=dict)
    mAP: float = 0.0

    @property
    def ap(self) -> dict[str, float]:
        return {label: r.ap for label, r in self.per_class.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for label, r in self.per_class.items():
            w.writerow([label, f"{r.ap:.6f}", r.tp, r.fp, r.fn, r.gt_count])
        w.writerow([MAP_ROW_LABEL, f"{self.mAP:.6f}", "", "", "", ""])
        return buf.getvalue()

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write(self.to_csv())

    def summary(self) -> str:
        width = max([len(label) for label in self.per_class] + [5])
        lines = [f"{'class':<{width}}  {'AP':>8}  {'TP':>6}  {'FP':>6}  {'FN':>6}  {'GT':>6}"]
        for label, r in self.per_class.items():
            lines.append(f"{label:<{width}}  {r.ap:8.4f}  {r.tp:6d}  {r.fp:6d}  {r.fn:6d}  {r.gt_count:6d}")
        lines.append(f"{len(self.per_class)} classes, mAP {self.mAP:.6f}")
        return "\n".join(lines)


def _gt_by_class(gt: GroundTruthSet) -> dict[str, dict[str, list[BBox]]]:
    out: dict[str, dict[str, list[BBox]]] = {}
    for img, boxes in gt.items():
        for g in boxes:
            out.setdefault(g.label, {}).setdefault(img, []).append(g.box)
    return out


def _dets_by_class(ds: DetectionSet) -> dict[str, list[ImageDetection]]:
    out: dict[str, list[ImageDetection]] = {}
    for img, dets in ds.items():
        for d in dets:
            out.setdefault(d.label, []).append((img, d))
    return out


def evaluate_class(
    dets: Sequence[ImageDetection],
    gt: Mapping[str, Sequence[BBox]],
    params: MatchParams | None = None,
) -> ClassResult:
    ordered = sort_for_matching(dets)
    flags = match_class(ordered, gt, params)
    gt_count = sum(len(v) for v in gt.values())
    tp = sum(flags)
    return ClassResult(
        ap=average_precision(flags, gt_count),
        tp=tp,
        fp=len(flags) - tp,
        fn=gt_count - tp,
        gt_count=gt_count,
    )


def evaluate(
    ds: DetectionSet,
    gt: GroundTruthSet,
    params: MatchParams | None = None,
    threads: int = 1,
) -> EvalReport:
    """Per-class AP over every class with at least one GT box, and their mean."""
    params = params or MatchParams()
    gt_cls = _gt_by_class(gt)
    det_cls = _dets_by_class(ds)
    labels = sorted(gt_cls)
    results = ordered_map(
        lambda label: evaluate_class(det_cls.get(label, []), gt_cls[label], params), labels, threads
    )
    per_class = dict(zip(labels, results))
    m = sum(r.ap for r in results) / len(results) if results else 0.0
    return EvalReport(per_class=per_class, mAP=m)
