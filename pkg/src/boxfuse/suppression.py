"""Per-set post-processing: greedy hard NMS and SoftNMS."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from ._parallel import ordered_map
from .detections import Detection, DetectionSet, canonical_key, canonical_sort
from .geometry import iou


class SoftNmsMethod(str, Enum):
    HARD = "hard"
    LINEAR = "linear"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class SoftNmsParams:
    method: SoftNmsMethod = SoftNmsMethod.GAUSSIAN
    iou_threshold: float = 0.5
    sigma: float = 0.5
    score_floor: float = 0.001

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", SoftNmsMethod(self.method))
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not (0.0 <= self.score_floor < 1.0):
            raise ValueError(f"score_floor must be in [0, 1), got {self.score_floor}")


def hard_nms(dets: list[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy NMS over one (image, label) group.

    Keeps the best remaining detection and drops everything overlapping it
    with IoU strictly above ``iou_threshold``. Scores are left untouched.
    """
    remaining = canonical_sort(dets)
    keep: list[Detection] = []
    while remaining:
        best = remaining[0]
        keep.append(best)
        remaining = [d for d in remaining[1:] if iou(best.box, d.box) <= iou_threshold]
    return keep


def _decay(overlap: float, params: SoftNmsParams) -> float:
    if params.method is SoftNmsMethod.GAUSSIAN:
        return math.exp(-(overlap * overlap) / params.sigma)
    if overlap <= params.iou_threshold:
        return 1.0
    if params.method is SoftNmsMethod.LINEAR:
        return 1.0 - overlap
    return 0.0


def soft_nms(dets: list[Detection], params: SoftNmsParams | None = None) -> list[Detection]:
    """SoftNMS over one (image, label) group.

    Every time a detection is selected, the scores of the ones still in the
    pool are multiplied by a decay of their IoU with it; anything that falls
    below ``params.score_floor`` is dropped.
    """
    params = params or SoftNmsParams()
    pool = [d for d in dets if d.score >= params.score_floor]
    out: list[Detection] = []
    while pool:
        i = min(range(len(pool)), key=lambda j: canonical_key(pool[j]))
        best = pool.pop(i)
        out.append(best)
        survivors = []
        for d in pool:
            factor = _decay(iou(best.box, d.box), params)
            if factor != 1.0:
                d = d.with_score(d.score * factor)
            if d.score >= params.score_floor:
                survivors.append(d)
        pool = survivors
    return canonical_sort(out)


def suppress_set(
    ds: DetectionSet,
    params: SoftNmsParams | None = None,
    algorithm: str = "softnms",
    threads: int = 1,
) -> DetectionSet:
    """Run hard NMS (``"nms"``) or SoftNMS (``"softnms"``) per (image, label)."""
    params = params or SoftNmsParams()
    if algorithm == "nms":
        fn = lambda group: hard_nms(group[2], params.iou_threshold)  # noqa: E731
    elif algorithm == "softnms":
        fn = lambda group: soft_nms(group[2], params)  # noqa: E731
    else:
        raise ValueError(f"unknown suppression algorithm {algorithm!r}")
    groups = list(ds.groups())
    results = ordered_map(fn, groups, threads)
    out: dict[str, list[Detection]] = {img: [] for img in ds}
    for (img, _, _), kept in zip(groups, results):
        out[img].extend(kept)
    return DetectionSet(out)
