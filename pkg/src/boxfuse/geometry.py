"""Axis-aligned box arithmetic in normalized image coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True, slots=True, order=True)
class BBox:
    """Rectangle ``(xmin, ymin, xmax, ymax)`` with coordinates in [0, 1].

    Degenerate (zero-area) boxes are allowed, inverted ones are not.
    """

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        coords = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinate in {coords}")
        if not all(0.0 <= c <= 1.0 for c in coords):
            raise ValueError(f"box coordinate outside [0, 1] in {coords}")
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise ValueError(f"inverted box {coords}")

    @classmethod
    def clipped(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "BBox":
        """Build a box after clipping each coordinate to [0, 1].

        Inverted input is rejected before clipping so that clipping never
        hides a malformed box.
        """
        if xmin > xmax or ymin > ymax:
            raise ValueError(f"inverted box {(xmin, ymin, xmax, ymax)}")
        return cls(_clip01(xmin), _clip01(ymin), _clip01(xmax), _clip01(ymax))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def center(self) -> tuple[float, float]:
        return ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)


def _clip01(v: float) -> float:
    if not math.isfinite(v):
        raise ValueError(f"non-finite coordinate {v}")
    return min(1.0, max(0.0, v))


def area(b: BBox) -> float:
    return (b.xmax - b.xmin) * (b.ymax - b.ymin)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0.0 when the union is empty."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    # guard against rounding pushing the ratio a hair above 1
    return min(1.0, inter / union)


def mean_box(boxes: Sequence[BBox]) -> BBox:
    """Coordinate-wise arithmetic mean of ``boxes``."""
    if not boxes:
        raise ValueError("mean_box needs at least one box")
    if len(boxes) == 1:
        return boxes[0]
    n = len(boxes)
    coords = [math.fsum(c) / n for c in zip(*(b.as_tuple() for b in boxes))]
    # the mean of a set of identical floats can land one ulp off the envelope
    lo = [min(c) for c in zip(*(b.as_tuple() for b in boxes))]
    hi = [max(c) for c in zip(*(b.as_tuple() for b in boxes))]
    coords = [min(h, max(l, c)) for c, l, h in zip(coords, lo, hi)]
    return BBox(*coords)


def center_distance(a: BBox, b: BBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)
