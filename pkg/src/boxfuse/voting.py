"""Top-k voting-NMS: fuse pooled detections from several models or scales.

Same-label detections are clustered greedily around the current best box
(IoU >= threshold against that seed only). Each cluster becomes a single
detection whose score is the mean of its top-k member scores and whose box
is either the seed box or the mean of the top-k member boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from ._parallel import ordered_map
from .detections import Detection, DetectionSet, canonical_sort, pool
from .geometry import BBox, iou, mean_box

ENSEMBLE_SOURCE = "ensemble"


class VotingMode(str, Enum):
    SCORE = "score"
    SCORE_LOCATION = "score-location"


@dataclass(frozen=True)
class VotingParams:
    """Knobs for :func:`topk_voting_nms`.

    ``weighted_location`` switches box averaging to a score-weighted mean.
    ``divide_by_sources`` divides the summed voter scores by
    ``min(k, num_sources)`` instead of the voter count, so that boxes seen
    by few models are penalized; ``num_sources`` must then be set
    (:func:`ensemble` fills it in).
    """

    iou_threshold: float = 0.5
    k: int = 3
    mode: VotingMode = VotingMode.SCORE_LOCATION
    all_member_voting: bool = False
    weighted_location: bool = False
    divide_by_sources: bool = False
    num_sources: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", VotingMode(self.mode))
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if self.num_sources is not None and self.num_sources < 1:
            raise ValueError(f"num_sources must be >= 1, got {self.num_sources}")

    @classmethod
    def voting_soft_nms(cls, iou_threshold: float = 0.5) -> "VotingParams":
        """All-member voting with location averaging."""
        return cls(iou_threshold=iou_threshold, mode=VotingMode.SCORE_LOCATION, all_member_voting=True)


@dataclass(frozen=True)
class Cluster:
    members: tuple[Detection, ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("a cluster needs at least one member")

    @property
    def seed(self) -> Detection:
        return self.members[0]

    @property
    def label(self) -> str:
        return self.seed.label


def cluster_once(dets: list[Detection], iou_threshold: float = 0.5) -> tuple[Cluster, list[Detection]]:
    """Split off the cluster seeded by ``dets[0]``.

    ``dets`` must already be in canonical order. Returns the cluster and the
    detections left over, still in canonical order.
    """
    if not dets:
        raise ValueError("cluster_once needs at least one detection")
    seed = dets[0]
    members = [seed]
    rest = []
    for d in dets[1:]:
        (members if iou(seed.box, d.box) >= iou_threshold else rest).append(d)
    return Cluster(tuple(members)), rest


def _weighted_mean_box(dets: list[Detection]) -> BBox:
    total = math.fsum(d.score for d in dets)
    if total <= 0.0:
        return mean_box([d.box for d in dets])
    coords = [
        math.fsum(d.score * c for d, c in zip(dets, column)) / total
        for column in zip(*(d.box.as_tuple() for d in dets))
    ]
    lo = [min(c) for c in zip(*(d.box.as_tuple() for d in dets))]
    hi = [max(c) for c in zip(*(d.box.as_tuple() for d in dets))]
    return BBox(*(min(h, max(l, c)) for c, l, h in zip(coords, lo, hi)))


def vote(cluster: Cluster, params: VotingParams | None = None) -> Detection:
    params = params or VotingParams()
    m = len(cluster.members) if params.all_member_voting else min(params.k, len(cluster.members))
    voters = list(cluster.members[:m])
    scores = [d.score for d in voters]

    divisor = m
    if params.divide_by_sources:
        if params.num_sources is None:
            raise ValueError("divide_by_sources requires num_sources")
        cap = len(cluster.members) if params.all_member_voting else params.k
        divisor = max(m, min(cap, params.num_sources))
    score = math.fsum(scores) / divisor
    if divisor == m:
        # rounding can put the mean one ulp outside the voter envelope
        score = min(max(scores), max(min(scores), score))

    if params.mode is VotingMode.SCORE:
        box = cluster.seed.box
    elif params.weighted_location:
        box = _weighted_mean_box(voters)
    else:
        box = mean_box([d.box for d in voters])
    return Detection(box, cluster.label, score, ENSEMBLE_SOURCE)


def vote_group(dets: list[Detection], params: VotingParams) -> list[Detection]:
    """Cluster-and-vote one (image, label) group until its pool is empty."""
    remaining = canonical_sort(dets)
    out = []
    while remaining:
        cluster, remaining = cluster_once(remaining, params.iou_threshold)
        out.append(vote(cluster, params))
    return canonical_sort(out)


def topk_voting_nms(ds: DetectionSet, params: VotingParams | None = None, threads: int = 1) -> DetectionSet:
    params = params or VotingParams()
    groups = list(ds.groups())
    results = ordered_map(lambda g: vote_group(g[2], params), groups, threads)
    out: dict[str, list[Detection]] = {img: [] for img in ds}
    for (img, _, _), fused in zip(groups, results):
        out[img].extend(fused)
    return DetectionSet(out)


def ensemble(sets: list[DetectionSet], params: VotingParams | None = None, threads: int = 1) -> DetectionSet:
    """Pool per-source detection sets and fuse them with top-k voting-NMS.

    Multi-scale testing goes through here too, with one set per scale.
    """
    params = params or VotingParams()
    if params.divide_by_sources and params.num_sources is None:
        params = VotingParams(**{**params.__dict__, "num_sources": len(sets)})
    return topk_voting_nms(pool(sets), params, threads)
