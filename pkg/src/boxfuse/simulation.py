"""Synthetic ground truth and noisy detectors for desk-scale ablations.

Randomness: every (seed, role, image) triple gets its own PCG64 stream,
built as ``PCG64(SeedSequence([seed, role, image_index]))``. Role 0 is the
ground-truth sampler, role 1 samples the shared distractors and role
``2 + i`` is detector ``i``. Streams never share state, so output does not
depend on evaluation order or threading.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ._parallel import ordered_map
from .detections import Detection, DetectionSet, GroundTruthBox, GroundTruthSet, pool
from .evaluation import MatchParams, evaluate, match_assignments, sort_for_matching
from .geometry import BBox, center_distance, iou
from .suppression import SoftNmsParams, hard_nms, suppress_set
from .voting import VotingMode, VotingParams, ensemble

GT_ROLE = 0
DISTRACTOR_ROLE = 1
FIRST_DETECTOR_ROLE = 2


@dataclass(frozen=True)
class SimulationConfig:
    """Parameters of the synthetic world and its detectors.

    Box sizes: the side length ``sqrt(area)`` is log-normal with median
    ``exp(log_side_mean)`` and log-stddev ``log_side_sigma``; the aspect
    ratio is log-normal around 1. The defaults put the median box at about
    4% of the image with a long tail up to full-image boxes.

    False positives: ``false_positive_rate`` is the expected number per
    detector and image. A ``shared_fp_fraction`` of them comes from
    distractors, unannotated objects shared by all detectors, each of which
    a detector fires on with probability ``distractor_hit_rate``. The rest
    are independent random boxes. Setting ``shared_fp_fraction`` to 0 gives
    fully independent false positives.
    """

    num_images: int = 500
    classes: int = 10
    boxes_per_image: tuple[int, int] = (1, 6)
    log_side_mean: float = math.log(0.2)
    log_side_sigma: float = 0.6
    aspect_log_sigma: float = 0.4
    max_same_class_iou: float = 0.3
    num_detectors: int = 5
    jitter_sigma: float = 0.08
    score_noise_sigma: float = 0.3
    miss_rate: float = 0.1
    false_positive_rate: float = 2.0
    fp_score_beta: tuple[float, float] = (2.0, 5.0)
    shared_fp_fraction: float = 0.9
    distractor_hit_rate: float = 0.8
    distractor_score_beta: tuple[float, float] = (2.0, 3.0)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.boxes_per_image
        checks = [
            (self.num_images >= 0, "num_images must be >= 0"),
            (self.classes >= 1, "classes must be >= 1"),
            (0 <= lo <= hi, "boxes_per_image must satisfy 0 <= min <= max"),
            (self.log_side_sigma >= 0, "log_side_sigma must be >= 0"),
            (self.aspect_log_sigma >= 0, "aspect_log_sigma must be >= 0"),
            (0 < self.max_same_class_iou <= 1, "max_same_class_iou must be in (0, 1]"),
            (self.num_detectors >= 1, "num_detectors must be >= 1"),
            (self.jitter_sigma >= 0, "jitter_sigma must be >= 0"),
            (self.score_noise_sigma >= 0, "score_noise_sigma must be >= 0"),
            (0 <= self.miss_rate <= 1, "miss_rate must be in [0, 1]"),
            (self.false_positive_rate >= 0, "false_positive_rate must be >= 0"),
            (all(p > 0 for p in self.fp_score_beta), "fp_score_beta parameters must be > 0"),
            (0 <= self.shared_fp_fraction <= 1, "shared_fp_fraction must be in [0, 1]"),
            (0 < self.distractor_hit_rate <= 1, "distractor_hit_rate must be in (0, 1]"),
            (all(p > 0 for p in self.distractor_score_beta), "distractor_score_beta parameters must be > 0"),
            (self.rng_seed >= 0, "rng_seed must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def labels(self) -> list[str]:
        return [f"class{i:02d}" for i in range(self.classes)]

    def image_ids(self) -> list[str]:
        return [f"img{i:06d}" for i in range(self.num_images)]


def image_rng(seed: int, role: int, image_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, role, image_index])))


def sample_box(rng: np.random.Generator, cfg: SimulationConfig) -> BBox:
    side = math.exp(rng.normal(cfg.log_side_mean, cfg.log_side_sigma))
    aspect = math.exp(rng.normal(0.0, cfg.aspect_log_sigma))
    w = min(1.0, side * math.sqrt(aspect))
    h = min(1.0, side / math.sqrt(aspect))
    x0 = rng.uniform(0.0, 1.0 - w) if w < 1.0 else 0.0
    y0 = rng.uniform(0.0, 1.0 - h) if h < 1.0 else 0.0
    return BBox.clipped(x0, y0, x0 + w, y0 + h)


_PLACEMENT_ATTEMPTS = 20


def _image_ground_truth(cfg: SimulationConfig, image_index: int) -> list[GroundTruthBox]:
    rng = image_rng(cfg.rng_seed, GT_ROLE, image_index)
    labels = cfg.labels
    lo, hi = cfg.boxes_per_image
    n = int(rng.integers(lo, hi + 1))
    out: list[GroundTruthBox] = []
    for _ in range(n):
        label = labels[int(rng.integers(len(labels)))]
        # same-class objects may touch but not pile up; give up after a few tries
        for _ in range(_PLACEMENT_ATTEMPTS):
            box = sample_box(rng, cfg)
            if all(g.label != label or iou(g.box, box) <= cfg.max_same_class_iou for g in out):
                out.append(GroundTruthBox(box, label))
                break
    return out


def generate_ground_truth(cfg: SimulationConfig, threads: int = 1) -> GroundTruthSet:
    boxes = ordered_map(lambda i: _image_ground_truth(cfg, i), range(cfg.num_images), threads)
    return GroundTruthSet(dict(zip(cfg.image_ids(), boxes)))


def _image_distractors(cfg: SimulationConfig, image_index: int) -> list[tuple[BBox, str, float]]:
    """Shared ``(box, label, base score)`` false-positive objects of one image."""
    rate = cfg.false_positive_rate * cfg.shared_fp_fraction / cfg.distractor_hit_rate
    if rate <= 0.0:
        return []
    rng = image_rng(cfg.rng_seed, DISTRACTOR_ROLE, image_index)
    labels = cfg.labels
    out = []
    for _ in range(int(rng.poisson(rate))):
        box = sample_box(rng, cfg)
        label = labels[int(rng.integers(len(labels)))]
        out.append((box, label, float(rng.beta(*cfg.distractor_score_beta))))
    return out


def jitter_box(rng: np.random.Generator, box: BBox, sigma: float) -> BBox:
    if sigma == 0.0:
        return box
    dx = rng.normal(0.0, sigma * box.width, size=2)
    dy = rng.normal(0.0, sigma * box.height, size=2)
    x0, x1 = sorted((box.xmin + dx[0], box.xmax + dx[1]))
    y0, y1 = sorted((box.ymin + dy[0], box.ymax + dy[1]))
    return BBox.clipped(x0, y0, x1, y1)


def _clamp01(v: float) -> float:
    return min(1.0, max(0.0, v))


def _image_detections(
    cfg: SimulationConfig, gt_boxes: Sequence[GroundTruthBox], detector_index: int, image_index: int
) -> list[Detection]:
    rng = image_rng(cfg.rng_seed, FIRST_DETECTOR_ROLE + detector_index, image_index)
    source = f"det{detector_index}"
    out = []
    for g in gt_boxes:
        missed = rng.random() < cfg.miss_rate
        box = jitter_box(rng, g.box, cfg.jitter_sigma)
        noise = rng.normal(0.0, cfg.score_noise_sigma) if cfg.score_noise_sigma > 0 else 0.0
        if missed:
            continue
        # score tracks true localization quality, so ranking carries signal
        out.append(Detection(box, g.label, _clamp01(iou(box, g.box) - noise), source))
    for base_box, label, base_score in _image_distractors(cfg, image_index):
        hit = rng.random() < cfg.distractor_hit_rate
        box = jitter_box(rng, base_box, cfg.jitter_sigma)
        noise = rng.normal(0.0, cfg.score_noise_sigma) if cfg.score_noise_sigma > 0 else 0.0
        if hit:
            out.append(Detection(box, label, _clamp01(base_score - noise), source))
    labels = cfg.labels
    independent_rate = cfg.false_positive_rate * (1.0 - cfg.shared_fp_fraction)
    n_fp = int(rng.poisson(independent_rate)) if independent_rate > 0 else 0
    for _ in range(n_fp):
        box = sample_box(rng, cfg)
        label = labels[int(rng.integers(len(labels)))]
        score = float(rng.beta(*cfg.fp_score_beta))
        out.append(Detection(box, label, _clamp01(score), source))
    return out


def simulate_detector(gt: GroundTruthSet, cfg: SimulationConfig, detector_index: int, threads: int = 1) -> DetectionSet:
    """Noisy detections of ``gt`` from detector ``detector_index``.

    Each GT box is missed with probability ``miss_rate``; otherwise its
    corners are jittered by Gaussian noise proportional to the box size and
    it is scored by its IoU with the GT box minus Gaussian noise. False
    positives come from the image's shared distractors (jittered, scored
    by their base score minus noise) and from a Poisson number of random
    boxes with Beta-distributed scores.
    """
    if not 0 <= detector_index < cfg.num_detectors:
        raise ValueError(f"detector_index {detector_index} outside [0, {cfg.num_detectors})")
    images = list(gt.keys())
    dets = ordered_map(
        lambda i: _image_detections(cfg, gt[images[i]], detector_index, i), range(len(images)), threads
    )
    return DetectionSet(dict(zip(images, dets)))


# -- ablation ---------------------------------------------------------------

TABLE3_METHODS = ("soft-nms", "voting-soft-nms", "topk-voting-score", "topk-voting-score-location")
ALL_METHODS = ("single-best", "nms", *TABLE3_METHODS)


@dataclass(frozen=True)
class AblationRow:
    method: str
    map: float
    seed: int


@dataclass
class SimulationRun:
    """Ground truth plus raw and SoftNMS'd detector outputs for one seed."""

    cfg: SimulationConfig
    gt: GroundTruthSet
    raw: list[DetectionSet]
    suppressed: list[DetectionSet] = field(default_factory=list)


def simulate(cfg: SimulationConfig, softnms: SoftNmsParams | None = None, threads: int = 1) -> SimulationRun:
    softnms = softnms or SoftNmsParams()
    gt = generate_ground_truth(cfg, threads)
    raw = [simulate_detector(gt, cfg, i, threads) for i in range(cfg.num_detectors)]
    suppressed = [suppress_set(ds, softnms, "softnms", threads) for ds in raw]
    return SimulationRun(cfg, gt, raw, suppressed)


def _hard_nms_set(ds: DetectionSet, iou_threshold: float) -> DetectionSet:
    out: dict[str, list[Detection]] = {img: [] for img in ds}
    for img, _, group in ds.groups():
        out[img].extend(hard_nms(group, iou_threshold))
    return DetectionSet(out)


def fuse(
    method: str,
    sets: list[DetectionSet],
    softnms: SoftNmsParams,
    voting: VotingParams,
    threads: int = 1,
) -> DetectionSet:
    """Apply one named fusion method to per-detector (already suppressed) sets."""
    if method == "soft-nms":
        return suppress_set(pool(sets), softnms, "softnms", threads)
    if method == "nms":
        return _hard_nms_set(pool(sets), voting.iou_threshold)
    if method == "voting-soft-nms":
        return ensemble(sets, VotingParams.voting_soft_nms(voting.iou_threshold), threads)
    if method == "topk-voting-score":
        return ensemble(sets, replace(voting, mode=VotingMode.SCORE, all_member_voting=False), threads)
    if method == "topk-voting-score-location":
        return ensemble(sets, replace(voting, mode=VotingMode.SCORE_LOCATION, all_member_voting=False), threads)
    raise ValueError(f"unknown fusion method {method!r}; expected one of {', '.join(ALL_METHODS)}")


def run_ablation(
    cfg: SimulationConfig,
    methods: Sequence[str] = ALL_METHODS,
    softnms: SoftNmsParams | None = None,
    voting: VotingParams | None = None,
    match: MatchParams | None = None,
    threads: int = 1,
    run: SimulationRun | None = None,
) -> list[AblationRow]:
    """mAP of each fusion method for one seed of the simulated world.

    ``single-best`` is the best individual detector after SoftNMS; every
    other method pools the SoftNMS'd detectors and fuses them.
    """
    softnms = softnms or SoftNmsParams()
    voting = voting or VotingParams()
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ValueError(f"unknown fusion method {unknown[0]!r}; expected one of {', '.join(ALL_METHODS)}")
    run = run or simulate(cfg, softnms, threads)
    rows = []
    for method in methods:
        if method == "single-best":
            value = max(evaluate(ds, run.gt, match, threads).mAP for ds in run.suppressed)
        else:
            value = evaluate(fuse(method, run.suppressed, softnms, voting, threads), run.gt, match, threads).mAP
        rows.append(AblationRow(method, value, cfg.rng_seed))
    return rows


def run_ablation_seeds(cfg: SimulationConfig, seeds: Sequence[int], **kwargs) -> list[AblationRow]:
    rows = []
    for seed in seeds:
        rows.extend(run_ablation(replace(cfg, rng_seed=seed), **kwargs))
    return rows


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "map", "seed"])
    for r in rows:
        w.writerow([r.method, f"{r.map:.6f}", r.seed])
    return buf.getvalue()


def summarize(rows: Sequence[AblationRow]) -> dict[str, tuple[float, float, int]]:
    """``method -> (mean, stddev, n)`` in first-appearance order."""
    by_method: dict[str, list[float]] = {}
    for r in rows:
        by_method.setdefault(r.method, []).append(r.map)
    return {
        m: (statistics.fmean(v), statistics.stdev(v) if len(v) > 1 else 0.0, len(v))
        for m, v in by_method.items()
    }


def summary_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "mean", "stddev", "n"])
    for m, (mean, sd, n) in summarize(rows).items():
        w.writerow([m, f"{mean:.6f}", f"{sd:.6f}", n])
    return buf.getvalue()


# -- localization -----------------------------------------------------------


def tp_center_errors(ds: DetectionSet, gt: GroundTruthSet, match: MatchParams | None = None) -> list[float]:
    """Center distance between each true-positive detection and its GT box."""
    gt_by_class: dict[str, dict[str, list[BBox]]] = {}
    for img, boxes in gt.items():
        for g in boxes:
            gt_by_class.setdefault(g.label, {}).setdefault(img, []).append(g.box)
    dets_by_class: dict[str, list[tuple[str, Detection]]] = {}
    for img, dets in ds.items():
        for d in dets:
            dets_by_class.setdefault(d.label, []).append((img, d))
    errors = []
    for label in sorted(dets_by_class):
        gts = gt_by_class.get(label, {})
        ordered = sort_for_matching(dets_by_class[label])
        for (img, d), j in zip(ordered, match_assignments(ordered, gts, match)):
            if j >= 0:
                errors.append(center_distance(d.box, gts[img][j]))
    return errors


def _mean(values: Sequence[float]) -> float:
    return statistics.fmean(values) if values else math.nan


def localization_errors(
    cfg: SimulationConfig,
    voting: VotingParams | None = None,
    softnms: SoftNmsParams | None = None,
    run: SimulationRun | None = None,
    threads: int = 1,
) -> tuple[float, list[float]]:
    """Mean TP center error of the fused set and of each single detector."""
    voting = voting or VotingParams(k=3, mode=VotingMode.SCORE_LOCATION)
    softnms = softnms or SoftNmsParams()
    run = run or simulate(cfg, softnms, threads)
    fused = ensemble(run.suppressed, voting, threads)
    per_detector = [_mean(tp_center_errors(ds, run.gt)) for ds in run.suppressed]
    return _mean(tp_center_errors(fused, run.gt)), per_detector

