import statistics
from dataclasses import replace

import pytest

from boxfuse.geometry import area, iou
from boxfuse.simulation import (
    ALL_METHODS,
    SimulationConfig,
    _image_detections,
    ablation_csv,
    generate_ground_truth,
    localization_errors,
    run_ablation,
    simulate_detector,
    summarize,
    summary_csv,
)

SMALL = SimulationConfig(num_images=60, rng_seed=7)
NOISELESS = replace(SMALL, jitter_sigma=0.0, miss_rate=0.0, false_positive_rate=0.0, score_noise_sigma=0.0)


def test_empty_world():
    assert len(generate_ground_truth(replace(SMALL, num_images=0))) == 0


def test_ground_truth_deterministic():
    assert generate_ground_truth(SMALL) == generate_ground_truth(SMALL)
    assert generate_ground_truth(SMALL) != generate_ground_truth(replace(SMALL, rng_seed=8))
    assert generate_ground_truth(SMALL, threads=4) == generate_ground_truth(SMALL)


def test_default_size_distribution_is_small_box_heavy():
    gt = generate_ground_truth(SimulationConfig(num_images=1000, rng_seed=0))
    areas = [area(g.box) for boxes in gt.values() for g in boxes]
    assert statistics.median(areas) <= 0.10
    assert max(areas) > 0.5


def test_same_class_objects_do_not_pile_up():
    gt = generate_ground_truth(SMALL)
    for boxes in gt.values():
        for i, a in enumerate(boxes):
            for b in boxes[i + 1:]:
                if a.label == b.label:
                    assert iou(a.box, b.box) <= SMALL.max_same_class_iou


def test_noiseless_detector_reproduces_ground_truth():
    gt = generate_ground_truth(NOISELESS)
    ds = simulate_detector(gt, NOISELESS, 0)
    for img, boxes in gt.items():
        assert sorted((g.box, g.label) for g in boxes) == sorted((x.box, x.label) for x in ds[img])
        assert all(x.score == 1.0 for x in ds[img])


def test_full_miss_rate_leaves_only_false_positives():
    cfg = replace(SMALL, miss_rate=1.0, jitter_sigma=0.0)
    gt = generate_ground_truth(cfg)
    ds = simulate_detector(gt, cfg, 0)
    assert ds.num_detections > 0
    for img, boxes in gt.items():
        gt_boxes = {g.box for g in boxes}
        assert not any(x.box in gt_boxes for x in ds[img])
    assert simulate_detector(gt, replace(cfg, false_positive_rate=0.0), 0).num_detections == 0


def test_independent_false_positives_only():
    cfg = replace(SMALL, miss_rate=1.0, shared_fp_fraction=0.0)
    gt = generate_ground_truth(cfg)
    ds = simulate_detector(gt, cfg, 0)
    assert ds.num_detections > 0
    # beta(2, 5) scores: the mean sits near 2/7
    scores = [x.score for dets in ds.values() for x in dets]
    assert statistics.fmean(scores) < 0.4


def test_detectors_are_independent_and_reproducible():
    gt = generate_ground_truth(SMALL)
    a0 = simulate_detector(gt, SMALL, 0)
    assert a0 == simulate_detector(gt, SMALL, 0)
    assert a0 == simulate_detector(gt, SMALL, 0, threads=4)
    assert a0 != simulate_detector(gt, SMALL, 1)
    with pytest.raises(ValueError):
        simulate_detector(gt, SMALL, SMALL.num_detectors)


def test_localization_quality_falls_with_jitter():
    means = []
    for jitter in (0.01, 0.05, 0.1):
        values = []
        for seed in range(20):
            cfg = replace(SMALL, num_images=20, jitter_sigma=jitter, miss_rate=0.0, false_positive_rate=0.0, rng_seed=seed)
            gt = generate_ground_truth(cfg)
            for i, img in enumerate(gt):
                dets = _image_detections(cfg, gt[img], 0, i)
                values.extend(iou(d.box, g.box) for d, g in zip(dets, gt[img]))
        means.append(statistics.fmean(values))
    assert means[0] > means[1] > means[2]


def test_noiseless_ablation_is_perfect():
    rows = run_ablation(replace(NOISELESS, score_noise_sigma=0.3))
    assert [r.method for r in rows] == list(ALL_METHODS)
    assert all(r.map == 1.0 for r in rows)


def test_ablation_tables():
    rows = run_ablation(SMALL, methods=["soft-nms", "topk-voting-score-location"])
    text = ablation_csv(rows)
    assert text.splitlines()[0] == "method,map,seed"
    assert text.splitlines()[1].startswith("soft-nms,") and text.splitlines()[1].endswith(",7")
    assert summary_csv(rows).splitlines()[0] == "method,mean,stddev,n"
    assert summarize(rows)["soft-nms"][2] == 1
    with pytest.raises(ValueError):
        run_ablation(SMALL, methods=["wbf"])


def test_config_validation():
    for bad in (dict(miss_rate=1.5), dict(num_detectors=0), dict(jitter_sigma=-1), dict(rng_seed=-1),
                dict(boxes_per_image=(3, 1)), dict(shared_fp_fraction=2.0)):
        with pytest.raises(ValueError):
            SimulationConfig(**bad)


def test_fused_boxes_are_better_localized():
    fused, singles = localization_errors(replace(SMALL, num_images=200))
    assert fused <= min(singles)
