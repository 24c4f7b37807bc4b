"""``boxfuse`` command line: nms, softnms, ensemble, eval, simulate.

Exit codes: 0 success, 1 data error, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from ._parallel import THREADS_ENV, resolve_threads
from .detections import (
    BoxfuseError,
    read_ground_truth,
    read_predictions,
    write_ground_truth,
    write_predictions,
    write_submission,
)
from .evaluation import MatchParams, evaluate
from .simulation import (
    ALL_METHODS,
    SimulationConfig,
    ablation_csv,
    run_ablation,
    simulate,
    summary_csv,
)
from .suppression import SoftNmsMethod, SoftNmsParams, suppress_set
from .voting import VotingMode, VotingParams, ensemble

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_IO = 3

log = logging.getLogger("boxfuse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _threads(args: argparse.Namespace) -> int:
    try:
        return resolve_threads(args.threads)
    except ValueError as e:
        raise UsageError(f"--threads / {THREADS_ENV}: {e}") from None


def _softnms_params(args: argparse.Namespace) -> SoftNmsParams:
    return SoftNmsParams(
        method=SoftNmsMethod(args.method),
        iou_threshold=args.iou,
        sigma=args.sigma,
        score_floor=args.score_floor,
    )


def _voting_params(args: argparse.Namespace) -> VotingParams:
    return VotingParams(
        iou_threshold=args.iou,
        k=args.k,
        mode=VotingMode(args.mode),
        all_member_voting=args.all_members,
        weighted_location=args.weighted_location,
        divide_by_sources=args.divide_by_sources,
    )


def _validated(build: Callable[[], object]):
    try:
        return build()
    except ValueError as e:
        raise UsageError(str(e)) from None


# -- subcommands ------------------------------------------------------------


def cmd_nms(args: argparse.Namespace) -> int:
    params = _validated(lambda: SoftNmsParams(method=SoftNmsMethod.HARD, iou_threshold=args.iou))
    threads = _threads(args)
    ds = read_predictions(args.input, Path(args.input).stem)
    out = suppress_set(ds, params, "nms", threads)
    write_predictions(out, args.output)
    log.info("nms: %d -> %d detections", ds.num_detections, out.num_detections)
    return EXIT_OK


def cmd_softnms(args: argparse.Namespace) -> int:
    params = _validated(lambda: _softnms_params(args))
    threads = _threads(args)
    ds = read_predictions(args.input, Path(args.input).stem)
    out = suppress_set(ds, params, "softnms", threads)
    write_predictions(out, args.output)
    log.info("softnms: %d -> %d detections", ds.num_detections, out.num_detections)
    return EXIT_OK


def cmd_ensemble(args: argparse.Namespace) -> int:
    params = _validated(lambda: _voting_params(args))
    threads = _threads(args)
    # source tags only break exact score/box ties; index keeps them unique
    sets = [read_predictions(p, f"{i}:{Path(p).stem}") for i, p in enumerate(args.inputs)]
    out = ensemble(sets, params, threads)
    write_predictions(out, args.output)
    if args.submission:
        write_submission(out, args.submission)
    log.info("ensemble: %d sources, %d -> %d detections", len(sets), sum(s.num_detections for s in sets), out.num_detections)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    params = _validated(lambda: MatchParams(args.iou))
    threads = _threads(args)
    ds = read_predictions(args.pred)
    gt = read_ground_truth(args.gt)
    if ds.num_detections and not (ds.labels() & gt.labels()):
        print("warning: no predicted label occurs in the ground truth", file=sys.stderr)
    report = evaluate(ds, gt, params, threads)
    if args.output:
        report.write_csv(args.output)
    print(report.summary())
    print(f"mAP={report.mAP:.6f}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _validated(
        lambda: SimulationConfig(
            num_images=args.images,
            classes=args.classes,
            boxes_per_image=(args.min_boxes, args.max_boxes),
            num_detectors=args.detectors,
            jitter_sigma=args.jitter,
            score_noise_sigma=args.score_noise,
            miss_rate=args.miss,
            false_positive_rate=args.fp,
            shared_fp_fraction=args.shared_fp,
            distractor_hit_rate=args.distractor_hit,
            rng_seed=args.seed,
        )
    )
    softnms = _validated(lambda: _softnms_params(args))
    voting = _validated(lambda: replace(_voting_params(args), iou_threshold=args.vote_iou))
    if args.num_seeds < 1:
        raise UsageError("--num-seeds must be >= 1")
    methods = args.methods or list(ALL_METHODS)
    bad = [m for m in methods if m not in ALL_METHODS]
    if bad:
        raise UsageError(f"unknown method {bad[0]!r}; choose from {', '.join(ALL_METHODS)}")
    threads = _threads(args)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for offset in range(args.num_seeds):
        seed_cfg = replace(cfg, rng_seed=args.seed + offset)
        run = simulate(seed_cfg, softnms, threads)
        if offset == 0:
            write_ground_truth(run.gt, out / "gt.csv")
            for i, ds in enumerate(run.raw):
                write_predictions(ds, out / f"det{i}.csv")
        rows.extend(run_ablation(seed_cfg, methods, softnms, voting, threads=threads, run=run))
        log.info("simulate: seed %d done", seed_cfg.rng_seed)
    (out / "ablation.csv").write_text(ablation_csv(rows), encoding="utf-8")
    (out / "summary.csv").write_text(summary_csv(rows), encoding="utf-8")
    sys.stdout.write(summary_csv(rows))
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads, integer >= 1; output does not depend on it (default: ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr (-vv for debug)")


def _softnms_flags(p: argparse.ArgumentParser, iou_flag: str = "--iou") -> None:
    p.add_argument("--method", choices=[m.value for m in SoftNmsMethod], default="gaussian",
                   help="score decay rule (default: gaussian)")
    p.add_argument(iou_flag, dest="iou", type=float, default=0.5,
                   help="overlap threshold Nt for hard/linear decay, in (0, 1] (default: 0.5)")
    p.add_argument("--sigma", type=float, default=0.5, help="gaussian decay width, > 0 (default: 0.5)")
    p.add_argument("--score-floor", type=float, default=0.001,
                   help="drop detections whose score falls below this, in [0, 1) (default: 0.001)")


def _voting_flags(p: argparse.ArgumentParser, iou_flag: str = "--iou", iou_dest: str = "iou") -> None:
    p.add_argument(iou_flag, dest=iou_dest, type=float, default=0.5,
                   help="cluster membership IoU (inclusive), in (0, 1] (default: 0.5)")
    p.add_argument("--k", type=int, default=3, help="number of top-scoring cluster members that vote, >= 1 (default: 3)")
    p.add_argument("--mode", choices=[m.value for m in VotingMode], default="score-location",
                   help="average scores only, or scores and box coordinates (default: score-location)")
    p.add_argument("--all-members", action="store_true", help="every cluster member votes; overrides --k")
    p.add_argument("--weighted-location", action="store_true", help="score-weighted box averaging")
    p.add_argument("--divide-by-sources", action="store_true",
                   help="divide summed voter scores by min(k, number of inputs) instead of the voter count")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boxfuse", description="Detection post-processing, top-k voting ensembles and mAP.")
    parser.add_argument("--version", action="version", version=f"boxfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("nms", help="greedy hard NMS per image and label")
    p.add_argument("--in", dest="input", required=True, help="predictions CSV (or .jsonl)")
    p.add_argument("--out", dest="output", required=True, help="output predictions CSV (or .jsonl)")
    p.add_argument("--iou", type=float, default=0.5, help="suppress overlaps strictly above this, in (0, 1] (default: 0.5)")
    _common(p)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("softnms", help="SoftNMS per image and label")
    p.add_argument("--in", dest="input", required=True, help="predictions CSV (or .jsonl)")
    p.add_argument("--out", dest="output", required=True, help="output predictions CSV (or .jsonl)")
    _softnms_flags(p)
    _common(p)
    p.set_defaults(func=cmd_softnms)

    p = sub.add_parser("ensemble", help="pool prediction files and fuse them with top-k voting-NMS")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="one or more predictions CSV files")
    p.add_argument("--out", dest="output", required=True, help="fused predictions CSV (or .jsonl)")
    p.add_argument("--submission", default=None, help="also write ImageId,PredictionString CSV here")
    _voting_flags(p)
    _common(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("eval", help="per-class AP and mAP against ground truth")
    p.add_argument("--pred", required=True, help="predictions CSV (or .jsonl)")
    p.add_argument("--gt", required=True, help="ground-truth CSV")
    p.add_argument("--out", dest="output", default=None, help="report CSV path (default: not written)")
    p.add_argument("--iou", type=float, default=0.5, help="match threshold (inclusive), in (0, 1] (default: 0.5)")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="synthetic detectors and the fusion ablation table")
    p.add_argument("--seed", type=int, required=True, help="base RNG seed, integer >= 0 (required)")
    p.add_argument("--out", dest="output", required=True, help="output directory")
    p.add_argument("--num-seeds", type=int, default=1, help="run seeds seed..seed+N-1, >= 1 (default: 1)")
    p.add_argument("--images", type=int, default=500, help="images per seed, >= 0 (default: 500)")
    p.add_argument("--classes", type=int, default=10, help="number of classes, >= 1 (default: 10)")
    p.add_argument("--min-boxes", type=int, default=1, help="min GT boxes per image, >= 0 (default: 1)")
    p.add_argument("--max-boxes", type=int, default=6, help="max GT boxes per image, >= min (default: 6)")
    p.add_argument("--detectors", type=int, default=5, help="number of simulated detectors, >= 1 (default: 5)")
    p.add_argument("--jitter", type=float, default=0.08, help="corner noise as a fraction of box size, >= 0 (default: 0.08)")
    p.add_argument("--score-noise", type=float, default=0.3, help="score noise stddev, >= 0 (default: 0.3)")
    p.add_argument("--miss", type=float, default=0.1, help="per-box miss probability, in [0, 1] (default: 0.1)")
    p.add_argument("--fp", type=float, default=2.0, help="expected false positives per detector and image, >= 0 (default: 2.0)")
    p.add_argument("--shared-fp", type=float, default=0.9,
                   help="fraction of false positives from distractors shared across detectors, in [0, 1] (default: 0.9)")
    p.add_argument("--distractor-hit", type=float, default=0.8,
                   help="probability a detector fires on a shared distractor, in (0, 1] (default: 0.8)")
    p.add_argument("--methods", nargs="+", default=None, metavar="METHOD",
                   help=f"fusion methods to compare (default: all of {', '.join(ALL_METHODS)})")
    _softnms_flags(p, iou_flag="--nms-iou")
    _voting_flags(p, iou_flag="--vote-iou", iou_dest="vote_iou")
    _common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (BoxfuseError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
