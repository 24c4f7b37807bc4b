"""Detections, ground truth and their CSV / JSON-Lines file formats."""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .geometry import BBox

PathLike = Union[str, Path]

PREDICTION_HEADER = ("image_id", "label", "score", "xmin", "ymin", "xmax", "ymax")
GROUND_TRUTH_HEADER = ("image_id", "label", "xmin", "ymin", "xmax", "ymax")
SUBMISSION_HEADER = ("ImageId", "PredictionString")


class BoxfuseError(Exception):
    """Base class for data errors raised by this package."""


class ParseError(BoxfuseError, ValueError):
    def __init__(self, path: PathLike, line: int, field: str, message: str):
        self.path = str(path)
        self.line = line
        self.field = field
        super().__init__(f"{path}:{line}: field '{field}': {message}")


@dataclass(frozen=True, slots=True)
class Detection:
    box: BBox
    label: str
    score: float
    source: str = ""

    def __post_init__(self) -> None:
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score!r} outside [0, 1]")
        if not self.label:
            raise ValueError("empty label")

    def with_score(self, score: float) -> "Detection":
        return Detection(self.box, self.label, score, self.source)


def canonical_key(d: Detection) -> tuple:
    """Total order: score descending, then box coordinates, source, label."""
    return (-d.score, d.box.xmin, d.box.ymin, d.box.xmax, d.box.ymax, d.source, d.label)


def canonical_sort(dets: Iterable[Detection]) -> list[Detection]:
    return sorted(dets, key=canonical_key)


class DetectionSet(Mapping[str, tuple[Detection, ...]]):
    """Immutable mapping ``image_id -> detections`` in canonical order.

    Images are iterated in sorted order and each image's detections are
    kept sorted by :func:`canonical_key`, so every consumer sees the same
    sequence regardless of how the set was built.
    """

    __slots__ = ("_images",)

    def __init__(self, images: Mapping[str, Iterable[Detection]] | None = None):
        images = images or {}
        self._images: dict[str, tuple[Detection, ...]] = {
            img: tuple(canonical_sort(images[img])) for img in sorted(images)
        }

    def __getitem__(self, image_id: str) -> tuple[Detection, ...]:
        return self._images[image_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._images)

    def __len__(self) -> int:
        return len(self._images)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, DetectionSet):
            return self._images == other._images
        return NotImplemented

    def __repr__(self) -> str:
        return f"DetectionSet({self.num_detections} detections over {len(self)} images)"

    @property
    def num_detections(self) -> int:
        return sum(len(v) for v in self._images.values())

    def groups(self) -> Iterator[tuple[str, str, list[Detection]]]:
        """Yield ``(image_id, label, detections)`` in deterministic order."""
        for img, dets in self._images.items():
            by_label: dict[str, list[Detection]] = {}
            for d in dets:
                by_label.setdefault(d.label, []).append(d)
            for label in sorted(by_label):
                yield img, label, by_label[label]

    def labels(self) -> set[str]:
        return {d.label for dets in self._images.values() for d in dets}


@dataclass(frozen=True, slots=True)
class GroundTruthBox:
    box: BBox
    label: str

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("empty label")


class GroundTruthSet(Mapping[str, tuple[GroundTruthBox, ...]]):
    """Immutable mapping ``image_id -> annotated boxes``.

    Row order within an image is preserved; duplicates are legal.
    """

    __slots__ = ("_images",)

    def __init__(self, images: Mapping[str, Iterable[GroundTruthBox]] | None = None):
        images = images or {}
        self._images = {img: tuple(images[img]) for img in sorted(images)}

    def __getitem__(self, image_id: str) -> tuple[GroundTruthBox, ...]:
        return self._images[image_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._images)

    def __len__(self) -> int:
        return len(self._images)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, GroundTruthSet):
            return self._images == other._images
        return NotImplemented

    @property
    def num_boxes(self) -> int:
        return sum(len(v) for v in self._images.values())

    def labels(self) -> set[str]:
        return {g.label for boxes in self._images.values() for g in boxes}


def pool(sets: list[DetectionSet]) -> DetectionSet:
    """Per-image concatenation of several detection sets."""
    if not sets:
        raise ValueError("pool needs at least one detection set")
    merged: dict[str, list[Detection]] = {}
    for ds in sets:
        for img, dets in ds.items():
            merged.setdefault(img, []).extend(dets)
    return DetectionSet(merged)


# -- reading ----------------------------------------------------------------


def _parse_float(raw: str, path: PathLike, line: int, field: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(path, line, field, f"not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise ParseError(path, line, field, f"not finite: {raw!r}")
    return value


def _parse_box(row: Mapping[str, str], path: PathLike, line: int) -> BBox:
    xmin, ymin, xmax, ymax = (
        _parse_float(row[f], path, line, f) for f in ("xmin", "ymin", "xmax", "ymax")
    )
    if xmin > xmax:
        raise ParseError(path, line, "xmin", f"inverted box: xmin {xmin} > xmax {xmax}")
    if ymin > ymax:
        raise ParseError(path, line, "ymin", f"inverted box: ymin {ymin} > ymax {ymax}")
    return BBox.clipped(xmin, ymin, xmax, ymax)


def _parse_label(row: Mapping[str, str], path: PathLike, line: int) -> str:
    label = row["label"].strip()
    if not label:
        raise ParseError(path, line, "label", "empty label")
    return label


def _parse_image_id(row: Mapping[str, str], path: PathLike, line: int) -> str:
    img = row["image_id"].strip()
    if not img:
        raise ParseError(path, line, "image_id", "empty image id")
    return img


def _detection_from_row(row: Mapping[str, str], source: str, path: PathLike, line: int) -> tuple[str, Detection]:
    img = _parse_image_id(row, path, line)
    label = _parse_label(row, path, line)
    score = _parse_float(row["score"], path, line, "score")
    if not 0.0 <= score <= 1.0:
        raise ParseError(path, line, "score", f"score {score} outside [0, 1]")
    return img, Detection(_parse_box(row, path, line), label, score, source)


def _iter_csv_rows(path: PathLike, header: tuple[str, ...]) -> Iterator[tuple[int, dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first is None:
            return
        cols = [c.strip() for c in first]
        missing = [h for h in header if h not in cols]
        if missing:
            raise ParseError(path, 1, missing[0], f"header is missing column '{missing[0]}'")
        index = {h: cols.index(h) for h in header}
        for raw in reader:
            line = reader.line_num
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            if len(raw) != len(cols):
                # name the first absent column, or the first surplus position
                field = header[len(raw)] if len(raw) < len(header) else f"column {len(cols) + 1}"
                raise ParseError(path, line, field, f"expected {len(cols)} columns, got {len(raw)}")
            yield line, {h: raw[i] for h, i in index.items()}


def read_predictions(path: PathLike, source_tag: str = "") -> DetectionSet:
    """Read a predictions file (CSV, or JSON-Lines when the suffix is ``.jsonl``)."""
    if Path(path).suffix == ".jsonl":
        return read_predictions_jsonl(path, source_tag)
    images: dict[str, list[Detection]] = {}
    for line, row in _iter_csv_rows(path, PREDICTION_HEADER):
        img, det = _detection_from_row(row, source_tag, path, line)
        images.setdefault(img, []).append(det)
    return DetectionSet(images)


def read_predictions_jsonl(path: PathLike, source_tag: str = "") -> DetectionSet:
    images: dict[str, list[Detection]] = {}
    with open(path, encoding="utf-8") as f:
        for line, text in enumerate(f, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as e:
                raise ParseError(path, line, "<json>", str(e)) from None
            if not isinstance(obj, dict):
                raise ParseError(path, line, "<json>", "expected an object")
            for field in PREDICTION_HEADER:
                if field not in obj:
                    raise ParseError(path, line, field, "missing field")
            row = {k: str(obj[k]) for k in PREDICTION_HEADER}
            img, det = _detection_from_row(row, source_tag, path, line)
            images.setdefault(img, []).append(det)
    return DetectionSet(images)


def read_ground_truth(path: PathLike) -> GroundTruthSet:
    images: dict[str, list[GroundTruthBox]] = {}
    for line, row in _iter_csv_rows(path, GROUND_TRUTH_HEADER):
        img = _parse_image_id(row, path, line)
        label = _parse_label(row, path, line)
        images.setdefault(img, []).append(GroundTruthBox(_parse_box(row, path, line), label))
    return GroundTruthSet(images)


# -- writing ----------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _open_for_write(path: PathLike):
    return open(path, "w", newline="", encoding="utf-8")


def write_predictions(ds: DetectionSet, path: PathLike) -> None:
    if Path(path).suffix == ".jsonl":
        write_predictions_jsonl(ds, path)
        return
    with _open_for_write(path) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for img, dets in ds.items():
            for d in dets:
                w.writerow([img, d.label, _fmt(d.score), *map(_fmt, d.box.as_tuple())])


def write_predictions_jsonl(ds: DetectionSet, path: PathLike) -> None:
    with _open_for_write(path) as f:
        for img, dets in ds.items():
            for d in dets:
                b = d.box
                obj = {
                    "image_id": img,
                    "label": d.label,
                    "score": round(d.score, 6),
                    "xmin": round(b.xmin, 6),
                    "ymin": round(b.ymin, 6),
                    "xmax": round(b.xmax, 6),
                    "ymax": round(b.ymax, 6),
                }
                f.write(json.dumps(obj) + "\n")


def write_ground_truth(gt: GroundTruthSet, path: PathLike) -> None:
    with _open_for_write(path) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(GROUND_TRUTH_HEADER)
        for img, boxes in gt.items():
            for g in boxes:
                w.writerow([img, g.label, *map(_fmt, g.box.as_tuple())])


def prediction_string(dets: Iterable[Detection]) -> str:
    parts = []
    for d in canonical_sort(dets):
        parts.append(" ".join([d.label, _fmt(d.score), *map(_fmt, d.box.as_tuple())]))
    return " ".join(parts)


def write_submission(ds: DetectionSet, path: PathLike) -> None:
    """Write ``ImageId,PredictionString`` rows, one per image.

    Each prediction string is a run of ``label score xmin ymin xmax ymax``
    groups ordered by score descending.
    """
    with _open_for_write(path) as f:
        f.write(",".join(SUBMISSION_HEADER) + "\n")
        for img, dets in ds.items():
            f.write(f"{img},{prediction_string(dets)}\n")


def read_submission(path: PathLike, source_tag: str = "") -> DetectionSet:
    images: dict[str, list[Detection]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return DetectionSet()
        if tuple(h.strip() for h in header) != SUBMISSION_HEADER:
            raise ParseError(path, 1, "ImageId", f"unexpected header {header}")
        for raw in reader:
            line = reader.line_num
            if not raw:
                continue
            if len(raw) != 2:
                raise ParseError(path, line, "PredictionString", f"expected 2 columns, got {len(raw)}")
            img, pred = raw[0].strip(), raw[1].split()
            if not img:
                raise ParseError(path, line, "ImageId", "empty image id")
            if len(pred) % 6:
                raise ParseError(path, line, "PredictionString", "token count is not a multiple of 6")
            dets = images.setdefault(img, [])
            for i in range(0, len(pred), 6):
                label, *nums = pred[i : i + 6]
                row = dict(zip(("image_id", "label", "score", "xmin", "ymin", "xmax", "ymax"), [img, label, *nums]))
                dets.append(_detection_from_row(row, source_tag, path, line)[1])
    return DetectionSet(images)
