from __future__ import annotations

import numpy as np
import pytest

from boxfuse.detections import Detection, DetectionSet
from boxfuse.geometry import BBox


def random_box(rng: np.random.Generator, max_side: float = 0.4) -> BBox:
    w, h = rng.uniform(0.01, max_side, size=2)
    x0 = rng.uniform(0.0, 1.0 - w)
    y0 = rng.uniform(0.0, 1.0 - h)
    return BBox(x0, y0, x0 + w, y0 + h)


def random_group(rng: np.random.Generator, n: int, label: str = "car", source: str = "m0", spread: float = 0.4) -> list[Detection]:
    """``n`` boxes crowded into a small area so that overlaps are common."""
    cx, cy = rng.uniform(0.3, 0.7, size=2)
    out = []
    for _ in range(n):
        w, h = rng.uniform(0.05, 0.3, size=2)
        x0 = float(np.clip(cx + rng.uniform(-spread, spread) * w - w / 2, 0.0, 1.0 - w))
        y0 = float(np.clip(cy + rng.uniform(-spread, spread) * h - h / 2, 0.0, 1.0 - h))
        out.append(Detection(BBox(x0, y0, x0 + w, y0 + h), label, float(rng.uniform(0.01, 1.0)), source))
    return out


def random_detection_set(rng: np.random.Generator, images: int = 4, labels=("car", "dog"), max_per_group: int = 8, source: str = "m0") -> DetectionSet:
    data = {}
    for i in range(images):
        dets = []
        for label in labels:
            dets.extend(random_group(rng, int(rng.integers(0, max_per_group + 1)), label, source))
        data[f"img{i}"] = dets
    return DetectionSet(data)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``with criterion("AC1 ...") as note: ...``."""
    from contextlib import contextmanager

    @contextmanager
    def record(name: str):
        notes: list[str] = []
        try:
            yield notes
        except BaseException:
            ACCEPTANCE_RESULTS.append((name, False, "; ".join(notes)))
            raise
        ACCEPTANCE_RESULTS.append((name, True, "; ".join(notes)))

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
