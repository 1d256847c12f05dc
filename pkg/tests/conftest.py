import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from socialfabric.geometry import RelationInstance, Tubelet  # noqa: E402


def tube(t0, n, box=(0.1, 0.1, 0.3, 0.3), tid=0, cat=0, score=1.0):
    return Tubelet(cat, score, t0, np.tile(np.asarray(box, dtype=float), (n, 1)), tid=tid)


def rel(s, o, span, pred=0, score=1.0, scat=None, ocat=None):
    return RelationInstance(
        s.category if scat is None else scat, pred, o.category if ocat is None else ocat, s, o, span, score
    )


def lattice_box(rng, grid=16):
    x1, y1 = rng.integers(0, grid - 2, size=2)
    w, h = rng.integers(1, 5, size=2)
    x2, y2 = min(grid, x1 + w), min(grid, y1 + h)
    return np.array([x1, y1, x2, y2], dtype=float) / grid


def lattice_tube(rng, num_frames, tid, cat, grid=16):
    t0 = int(rng.integers(0, num_frames - 2))
    n = int(rng.integers(2, num_frames - t0 + 1))
    boxes = np.array([lattice_box(rng, grid) for _ in range(n)])
    # mostly steady tracks so overlaps are common
    if rng.random() < 0.6:
        boxes[:] = boxes[0]
    return Tubelet(cat, 1.0, t0, boxes, tid=tid)


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


CRITERIA_LINES: dict[int, str] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    CRITERIA_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA_LINES):
        terminalreporter.write_line(CRITERIA_LINES[n])
