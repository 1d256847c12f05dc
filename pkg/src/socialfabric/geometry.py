"""Boxes, tubelets, tubelet pairs and volume IoU."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .numcore import InvalidArgument


class Box(NamedTuple):
    """Axis-aligned box in normalized image coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def validate(self) -> "Box":
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise InvalidArgument(f"invalid box {tuple(self)}")
        return self

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass
class Tubelet:
    """One tracked object: a box per frame over ``[t_begin, t_begin + len(boxes))``.

    ``frame_scores`` holds per-frame detection confidences; it defaults to the
    tubelet-level ``score`` on every frame.
    """

    category: int
    score: float
    t_begin: int
    boxes: np.ndarray
    tid: int = 0
    frame_scores: np.ndarray | None = None

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if len(self.boxes) == 0:
            raise InvalidArgument("tubelet needs at least one box")
        if self.frame_scores is None:
            self.frame_scores = np.full(len(self.boxes), float(self.score))
        else:
            self.frame_scores = np.asarray(self.frame_scores, dtype=np.float64)
            if self.frame_scores.shape != (len(self.boxes),):
                raise InvalidArgument("frame_scores must have one entry per box")

    @property
    def t_end(self) -> int:
        return self.t_begin + len(self.boxes)

    @property
    def span(self) -> tuple[int, int]:
        return self.t_begin, self.t_end

    def box_at(self, t: int) -> np.ndarray:
        return self.boxes[t - self.t_begin]

    def boxes_over(self, t_lo: int, t_hi: int) -> np.ndarray:
        return self.boxes[t_lo - self.t_begin : t_hi - self.t_begin]

    def restrict(self, t_lo: int, t_hi: int) -> "Tubelet":
        """Sub-tubelet clipped to ``[t_lo, t_hi)``."""
        lo, hi = max(t_lo, self.t_begin), min(t_hi, self.t_end)
        if hi <= lo:
            raise InvalidArgument(f"restrict: [{t_lo}, {t_hi}) misses tubelet span {self.span}")
        return Tubelet(
            category=self.category,
            score=self.score,
            t_begin=lo,
            boxes=self.boxes_over(lo, hi),
            tid=self.tid,
            frame_scores=self.frame_scores[lo - self.t_begin : hi - self.t_begin],
        )

    def mean_score(self, t_lo: int, t_hi: int) -> float:
        return float(self.frame_scores[t_lo - self.t_begin : t_hi - self.t_begin].mean())


@dataclass
class TubeletPair:
    subject: Tubelet
    object: Tubelet
    overlap: tuple[int, int]

    @property
    def key(self) -> tuple[int, int]:
        return self.subject.tid, self.object.tid

    def __len__(self) -> int:
        return self.overlap[1] - self.overlap[0]


@dataclass
class RelationInstance:
    subject_cat: int
    predicate: int
    object_cat: int
    subject_track: Tubelet
    object_track: Tubelet
    span: tuple[int, int]
    score: float = 1.0
    extra: dict = field(default_factory=dict)

    @property
    def triplet(self) -> tuple[int, int, int]:
        return self.subject_cat, self.predicate, self.object_cat

    @property
    def duration(self) -> int:
        return self.span[1] - self.span[0]


def span_overlap(a: tuple[int, int], b: tuple[int, int]) -> tuple[int, int]:
    return max(a[0], b[0]), min(a[1], b[1])


def temporal_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


def make_pairs(tubelets: Sequence[Tubelet]) -> list[TubeletPair]:
    """All ordered (subject, object) pairs with a non-empty temporal overlap."""
    pairs = []
    for i, s in enumerate(tubelets):
        for j, o in enumerate(tubelets):
            if i == j:
                continue
            lo, hi = span_overlap(s.span, o.span)
            if hi > lo:
                pairs.append(TubeletPair(s, o, (lo, hi)))
    return pairs


def _box_areas(b: np.ndarray) -> np.ndarray:
    return (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])


def _intersections(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    h = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    return np.clip(w, 0.0, None) * np.clip(h, 0.0, None)


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise IoU for broadcastable (..., 4) box arrays."""
    inter = _intersections(a, b)
    union = _box_areas(a) + _box_areas(b) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def frame_iou(a, b) -> float:
    return float(box_iou(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def _area_outside(t: Tubelet, lo: int, hi: int) -> float:
    frames = np.arange(t.t_begin, t.t_end)
    keep = (frames < lo) | (frames >= hi)
    return float(_box_areas(t.boxes[keep]).sum())


def viou(a: Tubelet, b: Tubelet) -> float:
    """Volume IoU over the union of the two temporal spans."""
    lo, hi = span_overlap(a.span, b.span)
    inter = 0.0
    both_union = 0.0
    if hi > lo:
        ba, bb = a.boxes_over(lo, hi), b.boxes_over(lo, hi)
        i = _intersections(ba, bb)
        inter = float(i.sum())
        both_union = float((_box_areas(ba) + _box_areas(bb) - i).sum())
    only_a = _area_outside(a, lo, hi)
    only_b = _area_outside(b, lo, hi)
    denom = both_union + (only_a + only_b)
    return inter / denom if denom > 0 else 0.0


def _clip_track(track: Tubelet, span: tuple[int, int]) -> Tubelet | None:
    lo, hi = span_overlap(track.span, span)
    return track.restrict(lo, hi) if hi > lo else None


def viou_pair(pred: RelationInstance, gt: RelationInstance) -> float:
    """min of subject and object vIoU, each track restricted to its instance span."""
    out = 1.0
    for p_track, g_track in ((pred.subject_track, gt.subject_track), (pred.object_track, gt.object_track)):
        p = _clip_track(p_track, pred.span)
        g = _clip_track(g_track, gt.span)
        if p is None or g is None:
            return 0.0
        out = min(out, viou(p, g))
    return out
