"""Scripted box-world videos with ground-truth relations.

Each video holds ``num_entities`` moving boxes laid out in horizontal bands,
two entities per band. The two entities in a band carry one scripted
relation; outside the relation span they idle far apart (subject left,
object right). A relation is a sequence of phases, each a per-frame relative
configuration of the pair:

========== =====================================================
phase      configuration
========== =====================================================
contact    boxes overlap horizontally (touching)
near       small horizontal gap, level
far        large horizontal gap
occluded   subject raised and partly hidden behind the object
pursuit    pair travels right, subject trailing, gap shrinking
escape     pair travels left, subject leading, gap growing
========== =====================================================

Predicates map to phase scripts; ``throw`` is ``touch`` followed by a
``move_away`` ramp, so it shares phases with both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, Video
from .geometry import RelationInstance, Tubelet
from .numcore import InvalidArgument, Rng

SUPPORTED_PREDICATES = ("chase", "flee", "approach", "move_away", "next_to", "behind", "touch", "throw")

GAP_CONTACT = -0.35  # fraction of the smaller width
GAP_NEAR = 0.03
GAP_FAR = 0.28
TRANSITION = 8
THROW_SPLIT = 0.45  # fraction of a throw spent in contact
MIN_BOX = 1e-3


@dataclass
class ScenarioSpec:
    num_videos: int
    frames_per_video: int
    num_entities: int
    predicate_set: list[str]
    noise: float = 0.0
    seed: int = 0
    span_range: tuple[int, int] = (30, 60)
    # named (lo, hi) ranges; each relation draws a bucket uniformly, then a length
    duration_buckets: dict[str, tuple[int, int]] | None = None
    num_classes: int = 6
    prefix: str = "vid"

    def validate(self) -> None:
        if self.num_entities < 2:
            raise InvalidArgument("need at least two entities")
        bad = [p for p in self.predicate_set if p not in SUPPORTED_PREDICATES]
        if bad or not self.predicate_set:
            raise InvalidArgument(f"unsupported predicates {bad}")
        if self.noise < 0:
            raise InvalidArgument("noise must be >= 0")
        if num_bands(self.num_entities) > 4:
            raise InvalidArgument(f"{self.num_entities} entities do not fit the frame (max 8)")
        longest = max(hi for _, hi in self._ranges())
        if self.frames_per_video < longest + 2 * TRANSITION + 4:
            raise InvalidArgument("frames_per_video too short for the requested spans")

    def _ranges(self) -> list[tuple[int, int]]:
        if self.duration_buckets:
            return list(self.duration_buckets.values())
        return [self.span_range]


SynthVideo = Video


def num_bands(num_entities: int) -> int:
    return math.ceil(num_entities / 2)


# --------------------------------------------------------------------------
# Phase scripts: each returns (dx_center, dy_center, anchor_x) for u in [0, 1]
# relative offsets are object minus subject
# --------------------------------------------------------------------------


def _gap_dx(gap: float, ws: float, wo: float) -> float:
    if gap < 0:
        gap = gap * min(ws, wo)
    return (ws + wo) / 2 + gap


def _script(pred: str, u: np.ndarray, ws, wo, hs, ho, anchor: float):
    """Relative placement over normalized time ``u``. Returns dx, dy, anchor_x arrays."""
    n = len(u)
    ones = np.ones(n)
    lerp = lambda a, b: a + (b - a) * u  # noqa: E731
    if pred == "next_to":
        return _gap_dx(GAP_NEAR, ws, wo) * ones, 0 * ones, anchor * ones
    if pred == "touch":
        return _gap_dx(GAP_CONTACT, ws, wo) * ones, 0 * ones, anchor * ones
    if pred == "behind":
        return 0.1 * ws * ones, 0.45 * (hs + ho) / 2 * ones, anchor * ones
    if pred == "chase":
        gap = lerp(0.22, 0.14)
        return (ws + wo) / 2 + gap, 0 * ones, lerp(anchor - 0.2, anchor + 0.2)
    if pred == "flee":
        gap = lerp(0.14, 0.22)
        return -((ws + wo) / 2 + gap), 0 * ones, lerp(anchor + 0.2, anchor - 0.2)
    if pred == "approach":
        return (ws + wo) / 2 + lerp(GAP_FAR, GAP_NEAR), 0 * ones, anchor * ones
    if pred == "move_away":
        return (ws + wo) / 2 + lerp(GAP_NEAR, GAP_FAR), 0 * ones, anchor * ones
    if pred == "throw":
        # contact for the first part, then separation from contact to far
        split = THROW_SPLIT
        contact = _gap_dx(GAP_CONTACT, ws, wo)
        far = _gap_dx(GAP_FAR, ws, wo)
        v = np.clip((u - split) / (1 - split), 0, 1)
        return np.where(u < split, contact, contact + (far - contact) * v), 0 * ones, anchor * ones
    raise InvalidArgument(f"unknown predicate {pred!r}")


PHASES = {
    "next_to": ("near",),
    "touch": ("contact",),
    "behind": ("occluded",),
    "chase": ("pursuit",),
    "flee": ("escape",),
    "approach": ("far", "near"),
    "move_away": ("near", "far"),
    "throw": ("contact", "far"),
}


def phase_spans(pred: str, start: int, end: int) -> dict[str, list[int]]:
    """Frame span of each scripted phase; multi-phase scripts split at their switch point."""
    phases = PHASES[pred]
    if len(phases) == 1:
        return {phases[0]: [start, end]}
    frac = THROW_SPLIT if pred == "throw" else 0.5
    cut = start + int(math.ceil(frac * (end - start) - 0.5))
    return {phases[0]: [start, cut], phases[1]: [cut, end]}


# --------------------------------------------------------------------------
# Generation
# --------------------------------------------------------------------------


def _place(cx: np.ndarray, cy: np.ndarray, w: float, h: float) -> np.ndarray:
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)


def _clamp_boxes(b: np.ndarray) -> np.ndarray:
    b = np.clip(b, 0.0, 1.0)
    x1 = np.minimum(b[:, 0], 1.0 - MIN_BOX)
    y1 = np.minimum(b[:, 1], 1.0 - MIN_BOX)
    x2 = np.maximum(b[:, 2], x1 + MIN_BOX)
    y2 = np.maximum(b[:, 3], y1 + MIN_BOX)
    return np.stack([x1, y1, x2, y2], axis=1)


def _smoothstep(v: np.ndarray) -> np.ndarray:
    v = np.clip(v, 0.0, 1.0)
    return v * v * (3 - 2 * v)


def _pick_length(spec: ScenarioSpec, rng: Rng) -> tuple[int, str | None]:
    if spec.duration_buckets:
        names = list(spec.duration_buckets)
        name = names[rng.integers(len(names))]
        lo, hi = spec.duration_buckets[name]
        return lo + rng.integers(hi - lo + 1), name
    lo, hi = spec.span_range
    return lo + rng.integers(hi - lo + 1), None


def _generate_video(spec: ScenarioSpec, index: int, rng: Rng) -> SynthVideo:
    T = spec.frames_per_video
    t = np.arange(T)
    nb = num_bands(spec.num_entities)
    band_h = 1.0 / nb
    tubelets: list[Tubelet] = []
    gt: list[RelationInstance] = []
    tid = 0
    for band in range(nb):
        cy0 = (band + 0.5) * band_h
        members = 2 if 2 * band + 1 < spec.num_entities else 1
        sizes = [(rng.uniform_range(0.08, 0.12), rng.uniform_range(0.09, 0.13)) for _ in range(members)]
        cats = [rng.integers(spec.num_classes) for _ in range(members)]
        phase = rng.uniform_range(0, 2 * math.pi)
        drift = 0.02 * np.sin(2 * math.pi * t / 60 + phase)
        idle_s = rng.uniform_range(0.14, 0.24)
        idle_o = rng.uniform_range(0.76, 0.86)
        cx_s = idle_s + drift
        cy_s = cy0 + 0 * t
        cx_o = idle_o - drift
        cy_o = cy0 + 0 * t
        if members == 1:
            w, h = sizes[0]
            boxes = [_place(0.5 + 2 * drift, cy_s, w, h)]
        else:
            (ws, hs), (wo, ho) = sizes
            pred = spec.predicate_set[rng.integers(len(spec.predicate_set))]
            L, bucket = _pick_length(spec, rng)
            start = TRANSITION + 2 + rng.integers(T - L - 2 * TRANSITION - 3)
            end = start + L
            anchor = rng.uniform_range(0.42, 0.58)
            u = (np.arange(L) + 0.5) / L
            dx, dy, ax = _script(pred, u, ws, wo, hs, ho, anchor)
            rel_s_x = ax - dx / 2
            rel_o_x = ax + dx / 2
            rel_s_y = cy0 - dy / 2
            rel_o_y = cy0 + dy / 2
            cx_s, cy_s, cx_o, cy_o = cx_s.copy(), cy_s.copy(), cx_o.copy(), cy_o.copy()
            cx_s[start:end], cx_o[start:end] = rel_s_x, rel_o_x
            cy_s[start:end], cy_o[start:end] = rel_s_y, rel_o_y
            # blend in and out of the relation over TRANSITION frames
            lead_in = np.arange(start - TRANSITION, start)
            lead_out = np.arange(end, end + TRANSITION)
            w_in = _smoothstep((lead_in - (start - TRANSITION - 1)) / (TRANSITION + 1))
            w_out = _smoothstep((end + TRANSITION - lead_out) / (TRANSITION + 1))
            for arr in (cx_s, cx_o, cy_s, cy_o):
                first, last = arr[start], arr[end - 1]
                arr[lead_in] = (1 - w_in) * arr[lead_in] + w_in * first
                arr[lead_out] = (1 - w_out) * arr[lead_out] + w_out * last
            boxes = [_place(cx_s, cy_s, ws, hs), _place(cx_o, cy_o, wo, ho)]
        for m in range(members):
            b = boxes[m]
            scores = np.ones(T)
            if spec.noise > 0:
                jit = rng.normal_array((T, 4), std=spec.noise)
                b = b + jit
                mag = np.sqrt((jit * jit).mean(axis=1))
                scores = np.clip(1.0 - 8.0 * mag, 0.5, 1.0)
            b = _clamp_boxes(b)
            tubelets.append(
                Tubelet(
                    category=int(cats[m]),
                    score=float(scores.mean()),
                    t_begin=0,
                    boxes=b,
                    tid=tid + m,
                    frame_scores=scores,
                )
            )
        if members == 2:
            extra = {"phases": list(PHASES[pred]), "phase_spans": phase_spans(pred, start, end)}
            if bucket is not None:
                extra["bucket"] = bucket
            gt.append(
                RelationInstance(
                    subject_cat=int(cats[0]),
                    predicate=spec.predicate_set.index(pred),
                    object_cat=int(cats[1]),
                    subject_track=tubelets[tid],
                    object_track=tubelets[tid + 1],
                    span=(int(start), int(end)),
                    score=1.0,
                    extra=extra,
                )
            )
        tid += members
    return SynthVideo(f"{spec.prefix}-{index:04d}", T, tubelets, gt)


def generate(spec: ScenarioSpec) -> list[SynthVideo]:
    """Videos for ``spec``; video i uses a stream derived from (seed, i)."""
    spec.validate()
    root = Rng(spec.seed)
    return [_generate_video(spec, i, root.spawn(i)) for i in range(spec.num_videos)]


# --------------------------------------------------------------------------
# Suites
# --------------------------------------------------------------------------

SEPARABLE_PREDICATES = ["next_to", "behind", "touch", "chase"]
COMPOSITIONAL_PREDICATES = ["touch", "next_to", "move_away", "throw", "behind"]
DURATION_BUCKETS = {"short": (12, 29), "medium": (30, 119), "long": (120, 170)}

SUITES = {
    "separable": dict(train=60, test=20, frames=90, predicates=SEPARABLE_PREDICATES, span_range=(30, 60)),
    "compositional": dict(train=100, test=30, frames=90, predicates=COMPOSITIONAL_PREDICATES, span_range=(30, 60)),
    "duration": dict(
        train=60, test=30, frames=200, predicates=SEPARABLE_PREDICATES, span_range=(12, 170), buckets=DURATION_BUCKETS
    ),
}


def make_suite(name: str, seed: int = 0, noise: float = 0.004, num_entities: int = 4) -> dict[str, Dataset]:
    """Train and test splits of one named suite; splits use disjoint seeds and ids."""
    if name not in SUITES:
        raise InvalidArgument(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    cfg = SUITES[name]
    out = {}
    for split_idx, split in enumerate(("train", "test")):
        spec = ScenarioSpec(
            num_videos=cfg[split],
            frames_per_video=cfg["frames"],
            num_entities=num_entities,
            predicate_set=list(cfg["predicates"]),
            noise=noise,
            seed=(int(seed) * 1_000_003 + split_idx * 7919 + sum(map(ord, name))) & ((1 << 64) - 1),
            span_range=cfg["span_range"],
            duration_buckets=cfg.get("buckets"),
            prefix=f"{name[:3]}-{split}",
        )
        out[split] = Dataset(
            name=f"{name}-{split}",
            predicates=list(cfg["predicates"]),
            num_classes=spec.num_classes,
            videos=generate(spec),
            meta={"suite": name, "split": split, "seed": int(seed), "noise": noise},
        )
    return out


def make_suites(seed: int = 0) -> dict[str, dict[str, Dataset]]:
    return {name: make_suite(name, seed) for name in SUITES}
