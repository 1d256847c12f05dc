"""Relation tagging (P@K) and relation detection (mAP, R@N) with vIoU matching."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import RelationInstance, viou_pair

DEFAULT_DURATION_CUTS = (30, 120)
BUCKETS = ("short", "medium", "long")


@dataclass
class VideoResult:
    video_id: str
    predictions: list[RelationInstance]
    gt: list[RelationInstance]

    def __post_init__(self):
        self.predictions = rank(self.predictions)


@dataclass
class EvalConfig:
    viou_thresh: float = 0.5
    p_at: tuple[int, ...] = (1, 5, 10)
    recall_at: tuple[int, ...] = (50, 100)
    duration_cuts: tuple[int, int] = DEFAULT_DURATION_CUTS


@dataclass
class MetricReport:
    p_at: dict[int, float]
    map: float
    recall_at: dict[int, float]
    per_duration: dict[str, float | None] = field(default_factory=dict)
    num_videos: int = 0
    num_gt: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "p_at": {str(k): v for k, v in self.p_at.items()},
            "map": self.map,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "per_duration": self.per_duration,
            "num_videos": self.num_videos,
            "num_gt": self.num_gt,
            "warnings": self.warnings,
        }

    def table(self) -> str:
        cols = [f"P@{k}" for k in self.p_at] + ["mAP"] + [f"R@{k}" for k in self.recall_at]
        vals = list(self.p_at.values()) + [self.map] + list(self.recall_at.values())
        head = "  ".join(f"{c:>8}" for c in cols)
        row = "  ".join(f"{100 * v:8.2f}" for v in vals)
        lines = [head, row]
        if self.per_duration:
            lines.append("")
            lines.append("  ".join(f"{b:>8}" for b in self.per_duration))
            lines.append("  ".join("       -" if v is None else f"{100 * v:8.2f}" for v in self.per_duration.values()))
        return "\n".join(lines) + "\n"

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _tiebreak(r: RelationInstance):
    return (-r.score, r.subject_track.tid, r.object_track.tid, r.span[0], r.span[1], r.predicate)


def rank(predictions: list[RelationInstance]) -> list[RelationInstance]:
    """Descending score with a (pair id, span, predicate) tie-break."""
    return sorted(predictions, key=_tiebreak)


def tagging_precision(results: list[VideoResult], k: int) -> float:
    """Mean over videos of |top-k distinct triplet labels in GT| / k."""
    if not results:
        return 0.0
    total = 0.0
    for res in results:
        gt_labels = {g.triplet for g in res.gt}
        seen, top = set(), []
        for p in res.predictions:
            if p.triplet not in seen:
                seen.add(p.triplet)
                top.append(p.triplet)
            if len(top) == k:
                break
        total += sum(t in gt_labels for t in top) / k
    return total / len(results)


def greedy_match(predictions: list[RelationInstance], gt: list[RelationInstance], viou_thresh: float = 0.5) -> np.ndarray:
    """Boolean TP flag per ranked prediction.

    Each prediction takes the unmatched same-label GT with the highest vIoU,
    if that vIoU reaches the threshold.
    """
    matched = [False] * len(gt)
    tp = np.zeros(len(predictions), dtype=bool)
    for i, p in enumerate(predictions):
        best, best_v = -1, viou_thresh
        for j, g in enumerate(gt):
            if matched[j] or g.triplet != p.triplet:
                continue
            v = viou_pair(p, g)
            if v >= best_v and (best < 0 or v > best_v):
                best, best_v = j, v
        if best >= 0:
            matched[best] = True
            tp[i] = True
    return tp


def ap_from_tp(tp: np.ndarray, num_gt: int) -> float:
    if num_gt == 0:
        return 0.0
    hits = np.cumsum(tp)
    ranks = np.arange(1, len(tp) + 1)
    return float((hits[tp] / ranks[tp]).sum() / num_gt)


def detection_ap(predictions: list[RelationInstance], gt: list[RelationInstance], viou_thresh: float = 0.5) -> float:
    if not gt:
        warnings.warn("detection_ap: video without ground truth scored as AP 0", stacklevel=2)
        return 0.0
    return ap_from_tp(greedy_match(rank(predictions), gt, viou_thresh), len(gt))


def duration_bucket(length: int, cuts: tuple[int, int] = DEFAULT_DURATION_CUTS) -> str:
    if length < cuts[0]:
        return "short"
    if length < cuts[1]:
        return "medium"
    return "long"


def evaluate(results: list[VideoResult], cfg: EvalConfig | None = None) -> MetricReport:
    cfg = cfg or EvalConfig()
    warn = []
    aps, hits = [], {n: 0 for n in cfg.recall_at}
    num_gt = 0
    for res in results:
        tp = greedy_match(res.predictions, res.gt, cfg.viou_thresh)
        if not res.gt:
            warn.append(f"{res.video_id}: no ground truth; AP counted as 0")
        aps.append(ap_from_tp(tp, len(res.gt)))
        num_gt += len(res.gt)
        for n in cfg.recall_at:
            hits[n] += int(tp[:n].sum())
    report = MetricReport(
        p_at={k: tagging_precision(results, k) for k in cfg.p_at},
        map=float(np.mean(aps)) if aps else 0.0,
        recall_at={n: (hits[n] / num_gt if num_gt else 0.0) for n in cfg.recall_at},
        num_videos=len(results),
        num_gt=num_gt,
        warnings=warn,
    )
    report.per_duration = duration_map(results, cfg)
    return report


def duration_map(results: list[VideoResult], cfg: EvalConfig | None = None) -> dict[str, float | None]:
    """mAP per GT duration bucket.

    For each bucket, a video's GT is restricted to that bucket. Predictions
    that clear the vIoU threshold against a same-label GT of another bucket,
    and against none in this bucket, are ignored rather than counted as false
    positives. Videos with no GT in the bucket are skipped; a bucket with no
    GT anywhere reports None.
    """
    cfg = cfg or EvalConfig()
    out: dict[str, float | None] = {}
    for bucket in BUCKETS:
        aps = []
        for res in results:
            inside = [g for g in res.gt if duration_bucket(g.duration, cfg.duration_cuts) == bucket]
            if not inside:
                continue
            outside = [g for g in res.gt if duration_bucket(g.duration, cfg.duration_cuts) != bucket]
            preds = [
                p
                for p in res.predictions
                if not (_hits_any(p, outside, cfg.viou_thresh) and not _hits_any(p, inside, cfg.viou_thresh))
            ]
            aps.append(ap_from_tp(greedy_match(preds, inside, cfg.viou_thresh), len(inside)))
        out[bucket] = float(np.mean(aps)) if aps else None
    return out


def _hits_any(p: RelationInstance, gts: list[RelationInstance], thresh: float) -> bool:
    return any(g.triplet == p.triplet and viou_pair(p, g) >= thresh for g in gts)
