"""Interaction proposals: windowed per-frame interactivityness and 1D watershed."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import encoding as enc
from . import numcore as nc
from .dataset import Dataset, Video
from .features import FeatureConfig, PairFeatureCache, accumulate_language_grad, assemble
from .geometry import TubeletPair, box_iou, make_pairs, temporal_iou
from .numcore import InvalidArgument, NumericFailure, Rng

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.9, 0.8, 0.7, 0.6, 0.5, 0.4)


@dataclass
class Stage1Config:
    m: int = 30
    epochs: int = 20
    lr: float = 0.01
    batch: int = 128
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    min_len: int = 5
    dedup_tiou: float = 0.8
    neg_ratio: float = 3.0


@dataclass
class ScoreTrack:
    pair: TubeletPair
    scores: np.ndarray

    @property
    def t0(self) -> int:
        return self.pair.overlap[0]


@dataclass
class InteractionProposal:
    pair: TubeletPair
    span: tuple[int, int]
    mean_score: float
    subject_score: float
    object_score: float
    video_id: str = ""

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "subject_tid": self.pair.subject.tid,
            "object_tid": self.pair.object.tid,
            "span": list(self.span),
            "mean_score": self.mean_score,
            "subject_score": self.subject_score,
            "object_score": self.object_score,
        }


@dataclass
class TrainResult:
    params: enc.SocialFabricParams
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)


# --------------------------------------------------------------------------
# Windows and scoring
# --------------------------------------------------------------------------


def window_indices(frames: np.ndarray, overlap: tuple[int, int], m: int) -> np.ndarray:
    """(len(frames), m) absolute frame indices, edge-replicated inside ``overlap``."""
    lo, hi = overlap
    offs = np.arange(-(m // 2), m - m // 2)
    return np.clip(np.asarray(frames)[:, None] + offs[None, :], lo, hi - 1)


def window_features(cache: PairFeatureCache, f: int, m: int, table) -> np.ndarray:
    lo, hi = cache.pair.overlap
    if not lo <= f < hi:
        raise InvalidArgument(f"frame {f} outside overlap [{lo}, {hi})")
    return cache.rows(window_indices(np.array([f]), cache.pair.overlap, m)[0], table)


def score_frame(cache: PairFeatureCache, f: int, params: enc.SocialFabricParams, m: int = 30) -> float:
    S = window_features(cache, f, m, params.lang_table)
    return float(nc.sigmoid(enc.forward(S, params).logits[0]))


def frame_contributions(S: np.ndarray, params: enc.SocialFabricParams) -> np.ndarray:
    """Per-frame additive logit contributions so that a window's logits equal
    the sum over its rows plus the head bias. Valid because every variant
    pools by a sum over frames followed by a linear head."""
    R, _ = enc.embed(S, params)
    D, H = params.D, params.H
    if params.variant == "avgpool":
        return None, R @ params.head_W.value
    z = enc.soft_assign(R, params.C.value, params.beta)
    hw = params.head_W.value.reshape(params.K, D, H)
    if params.variant == "literal":
        G = np.einsum("kd,kdh->kh", params.C.value, hw)
        return z, z @ G
    return z, np.einsum("nk,nd,kdh->nh", z, R, hw)


def score_track(cache: PairFeatureCache, params: enc.SocialFabricParams, m: int = 30) -> ScoreTrack:
    """Interactivityness for every overlap frame of a pair."""
    S = cache.rows(cache.frame_index, params.lang_table)
    _, contrib = frame_contributions(S, params)
    if params.variant == "avgpool":
        contrib = contrib / m
    local = window_indices(cache.frame_index, cache.pair.overlap, m) - cache.pair.overlap[0]
    logits = contrib[local].sum(axis=1) + params.head_b.value
    return ScoreTrack(cache.pair, nc.sigmoid(logits[:, 0]))


# --------------------------------------------------------------------------
# Labels and training
# --------------------------------------------------------------------------


def frame_labels(pair: TubeletPair, video: Video, iou_thresh: float = 0.5) -> np.ndarray:
    """1 on overlap frames covered by a GT relation whose tracks match the pair
    (per-frame IoU >= 0.5 for both roles), else 0."""
    lo, hi = pair.overlap
    labels = np.zeros(hi - lo)
    for g in video.gt:
        a, b = max(lo, g.span[0]), min(hi, g.span[1])
        a = max(a, g.subject_track.t_begin, g.object_track.t_begin)
        b = min(b, g.subject_track.t_end, g.object_track.t_end)
        if b <= a:
            continue
        ious = np.minimum(
            box_iou(pair.subject.boxes_over(a, b), g.subject_track.boxes_over(a, b)),
            box_iou(pair.object.boxes_over(a, b), g.object_track.boxes_over(a, b)),
        )
        labels[a - lo : b - lo] = np.maximum(labels[a - lo : b - lo], ious >= iou_thresh)
    return labels


@dataclass
class FrameSamples:
    """Every overlap frame of every pair in a dataset, with stacked static rows.

    ``row`` indexes ``static`` for each sample; ``row_lo``/``row_hi`` bound the
    rows of the sample's pair so windows can be edge-replicated in place.
    """

    caches: list[PairFeatureCache]
    pair_idx: np.ndarray
    frames: np.ndarray
    labels: np.ndarray
    static: np.ndarray
    row_lo: np.ndarray
    row_hi: np.ndarray

    @property
    def row(self) -> np.ndarray:
        return np.arange(len(self.labels))


def build_frame_samples(dataset: Dataset, cfg: FeatureConfig, externals=None) -> FrameSamples:
    caches, pidx, frames, labels, statics, lo, hi = [], [], [], [], [], [], []
    offset = 0
    for video in dataset.videos:
        ext = externals.get(video.video_id) if externals else None
        for pair in make_pairs(video.tubelets):
            cache = PairFeatureCache(pair, cfg, ext)
            lab = frame_labels(pair, video)
            n = len(lab)
            pidx.append(np.full(n, len(caches)))
            frames.append(cache.frame_index)
            labels.append(lab)
            statics.append(cache.static)
            lo.append(np.full(n, offset))
            hi.append(np.full(n, offset + n))
            offset += n
            caches.append(cache)
    if not caches:
        empty = np.zeros(0, dtype=np.int64)
        return FrameSamples([], empty, empty, np.zeros(0), np.zeros((0, 0)), empty, empty)
    return FrameSamples(
        caches,
        np.concatenate(pidx),
        np.concatenate(frames),
        np.concatenate(labels),
        np.concatenate(statics),
        np.concatenate(lo),
        np.concatenate(hi),
    )


def batch_windows(samples: FrameSamples, idx: np.ndarray, m: int):
    """Static rows (B, m, F_static) plus category arrays for a batch of frame samples."""
    offs = np.arange(-(m // 2), m - m // 2)
    rows = np.clip(idx[:, None] + offs[None, :], samples.row_lo[idx][:, None], samples.row_hi[idx][:, None] - 1)
    pairs = samples.pair_idx[idx]
    sc = np.array([samples.caches[p].subject_cat for p in pairs])
    oc = np.array([samples.caches[p].object_cat for p in pairs])
    return samples.static[rows], sc, oc


def bce_step(params: enc.SocialFabricParams, cfg: FeatureConfig, static, sc, oc, y, trainable) -> tuple[float, np.ndarray]:
    """One minibatch forward/backward with mean BCE; grads land in ``params``."""
    S = assemble(static, sc, oc, cfg, params.lang_table)
    cache = enc.forward(S, params)
    s = nc.sigmoid(cache.logits[:, 0])
    loss, dscore = nc.bce_loss(s, y)
    dlogit = (dscore * s * (1.0 - s) / len(y))[:, None]
    dS = enc.sfe_backward(dlogit, cache, params)
    if params.lang_table is not None and params.lang_table in trainable:
        accumulate_language_grad(dS, sc, oc, cfg, params.lang_table)
    return float(loss.mean()), s


def train_stage1(
    dataset: Dataset,
    params: enc.SocialFabricParams,
    feat_cfg: FeatureConfig,
    s1: Stage1Config,
    rng: Rng,
    externals=None,
    samples: FrameSamples | None = None,
) -> TrainResult:
    """Minibatch SGD on frame-level BCE. Negatives are resampled each epoch to
    at most ``neg_ratio`` times the number of positives."""
    if params.H != 1:
        raise InvalidArgument("stage-1 head must have a single output")
    samples = samples or build_frame_samples(dataset, feat_cfg, externals)
    pos = np.flatnonzero(samples.labels == 1)
    neg = np.flatnonzero(samples.labels == 0)
    if len(pos) == 0:
        raise InvalidArgument("stage-1 training set has no positive frames")
    n_neg = min(len(neg), int(s1.neg_ratio * len(pos)))
    trainable = params.all()
    result = TrainResult(params)
    step = 0
    for epoch in range(s1.epochs):
        chosen = neg[rng.permutation(len(neg))[:n_neg]] if n_neg else neg[:0]
        pool = np.concatenate([pos, chosen])
        order = pool[rng.permutation(len(pool))]
        total, correct = 0.0, 0
        for start in range(0, len(order), s1.batch):
            idx = order[start : start + s1.batch]
            static, sc, oc = batch_windows(samples, idx, s1.m)
            y = samples.labels[idx]
            loss, s = bce_step(params, feat_cfg, static, sc, oc, y, trainable)
            if not np.isfinite(loss):
                raise NumericFailure(f"stage 1: non-finite loss at epoch {epoch} step {step}")
            nc.sgd_step(trainable, s1.lr)
            total += loss * len(idx)
            correct += int(((s >= 0.5) == (y == 1)).sum())
            step += 1
        result.losses.append(total / len(order))
        result.accuracies.append(correct / len(order))
        log.info("stage1 epoch %d loss %.4f acc %.3f", epoch + 1, result.losses[-1], result.accuracies[-1])
    return result


# --------------------------------------------------------------------------
# Watershed and proposals
# --------------------------------------------------------------------------


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]])
    d = np.diff(padded.astype(np.int8))
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def dedup_spans(cands: list[tuple[tuple[int, int], float]], dedup_tiou: float) -> list[tuple[tuple[int, int], float]]:
    """Greedy temporal NMS by descending mean score; ties prefer earlier, longer spans."""
    order = sorted(cands, key=lambda c: (-c[1], c[0][0], -(c[0][1] - c[0][0])))
    kept: list[tuple[tuple[int, int], float]] = []
    for span, score in order:
        if all(temporal_iou(span, k) <= dedup_tiou for k, _ in kept):
            kept.append((span, score))
    return sorted(kept, key=lambda c: c[0])


def watershed_spans(
    scores: np.ndarray, thresholds=DEFAULT_THRESHOLDS, min_len: int = 5, dedup_tiou: float = 0.8
) -> list[tuple[tuple[int, int], float]]:
    """Spans (local frame indices) from nested threshold runs plus temporal NMS."""
    scores = np.asarray(scores, dtype=np.float64)
    cands = []
    seen = set()
    for tau in sorted(thresholds, reverse=True):
        for a, b in _runs(scores >= tau):
            if b - a >= min_len and (a, b) not in seen:
                seen.add((a, b))
                cands.append(((a, b), float(scores[a:b].mean())))
    return dedup_spans(cands, dedup_tiou)


def watershed_1d(
    track: ScoreTrack, thresholds=DEFAULT_THRESHOLDS, min_len: int = 5, dedup_tiou: float = 0.8, video_id: str = ""
) -> list[InteractionProposal]:
    out = []
    t0 = track.t0
    for (a, b), mean in watershed_spans(track.scores, thresholds, min_len, dedup_tiou):
        span = (t0 + a, t0 + b)
        out.append(
            InteractionProposal(
                pair=track.pair,
                span=span,
                mean_score=mean,
                subject_score=track.pair.subject.mean_score(*span),
                object_score=track.pair.object.mean_score(*span),
                video_id=video_id,
            )
        )
    return out


def generate_proposals(
    video: Video,
    params: enc.SocialFabricParams,
    feat_cfg: FeatureConfig,
    s1: Stage1Config,
    externals=None,
    score_fn=None,
) -> list[InteractionProposal]:
    """Score every pair's overlap frames and cut each track into proposals.

    ``score_fn(pair) -> scores`` replaces the learned scorer (used for
    oracle-score experiments).
    """
    out = []
    for pair in make_pairs(video.tubelets):
        if score_fn is None:
            track = score_track(PairFeatureCache(pair, feat_cfg, externals), params, s1.m)
        else:
            track = ScoreTrack(pair, np.asarray(score_fn(pair), dtype=np.float64))
        out.extend(watershed_1d(track, s1.thresholds, s1.min_len, s1.dedup_tiou, video.video_id))
    return out


def oracle_scores(video: Video):
    """Score function returning 1 on GT-labeled frames and 0 elsewhere."""
    return lambda pair: frame_labels(pair, video)
