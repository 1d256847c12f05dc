"""Predicate prediction over interaction proposals and triplet assembly."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from . import encoding as enc
from . import numcore as nc
from .dataset import Dataset, Video
from .features import FeatureConfig, PairFeatureCache, accumulate_language_grad, assemble
from .geometry import RelationInstance, TubeletPair, span_overlap, viou, viou_pair
from .numcore import InvalidArgument, NumericFailure, Rng
from .stage1 import InteractionProposal

log = logging.getLogger(__name__)


@dataclass
class Stage2Config:
    n: int = 25
    epochs: int = 10
    lr: float = 0.01
    batch: int = 128
    top_p: int = 3
    freeze_trunk: bool = False
    match_viou: float = 0.5


@dataclass
class PredicateModel:
    params: enc.SocialFabricParams
    feat_cfg: FeatureConfig
    predicates: list[str]
    n_sample: int = 25
    trained: bool = False
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)


@dataclass
class ScoredTriplet:
    relation: RelationInstance
    predicate_prob: float
    subject_score: float
    object_score: float
    video_id: str = ""

    @property
    def final_score(self) -> float:
        return self.relation.score

    def sort_key(self):
        r = self.relation
        return (-r.score, r.subject_track.tid, r.object_track.tid, r.span[0], r.span[1], r.predicate)

    def to_json(self) -> dict:
        r = self.relation
        return {
            "video_id": self.video_id,
            "subject_tid": r.subject_track.tid,
            "object_tid": r.object_track.tid,
            "subject_cat": r.subject_cat,
            "predicate": r.predicate,
            "object_cat": r.object_cat,
            "span": list(r.span),
            "predicate_prob": self.predicate_prob,
            "subject_score": self.subject_score,
            "object_score": self.object_score,
            "final_score": r.score,
        }


def sample_frames(span: tuple[int, int], n: int) -> np.ndarray:
    """n evenly spaced frame indices: T1 + floor(i * (T2 - T1) / n)."""
    t1, t2 = span
    if t2 <= t1:
        raise InvalidArgument(f"empty span {span}")
    return t1 + (np.arange(n) * (t2 - t1)) // n


# --------------------------------------------------------------------------
# Training samples
# --------------------------------------------------------------------------


@dataclass
class SpanSample:
    cache: PairFeatureCache
    span: tuple[int, int]
    label: int


def _match_track(track, span, tubelets, thresh):
    best, best_v = None, thresh
    ref = track.restrict(*span)
    for t in tubelets:
        lo, hi = span_overlap(t.span, span)
        if hi <= lo:
            continue
        v = viou(ref, t.restrict(*span))
        if v >= best_v and (best is None or v > best_v):
            best, best_v = t, v
    return best


def _proposal_relation(p: InteractionProposal, predicate: int = -1) -> RelationInstance:
    return RelationInstance(
        p.pair.subject.category, predicate, p.pair.object.category, p.pair.subject, p.pair.object, p.span
    )


def build_span_samples(
    dataset: Dataset,
    proposals: dict[str, list[InteractionProposal]] | None,
    feat_cfg: FeatureConfig,
    match_viou: float = 0.5,
    externals=None,
) -> list[SpanSample]:
    """GT relations re-anchored on detected tubelets, plus proposals matched to GT.

    A proposal takes the predicate of the GT with the highest viou_pair, if
    that is at least ``match_viou``; unmatched proposals are dropped.
    """
    out: list[SpanSample] = []
    for video in dataset.videos:
        ext = externals.get(video.video_id) if externals else None
        caches: dict[tuple[int, int], PairFeatureCache] = {}

        def cache_for(pair: TubeletPair):
            key = pair.key
            if key not in caches:
                caches[key] = PairFeatureCache(pair, feat_cfg, ext)
            return caches[key]

        for g in video.gt:
            s = _match_track(g.subject_track, g.span, video.tubelets, match_viou)
            o = _match_track(g.object_track, g.span, video.tubelets, match_viou)
            if s is None or o is None or s is o:
                continue
            lo, hi = span_overlap(s.span, o.span)
            span = span_overlap((lo, hi), g.span)
            if span[1] <= span[0]:
                continue
            out.append(SpanSample(cache_for(TubeletPair(s, o, (lo, hi))), span, g.predicate))
        for p in (proposals or {}).get(video.video_id, []):
            rel = _proposal_relation(p)
            best, best_v = None, match_viou
            for g in video.gt:
                v = viou_pair(rel, g)
                if v >= best_v and (best is None or v > best_v):
                    best, best_v = g, v
            if best is not None:
                out.append(SpanSample(cache_for(p.pair), p.span, best.predicate))
    return out


def _batch(samples: list[SpanSample], idx, n: int):
    static = np.stack([samples[i].cache.static[sample_frames(samples[i].span, n) - samples[i].cache.pair.overlap[0]] for i in idx])
    sc = np.array([samples[i].cache.subject_cat for i in idx])
    oc = np.array([samples[i].cache.object_cat for i in idx])
    y = np.array([samples[i].label for i in idx])
    return static, sc, oc, y


def train_stage2(
    dataset: Dataset,
    proposals: dict[str, list[InteractionProposal]] | None,
    stage1_params: enc.SocialFabricParams,
    feat_cfg: FeatureConfig,
    s2: Stage2Config,
    rng: Rng,
    externals=None,
    samples: list[SpanSample] | None = None,
) -> PredicateModel:
    """Fine-tune a copy of the stage-1 trunk with a fresh predicate head (mean CE)."""
    H = len(dataset.predicates)
    if H < 2:
        raise InvalidArgument("stage 2 needs at least two predicate classes")
    if samples is None:
        samples = build_span_samples(dataset, proposals, feat_cfg, s2.match_viou, externals)
    if not samples:
        raise InvalidArgument("stage-2 training set is empty (no GT or matched proposals)")
    if stage1_params.F != feat_cfg.dim:
        raise InvalidArgument(f"stage-1 trunk expects F={stage1_params.F}, features give {feat_cfg.dim}")
    params = enc.fresh_head(copy.deepcopy(stage1_params), H, rng)
    trainable = params.head() if s2.freeze_trunk else params.all()
    model = PredicateModel(params, feat_cfg, list(dataset.predicates), s2.n)
    step = 0
    for epoch in range(s2.epochs):
        order = rng.permutation(len(samples))
        total, correct = 0.0, 0
        for start in range(0, len(order), s2.batch):
            idx = order[start : start + s2.batch]
            static, sc, oc, y = _batch(samples, idx, s2.n)
            S = assemble(static, sc, oc, feat_cfg, params.lang_table)
            cache = enc.forward(S, params)
            loss, dlogits = nc.ce_loss(cache.logits, y)
            mean_loss = float(loss.mean())
            if not np.isfinite(mean_loss):
                raise NumericFailure(f"stage 2: non-finite loss at epoch {epoch} step {step}")
            dS = enc.sfe_backward(dlogits / len(y), cache, params)
            if params.lang_table is not None and not s2.freeze_trunk:
                accumulate_language_grad(dS, sc, oc, feat_cfg, params.lang_table)
            nc.sgd_step(trainable, s2.lr)
            params.zero_grad()
            total += mean_loss * len(idx)
            correct += int((cache.logits.argmax(axis=1) == y).sum())
            step += 1
        model.losses.append(total / len(order))
        model.accuracies.append(correct / len(order))
        log.info("stage2 epoch %d loss %.4f acc %.3f", epoch + 1, model.losses[-1], model.accuracies[-1])
    model.trained = s2.epochs > 0
    return model


# --------------------------------------------------------------------------
# Inference
# --------------------------------------------------------------------------


def predicate_probs(proposals: list[InteractionProposal], model: PredicateModel, externals=None) -> np.ndarray:
    """(len(proposals), H) predicate distributions; each proposal is independent."""
    if not proposals:
        return np.zeros((0, model.params.H))
    caches: dict[tuple[int, int], PairFeatureCache] = {}
    rows = []
    for p in proposals:
        key = (id(p.pair.subject), id(p.pair.object))
        if key not in caches:
            ext = externals.get(p.video_id) if externals else None
            caches[key] = PairFeatureCache(p.pair, model.feat_cfg, ext)
        rows.append(caches[key].rows(sample_frames(p.span, model.n_sample), model.params.lang_table))
    logits = enc.forward(np.stack(rows), model.params).logits
    return nc.softmax(logits, axis=-1)


def predict_predicates(proposal: InteractionProposal, model: PredicateModel, externals=None) -> list[tuple[int, float]]:
    probs = predicate_probs([proposal], model, externals)[0]
    order = sorted(range(len(probs)), key=lambda k: (-probs[k], k))
    return [(k, float(probs[k])) for k in order]


def assemble_triplets(
    proposals: list[InteractionProposal], model: PredicateModel, top_p: int = 3, externals=None, probs=None
) -> list[ScoredTriplet]:
    """Top-p predicates per proposal, scored predicate * subject * object.

    Sorted by final score, ties by (subject id, object id, span, predicate).
    """
    if top_p < 1:
        raise InvalidArgument("top_p must be >= 1")
    if probs is None:
        probs = predicate_probs(proposals, model, externals)
    out = []
    for p, pr in zip(proposals, probs):
        order = sorted(range(len(pr)), key=lambda k: (-pr[k], k))[:top_p]
        for k in order:
            final = float(pr[k]) * p.subject_score * p.object_score
            rel = RelationInstance(
                p.pair.subject.category, k, p.pair.object.category, p.pair.subject, p.pair.object, p.span, final
            )
            out.append(ScoredTriplet(rel, float(pr[k]), p.subject_score, p.object_score, p.video_id))
    out.sort(key=ScoredTriplet.sort_key)
    return out


def detect_video(
    video: Video, proposals: list[InteractionProposal], model: PredicateModel, top_p: int = 3, externals=None
) -> list[ScoredTriplet]:
    return assemble_triplets(proposals, model, top_p, externals)
