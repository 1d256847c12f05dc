"""Query-by-primitive-example over interaction proposals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoding as enc
from .features import PairFeatureCache, single_frame_features
from .numcore import DataError, InvalidArgument
from .stage1 import InteractionProposal
from .stage2 import PredicateModel, sample_frames

SCORE_DECIMALS = 10


@dataclass
class ExampleFrame:
    subject_box: tuple[float, float, float, float]
    object_box: tuple[float, float, float, float]
    subject_cat: int | None = None
    object_cat: int | None = None


@dataclass
class PrimitiveQuery:
    examples: list[ExampleFrame]
    resolved: list[int] = field(default_factory=list)


@dataclass
class SearchHit:
    rank: int
    score: float
    proposal: InteractionProposal

    def to_json(self) -> dict:
        p = self.proposal
        return {
            "rank": self.rank,
            "score": self.score,
            "video_id": p.video_id,
            "subject_tid": p.pair.subject.tid,
            "object_tid": p.pair.object.tid,
            "span": list(p.span),
            "subject_box_start": p.pair.subject.box_at(p.span[0]).tolist(),
            "object_box_start": p.pair.object.box_at(p.span[0]).tolist(),
        }


def nearest_primitives(R: np.ndarray, C: np.ndarray) -> np.ndarray:
    """argmin_k ||R_j - C_k||^2 per row; np.argmin keeps the lowest index on ties."""
    return np.argmin(enc.sq_distances(R, C), axis=-1)


def resolve_query(examples: list[ExampleFrame], model: PredicateModel) -> list[int]:
    """Nearest primitive per example, deduplicated in first-seen order."""
    if not model.trained:
        raise InvalidArgument("search needs a trained model")
    if not examples:
        raise InvalidArgument("query needs at least one example frame")
    if model.params.variant == "avgpool":
        raise InvalidArgument("avgpool models have no primitives to search by")
    rows = np.stack(
        [
            single_frame_features(
                e.subject_box, e.object_box, model.feat_cfg, model.params.lang_table, e.subject_cat, e.object_cat
            )
            for e in examples
        ]
    )
    R, _ = enc.embed(rows, model.params)
    out: list[int] = []
    for k in nearest_primitives(R, model.params.C.value).tolist():
        if k not in out:
            out.append(int(k))
    return out


def relevance_matrix(proposals: list[InteractionProposal], model: PredicateModel, externals=None) -> np.ndarray:
    """(len(proposals), K): assignment mass per primitive over each proposal's n sampled frames."""
    if not proposals:
        return np.zeros((0, model.params.K))
    caches: dict[tuple[int, int], PairFeatureCache] = {}
    rows = []
    for p in proposals:
        key = (id(p.pair.subject), id(p.pair.object))
        if key not in caches:
            ext = externals.get(p.video_id) if externals else None
            caches[key] = PairFeatureCache(p.pair, model.feat_cfg, ext)
        rows.append(caches[key].rows(sample_frames(p.span, model.n_sample), model.params.lang_table))
    R, _ = enc.embed(np.stack(rows), model.params)
    z = enc.soft_assign(R, model.params.C.value, model.params.beta)
    return z.sum(axis=1)


def proposal_relevance(proposal: InteractionProposal, k: int, model: PredicateModel, externals=None) -> float:
    if not 0 <= k < model.params.K:
        raise InvalidArgument(f"primitive {k} outside [0, {model.params.K})")
    return float(relevance_matrix([proposal], model, externals)[0, k])


def search(
    query: PrimitiveQuery | list[int],
    proposals: list[InteractionProposal],
    model: PredicateModel,
    top_r: int = 10,
    externals=None,
    relevance: np.ndarray | None = None,
) -> list[SearchHit]:
    """Rank proposals by summed relevance of the query's primitives.

    Scores are rounded to ``SCORE_DECIMALS`` places, so proposals whose mass
    differs only by rounding error tie; ties go to the smaller (video_id,
    span start, pair). Parameters are only read.
    """
    if isinstance(query, PrimitiveQuery):
        if not query.resolved:
            query.resolved = resolve_query(query.examples, model)
        prims = query.resolved
    else:
        prims = list(query)
    if not proposals:
        return []
    if any(not 0 <= k < model.params.K for k in prims):
        raise InvalidArgument("query references a primitive outside the codebook")
    if relevance is None:
        relevance = relevance_matrix(proposals, model, externals)
    # float noise in the summed masses must not decide the ranking
    scores = np.round(relevance[:, prims].sum(axis=1), SCORE_DECIMALS)
    order = sorted(
        range(len(proposals)),
        key=lambda i: (-scores[i], proposals[i].video_id, proposals[i].span[0], proposals[i].pair.key),
    )
    return [SearchHit(r + 1, float(scores[i]), proposals[i]) for r, i in enumerate(order[:top_r])]


def load_query(doc) -> PrimitiveQuery:
    """Parse a query document: a list of {subject_box, object_box[, subject_cat, object_cat]}."""
    if not isinstance(doc, list) or not doc:
        raise DataError("query file must be a non-empty JSON list of example frames")
    examples = []
    for i, e in enumerate(doc):
        try:
            examples.append(
                ExampleFrame(
                    tuple(map(float, e["subject_box"])),
                    tuple(map(float, e["object_box"])),
                    e.get("subject_cat"),
                    e.get("object_cat"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"query example {i} is malformed: {exc}") from None
    return PrimitiveQuery(examples)
