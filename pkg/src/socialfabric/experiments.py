"""Ablation harness and the planted-phase search experiment."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np

from . import encoding as enc
from . import numcore as nc
from . import synth
from .dataset import Dataset
from .evaluation import BUCKETS, MetricReport
from .geometry import temporal_iou
from .numcore import InvalidArgument
from .pipeline import PipelineOutput, RunConfig, feature_config_for, propose_all, run_pipeline
from .search import ExampleFrame, PrimitiveQuery, search

log = logging.getLogger(__name__)

K_SWEEP = (1, 8, 32, 64, 128)
VARIANT_SWEEP = ("avgpool", "literal", "aggregate")


@dataclass
class AblationRow:
    label: str
    report: MetricReport

    def to_json(self) -> dict:
        return {"label": self.label, **self.report.to_json()}


def _with(cfg: RunConfig, **changes) -> RunConfig:
    out = copy.deepcopy(cfg)
    for k, v in changes.items():
        setattr(out, k, v)
    return out


def ablate_k(train: Dataset, test: Dataset, cfg: RunConfig, ks=K_SWEEP) -> list[AblationRow]:
    rows = []
    for k in ks:
        log.info("ablate-k: K=%d", k)
        rows.append(AblationRow(f"K={k}", run_pipeline(train, test, _with(cfg, K=int(k))).report))
    return rows


def ablate_variant(train: Dataset, test: Dataset, cfg: RunConfig, variants=VARIANT_SWEEP) -> list[AblationRow]:
    rows = []
    for v in variants:
        if v not in VARIANT_SWEEP:
            raise InvalidArgument(f"unknown variant {v!r}")
        log.info("ablate-variant: %s", v)
        rows.append(AblationRow(v, run_pipeline(train, test, _with(cfg, variant=v)).report))
    return rows


def ablation_table(rows: list[AblationRow], key: str = "setting") -> str:
    if not rows:
        return ""
    r0 = rows[0].report
    cols = [key] + [f"P@{k}" for k in r0.p_at] + ["mAP"] + [f"R@{n}" for n in r0.recall_at]
    lines = ["  ".join(f"{c:>9}" for c in cols)]
    for row in rows:
        r = row.report
        vals = list(r.p_at.values()) + [r.map] + list(r.recall_at.values())
        lines.append("  ".join([f"{row.label:>9}"] + [f"{100 * v:9.2f}" for v in vals]))
    return "\n".join(lines) + "\n"


def duration_report(train: Dataset, test: Dataset, cfg: RunConfig) -> tuple[dict[str, float | None], PipelineOutput]:
    """Per-bucket detection mAP (short / medium / long GT durations)."""
    out = run_pipeline(train, test, cfg)
    return {b: out.report.per_duration.get(b) for b in BUCKETS}, out


def duration_table(per_bucket: dict[str, float | None]) -> str:
    head = "  ".join(f"{b:>8}" for b in BUCKETS)
    row = "  ".join("       -" if per_bucket.get(b) is None else f"{100 * per_bucket[b]:8.2f}" for b in BUCKETS)
    return head + "\n" + row + "\n"


# --------------------------------------------------------------------------
# Planted-phase search
# --------------------------------------------------------------------------


@dataclass
class SearchTrial:
    trial: int
    resolved: list[int]
    top_video: str
    top_span: tuple[int, int]
    best_tiou: float
    hit: bool


def touch_phase_spans(video, subject, obj) -> list[tuple[int, int]]:
    """Contact-phase spans of the GT relations on this exact pair."""
    out = []
    for g in video.gt:
        ps = g.extra.get("phase_spans", {}).get("contact")
        if ps and g.subject_track is subject and g.object_track is obj:
            out.append(tuple(ps))
    return out


def query_from_phase(video, relation, phase: str = "contact", num_examples: int = 3, categories: bool = True):
    """Example frames spread evenly over the middle half of one phase."""
    a, b = relation.extra["phase_spans"][phase]
    lo, hi = a + (b - a) // 4, b - 1 - (b - a) // 4
    frames = np.linspace(lo, max(lo, hi), num_examples).astype(int)
    ex = []
    for f in frames:
        ex.append(
            ExampleFrame(
                tuple(relation.subject_track.box_at(int(f)).tolist()),
                tuple(relation.object_track.box_at(int(f)).tolist()),
                relation.subject_cat if categories else None,
                relation.object_cat if categories else None,
            )
        )
    return PrimitiveQuery(ex)


def planted_search_trials(
    out: PipelineOutput,
    cfg: RunConfig,
    reference: Dataset,
    trials: int = 20,
    seed: int = 0,
    pool_videos: int = 8,
    num_examples: int = 3,
    noise: float = 0.004,
) -> list[SearchTrial]:
    """Retrieve a planted contact phase with a query built from a different video.

    Each trial draws a fresh pool of videos over the reference predicates plus
    one video holding a single planted ``touch`` relation, and a separate
    query video whose contact frames serve as the examples. A trial hits when
    the top-1 proposal sits on a pair with a GT contact phase and overlaps it
    at temporal IoU >= 0.5.
    """
    fc = feature_config_for(cfg, reference)
    base = 1_000_003 * (seed + 1)
    frames = 90
    results = []
    for t in range(trials):
        pool_spec = synth.ScenarioSpec(
            num_videos=pool_videos,
            frames_per_video=frames,
            num_entities=4,
            predicate_set=list(reference.predicates),
            noise=noise,
            seed=base + 3 * t,
            num_classes=reference.num_classes,
            prefix=f"pool{t}",
        )
        plant_spec = synth.ScenarioSpec(
            num_videos=1,
            frames_per_video=frames,
            num_entities=2,
            predicate_set=["touch"],
            noise=noise,
            seed=base + 3 * t + 1,
            num_classes=reference.num_classes,
            prefix=f"plant{t}",
        )
        query_spec = synth.ScenarioSpec(
            num_videos=1,
            frames_per_video=frames,
            num_entities=2,
            predicate_set=["touch"],
            noise=noise,
            seed=base + 3 * t + 2,
            num_classes=reference.num_classes,
            prefix=f"query{t}",
        )
        vids = synth.generate(pool_spec) + synth.generate(plant_spec)
        pool_ds = Dataset(f"pool{t}", list(reference.predicates), reference.num_classes, vids)
        props = propose_all(pool_ds, out.stage1_params, fc, cfg.stage1)
        pool = [p for v in pool_ds.videos for p in props[v.video_id]]
        qvid = synth.generate(query_spec)[0]
        query = query_from_phase(qvid, qvid.gt[0], num_examples=num_examples)
        hits = search(query, pool, out.model, top_r=1)
        if not hits:
            results.append(SearchTrial(t, query.resolved, "", (0, 0), 0.0, False))
            continue
        top = hits[0].proposal
        spans = touch_phase_spans(pool_ds.video(top.video_id), top.pair.subject, top.pair.object)
        best = max((temporal_iou(top.span, s) for s in spans), default=0.0)
        results.append(SearchTrial(t, list(query.resolved), top.video_id, top.span, best, best >= 0.5))
        log.info("search trial %d: primitives %s top %s %s tIoU %.3f", t, query.resolved, top.video_id, top.span, best)
    return results


def hit_rate(trials: list[SearchTrial]) -> float:
    return sum(t.hit for t in trials) / len(trials) if trials else 0.0


# --------------------------------------------------------------------------
# Gradient check over the full encoding stack
# --------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    variant: str
    H: int
    dims: tuple[int, int, int, int, int]
    max_rel_error: float


def _stack_loss(S, params, y):
    cache = enc.forward(S, params)
    if params.H == 1:
        prob = nc.sigmoid(cache.logits[:, 0])
        loss, _ = nc.bce_loss(prob, y)
        # BCE through the sigmoid collapses to prob - y
        dlogits = (prob - y)[:, None]
    else:
        loss, dlogits = nc.ce_loss(cache.logits, y)
    return float(loss.mean()), dlogits / len(y), cache


def gradient_suite(num_configs: int = 20, seed: int = 0, h: float = 1e-5) -> list[GradCheckResult]:
    """Central-difference check of every parameter and the input, per variant and head."""
    root = nc.Rng(seed)
    out = []
    for c in range(num_configs):
        rng = root.spawn(c)
        F, D, K = 2 + rng.integers(4), 2 + rng.integers(4), 1 + rng.integers(4)
        N, B = 2 + rng.integers(4), 1 + rng.integers(3)
        S = nc.ParamTensor("S", rng.normal_array((B, N, F)))
        for variant in enc.VARIANTS:
            for H in (1, 2 + rng.integers(3)):
                params = enc.init_params(F, D, K, H, rng.spawn(1000 + H), variant)
                # move the affine terms off their identity init
                params.ln_gain.value += 0.3 * rng.normal_array((F,))
                params.ln_bias.value += 0.3 * rng.normal_array((F,))
                params.b.value += 0.3 * rng.normal_array((D,))
                if H == 1:
                    y = np.array([rng.integers(2) for _ in range(B)], dtype=np.float64)
                else:
                    y = np.array([rng.integers(H) for _ in range(B)])
                tensors = params.all()
                params.zero_grad()
                _, dlogits, cache = _stack_loss(S.value, params, y)
                dS = enc.sfe_backward(dlogits, cache, params)
                analytic = [np.array(p.grad, copy=True) for p in tensors] + [dS]
                err = nc.grad_check(lambda: _stack_loss(S.value, params, y)[0], tensors + [S], h, analytic)
                params.zero_grad()
                out.append(GradCheckResult(variant, H, (F, D, K, N, B), err))
    return out
