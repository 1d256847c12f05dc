"""End-to-end runs: stage 1 -> proposals -> stage 2 -> detections -> metrics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

from . import encoding as enc
from .dataset import Dataset
from .evaluation import EvalConfig, MetricReport, VideoResult, evaluate
from .features import FeatureConfig
from .numcore import Rng
from .stage1 import InteractionProposal, Stage1Config, generate_proposals, train_stage1
from .stage2 import PredicateModel, ScoredTriplet, Stage2Config, assemble_triplets, train_stage2

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    D: int = 512
    K: int = 64
    variant: str = "literal"
    seed: int = 0
    features: FeatureConfig = field(default_factory=FeatureConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "D": self.D,
            "K": self.K,
            "variant": self.variant,
            "seed": self.seed,
            "features": self.features.to_dict(),
            "stage1": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.stage1).items()},
            "stage2": asdict(self.stage2),
            "eval": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.eval).items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        s1 = dict(d.get("stage1", {}))
        if "thresholds" in s1:
            s1["thresholds"] = tuple(s1["thresholds"])
        ev = {k: tuple(v) if isinstance(v, list) else v for k, v in d.get("eval", {}).items()}
        return cls(
            D=d.get("D", 512),
            K=d.get("K", 64),
            variant=d.get("variant", "literal"),
            seed=d.get("seed", 0),
            features=FeatureConfig.from_dict(d["features"]) if "features" in d else FeatureConfig(),
            stage1=Stage1Config(**s1),
            stage2=Stage2Config(**d.get("stage2", {})),
            eval=EvalConfig(**ev),
        )


def feature_config_for(cfg: RunConfig, dataset: Dataset) -> FeatureConfig:
    fc = FeatureConfig.from_dict(cfg.features.to_dict())
    fc.num_classes = dataset.num_classes
    return fc


def init_stage1(cfg: RunConfig, fc: FeatureConfig, rng: Rng) -> enc.SocialFabricParams:
    lang = (fc.num_classes, fc.language_dim) if fc.use_language else (None, None)
    return enc.init_params(fc.dim, cfg.D, cfg.K, 1, rng, cfg.variant, *lang)


def propose_all(dataset: Dataset, params, fc: FeatureConfig, s1: Stage1Config, externals=None, score_fns=None):
    out: dict[str, list[InteractionProposal]] = {}
    for v in dataset.videos:
        ext = externals.get(v.video_id) if externals else None
        fn = score_fns(v) if score_fns else None
        out[v.video_id] = generate_proposals(v, params, fc, s1, ext, fn)
    return out


def detect_all(dataset: Dataset, proposals, model: PredicateModel, top_p: int, externals=None):
    return {v.video_id: assemble_triplets(proposals.get(v.video_id, []), model, top_p, externals) for v in dataset.videos}


def results_for(dataset: Dataset, detections: dict[str, list[ScoredTriplet]]) -> list[VideoResult]:
    return [VideoResult(v.video_id, [t.relation for t in detections.get(v.video_id, [])], v.gt) for v in dataset.videos]


@dataclass
class PipelineOutput:
    stage1_params: enc.SocialFabricParams
    stage1_losses: list[float]
    model: PredicateModel
    train_proposals: dict
    test_proposals: dict
    detections: dict
    report: MetricReport


def run_pipeline(train: Dataset, test: Dataset, cfg: RunConfig, externals=None) -> PipelineOutput:
    """Train both stages on ``train`` and evaluate on ``test``.

    Randomness comes from separate streams of one seed: stage-1 init and
    shuffling, then stage-2 head init and shuffling.
    """
    root = Rng(cfg.seed)
    fc = feature_config_for(cfg, train)
    params = init_stage1(cfg, fc, root.spawn(1))
    s1 = train_stage1(train, params, fc, cfg.stage1, root.spawn(2), externals)
    train_props = propose_all(train, params, fc, cfg.stage1, externals)
    model = train_stage2(train, train_props, params, fc, cfg.stage2, root.spawn(3), externals)
    test_props = propose_all(test, params, fc, cfg.stage1, externals)
    dets = detect_all(test, test_props, model, cfg.stage2.top_p, externals)
    report = evaluate(results_for(test, dets), cfg.eval)
    return PipelineOutput(params, s1.losses, model, train_props, test_props, dets, report)
