import dataclasses

import pytest

from socialfabric import experiments as exps
from socialfabric import synth
from socialfabric.features import FeatureConfig
from socialfabric.numcore import InvalidArgument
from socialfabric.pipeline import RunConfig
from socialfabric.stage1 import Stage1Config
from socialfabric.stage2 import Stage2Config


@pytest.fixture(scope="module")
def tiny():
    suite = synth.make_suite("compositional", seed=3)
    small = {k: dataclasses.replace(ds, videos=ds.videos[:6]) for k, ds in suite.items()}
    cfg = RunConfig(
        D=4,
        K=4,
        features=FeatureConfig(use_mask=False, language_dim=2),
        stage1=Stage1Config(epochs=1),
        stage2=Stage2Config(epochs=1, batch=16),
    )
    return small["train"], small["test"], cfg


def test_ablate_k_sweeps_five_sizes(tiny):
    rows = exps.ablate_k(*tiny)
    assert [r.label for r in rows] == ["K=1", "K=8", "K=32", "K=64", "K=128"]
    table = exps.ablation_table(rows, "K").splitlines()
    assert len(table) == 6 and table[0].split()[0] == "K"
    for r in rows:
        assert 0.0 <= r.report.map <= 1.0


def test_ablate_variant_rows_and_errors(tiny):
    rows = exps.ablate_variant(*tiny)
    assert [r.label for r in rows] == ["avgpool", "literal", "aggregate"]
    assert tiny[2].variant == "literal"  # caller's config untouched
    with pytest.raises(InvalidArgument):
        exps.ablate_variant(*tiny, variants=("netvlad",))


def test_touch_phase_spans_follow_contact():
    video = synth.make_suite("compositional", seed=0)["test"].videos[0]
    for g in video.gt:
        spans = exps.touch_phase_spans(video, g.subject_track, g.object_track)
        phases = g.extra.get("phase_spans", {})
        if "contact" in phases:
            assert spans and all(g.span[0] <= a < b <= g.span[1] for a, b in spans)
        else:
            assert spans == []
