import numpy as np
import pytest
from conftest import rel, tube
from oracles import brute_metrics, random_metric_case

from socialfabric.evaluation import (
    EvalConfig,
    VideoResult,
    ap_from_tp,
    detection_ap,
    duration_bucket,
    duration_map,
    evaluate,
    greedy_match,
    tagging_precision,
)


def _pair():
    return tube(0, 20, tid=0, cat=0), tube(0, 20, (0.5, 0.5, 0.7, 0.7), tid=1, cat=1)


def test_precision_hand_case():
    s, o = _pair()
    A, B, C = (rel(s, o, (0, 10), pred=p) for p in (0, 1, 2))
    preds = [rel(s, o, (0, 10), pred=0, score=0.9), rel(s, o, (0, 10), pred=2, score=0.8), rel(s, o, (0, 10), pred=1, score=0.7)]
    res = [VideoResult("v", preds, [A, B])]
    assert tagging_precision(res, 1) == 1.0
    assert tagging_precision(res, 5) == pytest.approx(0.4)
    assert C.predicate == 2


def test_precision_counts_distinct_triplets():
    s, o = _pair()
    g = rel(s, o, (0, 10), pred=0)
    preds = [rel(s, o, (0, 10), pred=0, score=0.9), rel(s, o, (5, 15), pred=0, score=0.8)]
    assert tagging_precision([VideoResult("v", preds, [g])], 2) == 0.5


def test_precision_empty():
    s, o = _pair()
    assert tagging_precision([VideoResult("v", [], [rel(s, o, (0, 5))])], 1) == 0.0


def test_ap_cases():
    s, o = _pair()
    g = rel(s, o, (0, 10))
    assert detection_ap([rel(s, o, (0, 10), score=0.5)], [g]) == 1.0
    wrong = rel(s, o, (0, 10), pred=1, score=0.9)
    assert detection_ap([wrong, rel(s, o, (0, 10), score=0.5)], [g]) == 0.5
    assert detection_ap([wrong], [g]) == 0.0


def test_ap_no_gt_warns():
    with pytest.warns(UserWarning):
        assert detection_ap([], []) == 0.0


def test_greedy_takes_best_unmatched():
    s, o = _pair()
    g1, g2 = rel(s, o, (0, 10)), rel(s, o, (8, 20))
    p = rel(s, o, (9, 20), score=0.9)
    tp = greedy_match([p], [g1, g2])
    assert tp.tolist() == [True]
    # the second identical prediction cannot reuse g2
    tp = greedy_match([p, rel(s, o, (9, 20), score=0.8)], [g1, g2])
    assert tp.tolist() == [True, False]


def test_ap_from_tp():
    assert ap_from_tp(np.array([True, False, True]), 2) == pytest.approx((1 + 2 / 3) / 2)
    assert ap_from_tp(np.array([], dtype=bool), 0) == 0.0


def test_perfect_video():
    s, o = _pair()
    g = rel(s, o, (0, 10))
    rep = evaluate([VideoResult("v", [rel(s, o, (0, 10), score=0.9)], [g])], EvalConfig(p_at=(1,)))
    assert rep.p_at[1] == 1.0 and rep.map == 1.0 and rep.recall_at[50] == 1.0


def test_recall_monotone(np_rng):
    for _ in range(20):
        case = random_metric_case(np_rng)
        rep = evaluate([VideoResult(str(i), p, g) for i, (p, g) in enumerate(case)], EvalConfig(recall_at=(1, 3, 50, 100)))
        r = rep.recall_at
        assert r[1] <= r[3] <= r[50] <= r[100]


@pytest.mark.filterwarnings("ignore")
def test_matches_brute_force_oracle(np_rng):
    for _ in range(100):
        case = random_metric_case(np_rng)
        rep = evaluate([VideoResult(str(i), p, g) for i, (p, g) in enumerate(case)])
        ref = brute_metrics(case)
        assert rep.map == pytest.approx(ref["map"], abs=1e-12)
        for k in rep.p_at:
            assert rep.p_at[k] == pytest.approx(ref["p_at"][k], abs=1e-12)
        for n in rep.recall_at:
            assert rep.recall_at[n] == pytest.approx(ref["recall_at"][n], abs=1e-12)


def test_duration_buckets():
    assert duration_bucket(29) == "short"
    assert duration_bucket(30) == "medium"
    assert duration_bucket(119) == "medium"
    assert duration_bucket(120) == "long"


def test_duration_map_ignores_other_bucket_hits():
    s, o = tube(0, 200, tid=0), tube(0, 200, (0.5, 0.5, 0.7, 0.7), tid=1)
    short_g, long_g = rel(s, o, (0, 20)), rel(s, o, (40, 190))
    preds = [rel(s, o, (40, 190), score=0.9), rel(s, o, (0, 20), score=0.5)]
    out = duration_map([VideoResult("v", preds, [short_g, long_g])])
    # the long detection ranks first but is not a false positive for the short bucket
    assert out["short"] == 1.0
    assert out["long"] == 1.0
    assert out["medium"] is None


def test_report_serialization():
    s, o = _pair()
    rep = evaluate([VideoResult("v", [rel(s, o, (0, 10), score=0.9)], [rel(s, o, (0, 10))])])
    assert '"map": 1.0' in rep.dumps()
    assert "mAP" in rep.table()
