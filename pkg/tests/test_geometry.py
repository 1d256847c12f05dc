import numpy as np
import pytest
from conftest import rel, tube
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import track_cells, viou_pair_raster, viou_raster

from socialfabric.geometry import Box, Tubelet, box_iou, frame_iou, make_pairs, temporal_iou, viou, viou_pair
from socialfabric.numcore import InvalidArgument


def test_box_validate():
    Box(0.1, 0.1, 0.2, 0.2).validate()
    with pytest.raises(InvalidArgument):
        Box(0.3, 0.1, 0.2, 0.2).validate()


def test_box_iou_cases():
    assert frame_iou([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert frame_iou([0, 0, 0.2, 0.2], [0.5, 0.5, 1, 1]) == 0.0
    assert frame_iou([0, 0, 1, 1], [0, 0, 0.5, 1]) == 0.5


def test_box_iou_degenerate_is_zero():
    assert frame_iou([0.2, 0.2, 0.2, 0.2], [0.2, 0.2, 0.2, 0.2]) == 0.0


def test_box_iou_vectorized(np_rng):
    a = np.sort(np_rng.random((10, 2, 2)), axis=1).transpose(0, 2, 1).reshape(10, 4)[:, [0, 2, 1, 3]]
    b = np.sort(np_rng.random((10, 2, 2)), axis=1).transpose(0, 2, 1).reshape(10, 4)[:, [0, 2, 1, 3]]
    vec = box_iou(a, b)
    for i in range(10):
        assert vec[i] == frame_iou(a[i], b[i])


def test_make_pairs_counts():
    ts = [tube(0, 10, tid=i) for i in range(4)]
    assert len(make_pairs(ts)) == 12
    assert make_pairs([tube(0, 5, tid=0), tube(10, 5, tid=1)]) == []
    three = [tube(0, 10, tid=0), tube(5, 10, tid=1), tube(20, 10, tid=2)]
    pairs = make_pairs(three)
    assert sorted(p.key for p in pairs) == [(0, 1), (1, 0)]
    assert pairs[0].overlap == (5, 10) and len(pairs[0]) == 5


def test_temporal_iou():
    assert temporal_iou((0, 10), (0, 10)) == 1.0
    assert temporal_iou((0, 10), (10, 20)) == 0.0
    assert temporal_iou((0, 10), (5, 15)) == pytest.approx(1 / 3)


def test_viou_hand_cases():
    a = tube(0, 10)
    assert viou(a, tube(0, 10)) == 1.0
    assert viou(a, tube(20, 5)) == 0.0
    assert viou(a, tube(5, 10)) == 1 / 3


def test_viou_pair_cases():
    s, o = tube(0, 10, tid=0), tube(0, 10, (0.5, 0.5, 0.7, 0.7), tid=1)
    g = rel(s, o, (0, 10))
    assert viou_pair(g, g) == 1.0
    far = tube(0, 10, (0.8, 0.8, 0.9, 0.9), tid=2)
    assert viou_pair(rel(s, far, (0, 10)), g) == 0.0
    # object shifted in time only: subject 1.0, object 1/3
    p = rel(tube(0, 15, tid=0), tube(5, 10, (0.5, 0.5, 0.7, 0.7), tid=1), (0, 15))
    g2 = rel(tube(0, 15, tid=0), tube(0, 10, (0.5, 0.5, 0.7, 0.7), tid=1), (0, 15))
    assert viou_pair(p, g2) == pytest.approx(1 / 3, abs=1e-15)


def test_viou_pair_restricts_to_span():
    s, o = tube(0, 20, tid=0), tube(0, 20, (0.5, 0.5, 0.7, 0.7), tid=1)
    assert viou_pair(rel(s, o, (0, 10)), rel(s, o, (5, 15))) == pytest.approx(1 / 3)


lattice = st.integers(0, 15)


@st.composite
def lattice_tubes(draw):
    t0 = draw(st.integers(0, 6))
    n = draw(st.integers(1, 6))
    boxes = []
    for _ in range(n):
        x1, y1 = draw(lattice), draw(lattice)
        x2, y2 = draw(st.integers(x1 + 1, 16)), draw(st.integers(y1 + 1, 16))
        boxes.append([x1 / 16, y1 / 16, x2 / 16, y2 / 16])
    return Tubelet(0, 1.0, t0, boxes)


@settings(max_examples=200, deadline=None)
@given(lattice_tubes(), lattice_tubes())
def test_viou_matches_raster_oracle(a, b):
    assert viou(a, b) == pytest.approx(float(viou_raster(track_cells(a), track_cells(b))), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(lattice_tubes(), lattice_tubes())
def test_viou_symmetric_and_bounded(a, b):
    v = viou(a, b)
    assert v == viou(b, a)
    assert 0.0 <= v <= 1.0


@settings(max_examples=100, deadline=None)
@given(lattice_tubes(), lattice_tubes(), lattice_tubes(), lattice_tubes())
def test_viou_pair_matches_raster_oracle(s1, o1, s2, o2):
    def span_of(s, o):
        lo, hi = max(s.t_begin, o.t_begin), min(s.t_end, o.t_end)
        return (lo, hi) if hi > lo else None

    sp1, sp2 = span_of(s1, o1), span_of(s2, o2)
    if sp1 is None or sp2 is None:
        return
    p, g = rel(s1, o1, sp1), rel(s2, o2, sp2)
    assert viou_pair(p, g) == pytest.approx(float(viou_pair_raster(p, g)), abs=1e-12)


def test_tubelet_restrict_and_scores():
    t = Tubelet(1, 0.9, 3, np.tile([0.1, 0.1, 0.2, 0.2], (6, 1)), frame_scores=[0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    r = t.restrict(4, 6)
    assert r.span == (4, 6)
    np.testing.assert_allclose(r.frame_scores, [0.6, 0.7])
    assert t.mean_score(3, 5) == pytest.approx(0.55)
    with pytest.raises(InvalidArgument):
        t.restrict(20, 30)


def test_tubelet_rejects_mismatched_scores():
    with pytest.raises(InvalidArgument):
        Tubelet(0, 1.0, 0, np.zeros((3, 4)), frame_scores=[1.0])
