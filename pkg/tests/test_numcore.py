import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socialfabric import numcore as nc


class TestRng:
    def test_same_seed_same_stream(self):
        a, b = nc.Rng(42), nc.Rng(42)
        assert [a.random_u64() for _ in range(50)] == [b.random_u64() for _ in range(50)]

    def test_seeds_differ(self):
        assert nc.Rng(1).random_u64() != nc.Rng(2).random_u64()

    def test_reference_values(self):
        # xoshiro256** seeded through splitmix64, computed by hand-written reference below
        def splitmix(x):
            x = (x + 0x9E3779B97F4A7C15) & (2**64 - 1)
            z = x
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & (2**64 - 1)
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & (2**64 - 1)
            return x, z ^ (z >> 31)

        def rotl(x, k):
            return ((x << k) | (x >> (64 - k))) & (2**64 - 1)

        st_, s = 7, []
        for _ in range(4):
            st_, v = splitmix(st_)
            s.append(v)
        expect = []
        for _ in range(5):
            expect.append((rotl((s[1] * 5) & (2**64 - 1), 7) * 9) & (2**64 - 1))
            t = (s[1] << 17) & (2**64 - 1)
            s[2] ^= s[0]
            s[3] ^= s[1]
            s[1] ^= s[2]
            s[0] ^= s[3]
            s[2] ^= t
            s[3] = rotl(s[3], 45)
        r = nc.Rng(7)
        assert [r.random_u64() for _ in range(5)] == expect

    def test_uniform_range(self):
        r = nc.Rng(3)
        u = np.array([r.uniform() for _ in range(5000)])
        assert u.min() >= 0 and u.max() < 1
        assert abs(u.mean() - 0.5) < 0.02

    def test_integers_bounds_and_coverage(self):
        r = nc.Rng(5)
        vals = [r.integers(7) for _ in range(2000)]
        assert set(vals) == set(range(7))

    def test_normal_moments(self):
        x = nc.Rng(11).normal_array((20000,))
        assert abs(x.mean()) < 0.03
        assert abs(x.std() - 1) < 0.03

    def test_permutation(self):
        p = nc.Rng(9).permutation(30)
        assert sorted(p.tolist()) == list(range(30))

    def test_spawn_is_deterministic_and_independent(self):
        a = nc.Rng(4).spawn(1)
        b = nc.Rng(4).spawn(1)
        c = nc.Rng(4).spawn(2)
        xa = [a.random_u64() for _ in range(5)]
        assert xa == [b.random_u64() for _ in range(5)]
        assert xa != [c.random_u64() for _ in range(5)]

    def test_spawn_does_not_advance_parent(self):
        a, b = nc.Rng(8), nc.Rng(8)
        a.spawn(3)
        assert a.random_u64() == b.random_u64()


class TestLayerNorm:
    def test_hand_case(self):
        out, _ = nc.layer_norm(np.array([[1.0, 3.0]]), np.ones(2), np.zeros(2), eps=1e-14)
        np.testing.assert_allclose(out, [[-1.0, 1.0]])

    def test_constant_row_maps_to_bias(self):
        bias = np.array([0.3, -0.2, 1.5])
        out, _ = nc.layer_norm(np.full((2, 3), 4.2), np.ones(3), bias)
        np.testing.assert_allclose(out, np.tile(bias, (2, 1)))

    def test_zero_gain(self, np_rng):
        bias = np_rng.normal(size=4)
        out, _ = nc.layer_norm(np_rng.normal(size=(5, 4)), np.zeros(4), bias)
        np.testing.assert_allclose(out, np.tile(bias, (5, 1)))

    def test_backward_matches_finite_differences(self, np_rng):
        x = nc.ParamTensor("x", np_rng.normal(size=(3, 5)))
        g = nc.ParamTensor("g", np_rng.normal(size=5))
        b = nc.ParamTensor("b", np_rng.normal(size=5))
        w = np_rng.normal(size=(3, 5))

        def f():
            return float((nc.layer_norm(x.value, g.value, b.value)[0] * w).sum())

        _, cache = nc.layer_norm(x.value, g.value, b.value)
        dx, dg, db = nc.layer_norm_backward(w, cache)
        assert nc.grad_check(f, [x, g, b], analytic=[dx, dg, db]) < 1e-7


class TestLinearAndSoftmax:
    def test_identity(self, np_rng):
        x = np_rng.normal(size=(4, 3))
        np.testing.assert_array_equal(nc.linear_forward(x, np.eye(3), np.zeros(3)), x)

    def test_zero_input_gives_bias(self):
        b = np.array([1.0, -2.0])
        np.testing.assert_array_equal(nc.linear_forward(np.zeros((3, 4)), np.ones((4, 2)), b), np.tile(b, (3, 1)))

    def test_hand_case(self):
        out = nc.linear_forward(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([0.5]))
        np.testing.assert_allclose(out, [[3.5]])

    def test_linear_backward(self, np_rng):
        x = nc.ParamTensor("x", np_rng.normal(size=(3, 4)))
        W = nc.ParamTensor("W", np_rng.normal(size=(4, 2)))
        b = nc.ParamTensor("b", np_rng.normal(size=2))
        up = np_rng.normal(size=(3, 2))
        dx, dW, db = nc.linear_backward(up, x.value, W.value)
        err = nc.grad_check(lambda: float((nc.linear_forward(x.value, W.value, b.value) * up).sum()), [x, W, b], analytic=[dx, dW, db])
        assert err < 1e-8

    def test_softmax_cases(self):
        np.testing.assert_allclose(nc.softmax(np.zeros(3)), [1 / 3] * 3)
        np.testing.assert_array_equal(nc.softmax(np.array([2.5])), [1.0])
        np.testing.assert_allclose(nc.softmax(np.array([0.0, -1.0])), [0.7311, 0.2689], atol=1e-4)

    def test_softmax_large_logits_stay_finite(self):
        p = nc.softmax(np.array([1e4, 0.0, -1e4]))
        assert np.all(np.isfinite(p)) and p[0] == 1.0

    def test_softmax_empty_raises(self):
        with pytest.raises(nc.InvalidArgument):
            nc.softmax(np.zeros(0))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    def test_softmax_simplex(self, logits):
        p = nc.softmax(np.array(logits))
        assert abs(p.sum() - 1) < 1e-12 and np.all(p >= 0)

    def test_softmax_backward(self, np_rng):
        x = nc.ParamTensor("x", np_rng.normal(size=(2, 4)))
        up = np_rng.normal(size=(2, 4))
        dx = nc.softmax_backward(up, nc.softmax(x.value))
        assert nc.grad_check(lambda: float((nc.softmax(x.value) * up).sum()), [x], analytic=[dx]) < 1e-8


class TestLosses:
    def test_bce_half(self):
        l1, _ = nc.bce_loss(np.array([0.5]), np.array([1.0]))
        l0, _ = nc.bce_loss(np.array([0.5]), np.array([0.0]))
        assert math.isclose(l1[0], math.log(2), rel_tol=1e-12)
        assert l1[0] == l0[0]

    def test_bce_confident_correct(self):
        l, _ = nc.bce_loss(np.array([1.0 - 1e-12]), np.array([1.0]))
        assert l[0] < 1e-6

    def test_bce_clamps(self):
        l, d = nc.bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        assert np.all(np.isfinite(l)) and np.all(np.isfinite(d))

    def test_ce_uniform(self):
        l, d = nc.ce_loss(np.zeros(4), 2)
        assert math.isclose(float(l), math.log(4), rel_tol=1e-12)
        assert abs(d.sum()) < 1e-15

    def test_ce_confident(self):
        l, _ = nc.ce_loss(np.array([0.0, 80.0, 0.0]), 1)
        assert float(l) < 1e-30

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=6), st.integers(0, 5))
    def test_ce_grad_sums_to_zero(self, logits, label):
        label = label % len(logits)
        _, d = nc.ce_loss(np.array(logits), label)
        assert abs(d.sum()) < 1e-12


class TestSgdAndGradCheck:
    def test_step(self):
        p = nc.ParamTensor("w", np.array([1.0]), np.array([0.5]))
        nc.sgd_step([p], 0.1)
        assert p.value[0] == pytest.approx(0.95)
        assert p.grad[0] == 0.0

    def test_zero_grad_unchanged(self):
        p = nc.ParamTensor("w", np.array([2.0]), np.array([0.0]))
        nc.sgd_step([p], 0.1)
        assert p.value[0] == 2.0

    def test_two_steps(self):
        p = nc.ParamTensor("w", np.array([0.0]))
        for _ in range(2):
            p.grad = np.array([1.0])
            nc.sgd_step([p], 0.1)
        assert p.value[0] == pytest.approx(-0.2)

    def test_bad_lr(self):
        with pytest.raises(nc.InvalidArgument):
            nc.sgd_step([nc.ParamTensor("w", np.zeros(1))], 0.0)

    def test_polynomial(self):
        w = nc.ParamTensor("w", np.array([1.3, -0.4]))
        assert nc.grad_check(lambda: float((w.value**2).sum()), [w], analytic=[2 * w.value]) < 1e-8

    def test_negative_control(self):
        w = nc.ParamTensor("w", np.array([1.3, -0.4]))
        err = nc.grad_check(lambda: float((w.value**2).sum()), [w], analytic=[4 * w.value])
        assert err == pytest.approx(0.5, abs=1e-6)

    def test_step_size_bounds(self):
        w = nc.ParamTensor("w", np.zeros(1), np.zeros(1))
        with pytest.raises(nc.InvalidArgument):
            nc.grad_check(lambda: 0.0, [w], h=1e-2)

    def test_non_finite_loss(self):
        w = nc.ParamTensor("w", np.zeros(1), np.zeros(1))
        with pytest.raises(nc.NumericFailure):
            nc.grad_check(lambda: float("nan"), [w])
