import numpy as np
import pytest
from oracles import naive_encoding

from socialfabric import encoding as enc
from socialfabric import numcore as nc
from socialfabric.stage1 import frame_contributions


def params_for(F=5, D=4, K=3, H=2, variant="literal", seed=0, lang=False):
    p = enc.init_params(F, D, K, H, nc.Rng(seed), variant, *((4, 3) if lang else (None, None)))
    r = nc.Rng(seed + 100)
    p.ln_gain.value += 0.2 * r.normal_array((F,))
    p.ln_bias.value += 0.2 * r.normal_array((F,))
    p.b.value += 0.2 * r.normal_array((D,))
    return p


@pytest.mark.parametrize("variant", enc.VARIANTS)
def test_forward_matches_naive_loop(variant, np_rng):
    p = params_for(variant=variant)
    S = np_rng.normal(size=(2, 6, 5))
    cache = enc.forward(S, p)
    for i in range(2):
        ref = naive_encoding(S[i], p.ln_gain.value, p.ln_bias.value, p.W.value, p.b.value, p.C.value, p.beta, variant)
        np.testing.assert_allclose(cache.enc.flat()[i], ref, rtol=1e-12, atol=1e-12)


def test_beta_default():
    p = params_for(D=16)
    assert p.beta == 1 / 4


def test_default_dims():
    p = enc.init_params(10, 512, 64, 1, nc.Rng(0))
    assert p.C.shape == (64, 512)
    assert p.head_W.shape == (64 * 512, 1)


def test_init_deterministic():
    a, b = enc.init_params(5, 4, 3, 2, nc.Rng(3)), enc.init_params(5, 4, 3, 2, nc.Rng(3))
    for x, y in zip(a.all(), b.all()):
        np.testing.assert_array_equal(x.value, y.value)
    c = enc.init_params(5, 4, 3, 2, nc.Rng(4))
    assert not np.array_equal(a.C.value, c.C.value)


def test_bad_shapes():
    p = params_for()
    with pytest.raises(nc.InvalidArgument):
        enc.embed(np.zeros((3, 4)), p)
    with pytest.raises(nc.InvalidArgument):
        enc.SocialFabricParams(p.ln_gain, p.ln_bias, p.W, p.b, p.C, nc.ParamTensor("h", np.zeros((5, 2))), p.head_b)
    with pytest.raises(nc.InvalidArgument):
        enc.init_params(5, 4, 0, 1, nc.Rng(0))


def test_embed_identity():
    F = 4
    p = enc.init_params(F, F, 2, 1, nc.Rng(0))
    p.W.value = np.eye(F)
    S = np.array([[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]])
    R, _ = enc.embed(S, p)
    ref = (S - S.mean(1, keepdims=True)) / np.sqrt(S.var(1, keepdims=True) + nc.LN_EPS)
    np.testing.assert_allclose(R, ref)
    np.testing.assert_array_equal(R[0], R[1])


def test_soft_assign_cases():
    R = np.zeros((1, 1))
    np.testing.assert_allclose(enc.soft_assign(R, np.array([[0.0], [1.0]]), 1.0), [[0.7311, 0.2689]], atol=1e-4)
    np.testing.assert_array_equal(enc.soft_assign(np.ones((3, 2)), np.zeros((1, 2)), 0.5), np.ones((3, 1)))
    eq = enc.soft_assign(np.zeros((1, 2)), np.array([[1.0, 0], [0, 1.0], [-1.0, 0]]), 0.7)
    np.testing.assert_allclose(eq, [[1 / 3] * 3])


def test_literal_hand_case():
    p = enc.init_params(1, 1, 2, 1, nc.Rng(0))
    p.C.value = np.array([[0.0], [1.0]])
    z = np.array([[0.7311, 0.2689], [0.5, 0.5]])
    E = enc.encode(np.zeros((2, 1)), p, z).E
    assert E[0, 0] == 0.0
    assert E[1, 0] == pytest.approx(0.7689)


def test_aggregate_k1_is_sum_pooling(np_rng):
    p = enc.init_params(4, 3, 1, 1, nc.Rng(0), "aggregate")
    R = np_rng.normal(size=(7, 3))
    np.testing.assert_allclose(enc.encode(R, p).E[0], R.sum(0))


def test_literal_k1_is_input_independent(np_rng):
    p = enc.init_params(4, 3, 1, 1, nc.Rng(0), "literal")
    a = enc.forward(np_rng.normal(size=(6, 4)), p).logits
    b = enc.forward(np_rng.normal(size=(6, 4)), p).logits
    np.testing.assert_allclose(a, b)


def test_head_zero_weights_give_bias(np_rng):
    p = params_for(H=3)
    p.head_W.value[:] = 0
    p.head_b.value = np.array([0.1, 0.2, 0.3])
    np.testing.assert_array_equal(enc.forward(np_rng.normal(size=(4, 5)), p).logits, [0.1, 0.2, 0.3])


def test_head_linear_in_encoding(np_rng):
    p = params_for()
    e = enc.encode(np_rng.normal(size=(5, 4)), p)
    base = enc.head_forward(e, p) - p.head_b.value
    doubled = enc.FabricEncoding(2 * e.E, e.mass)
    np.testing.assert_allclose(enc.head_forward(doubled, p) - p.head_b.value, 2 * base)


def test_zero_upstream_gives_zero_grads(np_rng):
    p = params_for()
    cache = enc.forward(np_rng.normal(size=(2, 4, 5)), p)
    dS = enc.sfe_backward(np.zeros_like(cache.logits), cache, p)
    assert not dS.any()
    for t in p.all():
        assert not np.any(t.grad)


def test_no_beta_parameter():
    assert "beta" not in params_for().named()


@pytest.mark.parametrize("variant", enc.VARIANTS)
def test_gradients_full_stack(variant, np_rng):
    p = params_for(F=7, D=4, K=3, H=2, variant=variant)
    S = nc.ParamTensor("S", np_rng.normal(size=(5, 7)))
    y = 1

    def loss():
        return float(nc.ce_loss(enc.forward(S.value, p).logits, y)[0])

    cache = enc.forward(S.value, p)
    _, d = nc.ce_loss(cache.logits, y)
    p.zero_grad()
    dS = enc.sfe_backward(d, cache, p)
    analytic = [t.grad.copy() for t in p.all()] + [dS]
    assert nc.grad_check(loss, p.all() + [S], analytic=analytic) < 1e-4


def test_gradients_accumulate(np_rng):
    p = params_for()
    S = np_rng.normal(size=(3, 5))
    cache = enc.forward(S, p)
    d = np.ones_like(cache.logits)
    p.zero_grad()
    enc.sfe_backward(d, cache, p)
    once = p.W.grad.copy()
    enc.sfe_backward(d, cache, p)
    np.testing.assert_allclose(p.W.grad, 2 * once)


@pytest.mark.parametrize("variant", enc.VARIANTS)
def test_frame_contributions_match_forward(variant, np_rng):
    p = params_for(H=1, variant=variant)
    S = np_rng.normal(size=(9, 5))
    _, contrib = frame_contributions(S, p)
    logit = enc.forward(S, p).logits[0]
    total = contrib.sum(0) / (len(S) if variant == "avgpool" else 1) + p.head_b.value
    np.testing.assert_allclose(total, logit, rtol=1e-12, atol=1e-12)


def test_fresh_head_shares_trunk():
    p = params_for(H=1)
    q = enc.fresh_head(p, 4, nc.Rng(1))
    assert q.W is p.W and q.C is p.C
    assert q.H == 4
