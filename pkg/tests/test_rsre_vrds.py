import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from gradutil import LiveBeta, assert_inert_block
from dst_qbot.autograd import Tensor, gradcheck
from dst_qbot.rsre import RsreParams, rsre
from dst_qbot.state import DialogueState
from dst_qbot.vrds import Vrds, pooled_context


def params(rng, d, scale=1.0):
    p = RsreParams(rng, d, np.float64)
    p.w_alpha.data *= scale
    p.w_beta.data *= scale
    return p


def test_k1_is_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = int(rng.integers(1, 12))
        Q, V = rng.normal(size=(1, d)) * 10, rng.normal(size=(1, d)) * 10
        out = rsre(Tensor(Q), Tensor(V), params(rng, d, scale=50.0)).data
        assert np.array_equal(out, V)


def test_shape_preserved():
    rng = np.random.default_rng(1)
    out = rsre(Tensor(rng.normal(size=(4, 8))), Tensor(rng.normal(size=(4, 8))), params(rng, 8))
    assert out.shape == (4, 8)


def test_fixed_weight_example_matches_stepwise_oracle():
    p = RsreParams(np.random.default_rng(0), 2, np.float64)
    p.w_alpha.data = np.array([[1.0], [0.0]])
    p.w_beta.data = np.ones((6, 1))
    Q = np.array([[0.5, -1.0], [2.0, 0.3]])
    V = np.array([[1.0, 2.0], [-0.5, 0.25]])
    got = rsre(Tensor(Q), Tensor(V), p).data
    want = oracles.rsre(Q.tolist(), V.tolist(), p.w_alpha.data.tolist(), p.w_beta.data.tolist())
    assert np.max(np.abs(got - np.array(want))) < 1e-15


@given(k=st.integers(1, 6), d=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_random_inputs_match_oracle(k, d, seed):
    rng = np.random.default_rng(seed)
    p = params(rng, d)
    Q, V = rng.normal(size=(k, d)), rng.normal(size=(k, d))
    got = rsre(Tensor(Q), Tensor(V), p).data
    want = oracles.rsre(Q.tolist(), V.tolist(), p.w_alpha.data.tolist(), p.w_beta.data.tolist())
    assert np.max(np.abs(got - np.array(want))) < 1e-12


@given(k=st.integers(1, 6), d=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_rows_shrink_and_permute_equivariantly(k, d, seed):
    rng = np.random.default_rng(seed)
    p = params(rng, d)
    Q, V = rng.normal(size=(k, d)), rng.normal(size=(k, d))
    out = rsre(Tensor(Q), Tensor(V), p).data
    assert np.all(np.linalg.norm(out, axis=1) <= np.linalg.norm(V, axis=1) + 1e-12)
    perm = rng.permutation(k)
    out_p = rsre(Tensor(Q[perm]), Tensor(V[perm]), p).data
    assert np.allclose(out_p, out[perm], atol=1e-12)


def test_masked_batch_equals_unpadded():
    rng = np.random.default_rng(2)
    p = params(rng, 4)
    Q, V = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    Qp = np.concatenate([Q, rng.normal(size=(2, 4))])[None]
    Vp = np.concatenate([V, rng.normal(size=(2, 4))])[None]
    mask = np.array([[True, True, True, False, False]])
    got = rsre(Tensor(Qp), Tensor(Vp), p, mask).data[0, :3]
    assert np.allclose(got, rsre(Tensor(Q), Tensor(V), p).data, atol=1e-14)


def test_errors():
    rng = np.random.default_rng(0)
    p = params(rng, 3)
    with pytest.raises(ValueError):
        rsre(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))), p)
    with pytest.raises(ValueError):
        rsre(Tensor(np.ones((0, 3))), Tensor(np.ones((0, 3))), p)
    with pytest.raises(ValueError):
        rsre(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))), p)


def test_rsre_gradcheck():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = params(rng, 4)
        Q, V = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))
        assert_inert_block(lambda: (rsre(Q, V, p) * w).sum(), p)
        live = LiveBeta([p])

        def f(q, v, a, tail):
            live.rebuild()
            return (rsre(q, v, p) * w).sum()

        assert gradcheck(f, [Q, V, p.w_alpha, live.tails[0]]) < 1e-4, seed


# ----------------------------------------------------------------------
# VRDS
# ----------------------------------------------------------------------
def _vrds(seed, d):
    return Vrds(np.random.default_rng(seed), d, dropout=0.1, dtype=np.float64)


def test_vrds_k1_reduces_to_raw_rows():
    v = _vrds(0, 5)
    rng = np.random.default_rng(1)
    s = DialogueState.from_arrays(rng.normal(size=(1, 5)), rng.normal(size=(1, 5)))
    z = v(s).data
    want = np.concatenate([s.m_v.data, s.m_e.data], axis=1) @ v.w_v.weight.data
    assert np.array_equal(z, want)


def test_vrds_matches_composition_oracle():
    v = _vrds(3, 4)
    rng = np.random.default_rng(4)
    s = DialogueState.from_arrays(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    hops = [(h.w_alpha.data.tolist(), h.w_beta.data.tolist())
            for h in (v.self_words, v.words_to_images, v.images_to_words)]
    want = oracles.vrds(s.m_e.data.tolist(), s.m_v.data.tolist(), hops, v.w_v.weight.data.tolist())
    got = v(s).data
    assert got.shape == (1, 4)
    assert np.max(np.abs(got[0] - np.array(want))) < 1e-12


def test_vrds_is_pure_and_deterministic_in_eval():
    v = _vrds(0, 6)
    rng = np.random.default_rng(5)
    s = DialogueState.from_arrays(rng.normal(size=(4, 6)), rng.normal(size=(4, 6)))
    before = s.detached()
    z1, z2 = v(s).data, v(s).data
    assert np.array_equal(z1, z2)
    assert s.equals(before)
    assert v.w_v.weight.shape == (12, 6)
    assert not hasattr(v.w_v, "bias")


def test_vrds_train_mode_applies_dropout():
    v = _vrds(0, 32)
    rng = np.random.default_rng(5)
    s = DialogueState.from_arrays(rng.normal(size=(2, 32)), rng.normal(size=(2, 32)))
    z_eval = v(s).data
    z_train = v(s, train=True, rng=np.random.default_rng(0)).data
    dropped = z_train == 0
    assert dropped.any()
    assert np.allclose(z_train[~dropped], z_eval[~dropped] / 0.9)


def test_vrds_gradcheck_full_chain():
    for seed in range(20):
        v = _vrds(seed, 3)
        rng = np.random.default_rng(seed + 100)
        me, mv = Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=(3, 3)))
        w = rng.normal(size=(1, 3))

        hops = [v.self_words, v.words_to_images, v.images_to_words]
        live = LiveBeta(hops)
        others = [v.w_v.weight] + [h.w_alpha for h in hops]

        def f(me, mv, *_):
            live.rebuild()
            return (v(DialogueState(me, mv, np.ones(3, dtype=bool))) * w).sum()

        assert gradcheck(f, [me, mv] + others + live.tails) < 1e-3, seed


def test_pooled_context_is_mean_of_live_rows():
    rng = np.random.default_rng(0)
    me, mv = rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 3, 4))
    mask = np.array([[True, True, False]])
    z = pooled_context(DialogueState(Tensor(me), Tensor(mv), mask)).data
    want = np.concatenate([me[0, :2], mv[0, :2]]).mean(axis=0)
    assert np.allclose(z[0, 0], want)
