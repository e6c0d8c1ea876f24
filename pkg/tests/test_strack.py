import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from gradutil import assert_inert
from dst_qbot import autograd as ag
from dst_qbot.autograd import Tensor, gradcheck
from dst_qbot.state import DialogueState
from dst_qbot.strack import ADD, UPDATE, STrack, gumbel_noise


def make(seed=0, d=4, dropout=0.0):
    return STrack(np.random.default_rng(seed), d, dropout=dropout, dtype=np.float64)


def rand_state(rng, k, d):
    return DialogueState.from_arrays(rng.normal(size=(k, d)), rng.normal(size=(k, d)))


def ffn_params(module):
    return {n: p.data.tolist() for n, p in module.named_parameters()}


def force_logits(ffn, values):
    """Make an FFN output the constant row ``values`` whatever its input."""
    ffn.fc2.weight.data[...] = 0.0
    ffn.fc2.bias.data[...] = np.asarray(values, dtype=np.float64)[None]


# ----------------------------------------------------------------------
# decision
# ----------------------------------------------------------------------
def test_low_temperature_argmax_limit():
    s = make()
    force_logits(s.ffn_dec, [2.0, -1.0])
    rng = np.random.default_rng(0)
    state, f = rand_state(rng, 3, 4), Tensor(rng.normal(size=(1, 4)))
    assert np.allclose(s.decision_logits(f, state).data, [[2.0, -1.0]])
    phi = s.decide_action(f, state, sample=False, noise=np.zeros((1, 2)), tau=1e-4)
    assert phi.data.tolist() == [[1.0, 0.0]]


@given(seed=st.integers(0, 2**31), k=st.integers(1, 6), train=st.booleans())
def test_phi_always_one_hot(seed, k, train):
    s = make(seed % 7, dropout=0.1)
    rng = np.random.default_rng(seed)
    state, f = rand_state(rng, k, 4), Tensor(rng.normal(size=(1, 4)))
    phi = s.decide_action(f, state, rng, train=train, sample=train).data
    assert set(phi.ravel().tolist()) <= {0.0, 1.0}
    assert phi.sum() == 1.0


def test_gumbel_add_frequency_matches_softmax():
    s = make(3)
    rng = np.random.default_rng(1)
    state1, f1 = rand_state(rng, 2, 4), rng.normal(size=(1, 4))
    n = 10_000
    batch = DialogueState(Tensor(np.broadcast_to(state1.m_e.data, (n, 2, 4)).copy()),
                          Tensor(np.broadcast_to(state1.m_v.data, (n, 2, 4)).copy()),
                          np.ones((n, 2), dtype=bool))
    f = Tensor(np.broadcast_to(f1, (n, 1, 4)).copy())
    expected = ag.softmax(s.decision_logits(Tensor(f1), state1)).data[0, ADD]
    phi = s.decide_action(f, batch, np.random.default_rng(2), sample=True, tau=1.0).data
    assert abs(phi[:, 0, ADD].mean() - expected) < 0.02


def test_gumbel_noise_is_finite_and_standard():
    g = gumbel_noise(np.random.default_rng(0), (200_000,))
    assert np.all(np.isfinite(g))
    assert abs(g.mean() - np.euler_gamma) < 0.01


# ----------------------------------------------------------------------
# actions
# ----------------------------------------------------------------------
def test_add_appends_oracle_rows_and_keeps_old_ones():
    s = make(1)
    rng = np.random.default_rng(0)
    state, f = rand_state(rng, 3, 4), Tensor(rng.normal(size=(1, 4)))
    out = s.add(f, state)
    assert out.k == 4 and out.m_e.shape == (4, 4) and out.m_v.shape == (4, 4)
    assert out.m_e.data[:3].tobytes() == state.m_e.data.tobytes()
    assert out.m_v.data[:3].tobytes() == state.m_v.data.tobytes()
    want_e = oracles.ffn(f.data[0].tolist(), ffn_params(s.ffn_add_e))
    want_v = oracles.ffn(f.data[0].tolist(), ffn_params(s.ffn_add_v))
    assert np.max(np.abs(out.m_e.data[3] - want_e)) < 1e-12
    assert np.max(np.abs(out.m_v.data[3] - want_v)) < 1e-12


def test_update_matches_brute_force():
    s = make(2)
    rng = np.random.default_rng(4)
    state, f = rand_state(rng, 3, 4), Tensor(rng.normal(size=(1, 4)))
    out, psi, gamma = s.update(f, state, return_dists=True)
    fl = f.data[0].tolist()
    for m, m_new, dist_net, content_net in (
        (state.m_e.data, out.m_e.data, s.ffn_psi_dist, s.ffn_psi),
        (state.m_v.data, out.m_v.data, s.ffn_gamma_dist, s.ffn_gamma),
    ):
        logits = [oracles.ffn([a * b for a, b in zip(fl, row)], ffn_params(dist_net))[0] for row in m.tolist()]
        w = oracles.softmax(logits)
        content = oracles.ffn(fl, ffn_params(content_net))
        want = [[m[i][j] + w[i] * content[j] for j in range(4)] for i in range(3)]
        assert np.max(np.abs(m_new - np.array(want))) < 1e-12
    assert out.k == state.k
    assert abs(psi.data.sum() - 1) < 1e-9 and abs(gamma.data.sum() - 1) < 1e-9


def test_update_one_hot_assignment_touches_one_row():
    s = make(0)
    rng = np.random.default_rng(0)
    state, f = rand_state(rng, 3, 4), Tensor(rng.normal(size=(1, 4)))
    pick = lambda x, rng=None, train=False: Tensor(np.array([[-1e3], [-1e3], [1e3]]))  # noqa: E731
    s.ffn_psi_dist = pick
    s.ffn_gamma_dist = pick
    out = s.update(f, state)
    changed = np.any(out.m_e.data != state.m_e.data, axis=1)
    assert changed.tolist() == [False, False, True]
    assert np.any(out.m_v.data != state.m_v.data, axis=1).tolist() == [False, False, True]


def test_update_is_additive():
    s = make(5)
    force_logits(s.ffn_psi, np.zeros(4))
    force_logits(s.ffn_gamma, np.zeros(4))
    rng = np.random.default_rng(1)
    state, f = rand_state(rng, 4, 4), Tensor(rng.normal(size=(1, 4)))
    out = s.update(f, state)
    assert out.m_e.data.tobytes() == state.m_e.data.tobytes()
    assert out.m_v.data.tobytes() == state.m_v.data.tobytes()
    tracked = s.track(f, state, phi=Tensor([[0.0, 1.0]]))
    assert tracked.state.m_e.data.tobytes() == state.m_e.data.tobytes()


# ----------------------------------------------------------------------
# track
# ----------------------------------------------------------------------
@given(seed=st.integers(0, 2**31), k=st.integers(1, 8))
def test_track_invariants(seed, k):
    s = make(seed % 5, dropout=0.1)
    rng = np.random.default_rng(seed)
    state, f = rand_state(rng, k, 4), Tensor(rng.normal(size=(1, 4)))
    out = s.track(f, state, rng, train=True)
    phi = out.phi.data
    assert phi.sum() == 1.0 and set(phi.ravel().tolist()) <= {0.0, 1.0}
    assert out.state.m_e.shape == out.state.m_v.shape
    assert out.state.k == k + (1 if phi[0, ADD] == 1.0 else 0)
    assert abs(out.psi.data.sum() - 1) < 1e-9 and abs(out.gamma.data.sum() - 1) < 1e-9
    assert out.state.t == state.t + 1


def test_track_dispatches_to_add_and_update():
    s = make(1)
    rng = np.random.default_rng(2)
    state, f = rand_state(rng, 2, 4), Tensor(rng.normal(size=(1, 4)))
    added = s.track(f, state, phi=Tensor([[1.0, 0.0]])).state
    assert np.array_equal(added.m_e.data, s.add(f, state).m_e.data)
    updated = s.track(f, state, phi=Tensor([[0.0, 1.0]])).state
    assert np.allclose(updated.m_e.data, s.update(f, state).m_e.data, atol=1e-15)
    assert np.allclose(updated.m_v.data, s.update(f, state).m_v.data, atol=1e-15)


def test_track_seeded_action_sequence_is_deterministic():
    def run():
        s = make(4, dropout=0.1)
        rng = np.random.default_rng(11)
        state = rand_state(np.random.default_rng(0), 1, 4)
        actions = []
        for _ in range(10):
            f = Tensor(rng.normal(size=(1, 4)))
            out = s.track(f, state, rng, train=True)
            actions.append("A" if out.added else "U")
            state = out.state
        return actions, state

    (a1, s1), (a2, s2) = run(), run()
    assert a1 == a2 and s1.equals(s2)
    assert 1 <= s1.k <= 11


def test_batched_track_matches_per_episode():
    s = make(6)
    rng = np.random.default_rng(3)
    ks = [1, 3, 2]
    m_e = np.zeros((3, 3, 4))
    m_v = np.zeros((3, 3, 4))
    mask = np.zeros((3, 3), dtype=bool)
    singles = []
    for i, k in enumerate(ks):
        st1 = rand_state(rng, k, 4)
        singles.append(st1)
        m_e[i, :k], m_v[i, :k], mask[i, :k] = st1.m_e.data, st1.m_v.data, True
    f = rng.normal(size=(3, 1, 4))
    phis = np.array([[[1.0, 0.0]], [[0.0, 1.0]], [[1.0, 0.0]]])
    batch = s.track(Tensor(f), DialogueState(Tensor(m_e), Tensor(m_v), mask), phi=Tensor(phis)).state
    for i, st1 in enumerate(singles):
        one = s.track(Tensor(f[i]), st1, phi=Tensor(phis[i])).state
        got = batch.episode(i)
        assert got.k == one.k
        assert np.allclose(got.m_e.data, one.m_e.data, atol=1e-12)
        assert np.allclose(got.m_v.data, one.m_v.data, atol=1e-12)


def test_update_gradcheck():
    for seed in range(20):
        s = make(seed, d=3)
        rng = np.random.default_rng(seed + 50)
        me, mv, f = (Tensor(rng.normal(size=sh)) for sh in ((3, 3), (3, 3), (1, 3)))
        w1, w2 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        nets = [s.ffn_psi_dist, s.ffn_gamma_dist, s.ffn_psi, s.ffn_gamma]
        # a dist net's norm and output biases shift every row's logit equally,
        # so the row softmax cancels them
        inert = [n.norm.bias for n in nets[:2]] + [n.fc2.bias for n in nets[:2]]
        params = [p for n in nets for p in n.parameters() if not any(p is q for q in inert)]

        def loss(f, me, mv, *_):
            out = s.update(f, DialogueState(me, mv, np.ones(3, dtype=bool)))
            return (out.m_e * w1).sum() + (out.m_v * w2).sum()

        for b in inert:
            assert_inert(lambda: loss(f, me, mv), b)
        assert gradcheck(loss, [f, me, mv] + params) < 1e-3, seed


def straight_through_check(seed, d=3, k=2, eps=1e-5):
    """Chain-rule oracle for the straight-through path.

    Two independent finite-difference routes: dL/dphi at the hard point and
    d soft / d theta for the decision network.  Their product must equal the
    analytic gradient the straight-through estimator gives theta.
    """
    s = make(seed, d=d)
    rng = np.random.default_rng(seed + 7)
    state = rand_state(rng, k, d)
    f = Tensor(rng.normal(size=(1, d)))
    w_e, w_v = rng.normal(size=(k + 1, d)), rng.normal(size=(k + 1, d))
    noise = gumbel_noise(rng, (1, 2))

    def downstream(phi):
        out = s.track(f, state, phi=phi).state
        pad = k + 1 - out.rows
        m_e = ag.concat([out.m_e, np.zeros((pad, d))], axis=0) if pad else out.m_e
        m_v = ag.concat([out.m_v, np.zeros((pad, d))], axis=0) if pad else out.m_v
        return (m_e * w_e).sum() + (m_v * w_v).sum()

    theta = s.ffn_dec.parameters()
    for p in theta:
        p.grad = None
    ag.get_graph().reset()
    phi = s.decide_action(f, state, sample=True, noise=noise)
    ag.backward(downstream(phi))
    analytic = [p.grad.copy() for p in theta]

    hard = phi.data.copy()
    dl_dphi = np.zeros(2)
    with ag.no_grad():
        for j in range(2):
            up, dn = hard.copy(), hard.copy()
            up[0, j] += eps
            dn[0, j] -= eps
            dl_dphi[j] = (downstream(Tensor(up)).item() - downstream(Tensor(dn)).item()) / (2 * eps)

    worst = 0.0
    with ag.no_grad():
        for p, a in zip(theta, analytic):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                sp = s.decision_probs(f, state, noise=noise).data[0]
                flat[i] = orig - eps
                sm = s.decision_probs(f, state, noise=noise).data[0]
                flat[i] = orig
                num = float(dl_dphi @ ((sp - sm) / (2 * eps)))
                ai = float(a.reshape(-1)[i])
                worst = max(worst, abs(ai - num) / max(abs(ai), abs(num), 1e-8))
    nonzero = max(float(np.abs(a).max()) for a in analytic)
    return worst, nonzero


def test_straight_through_gradient_matches_chain_rule_oracle():
    for seed in range(20):
        err, nonzero = straight_through_check(seed)
        assert err < 1e-3, seed
        assert nonzero > 0.0


def test_words_and_images_share_the_action():
    s = make(0)
    rng = np.random.default_rng(9)
    state, f = rand_state(rng, 2, 4), Tensor(rng.normal(size=(1, 4)))
    for phi in ([[1.0, 0.0]], [[0.0, 1.0]]):
        out = s.track(f, state, phi=Tensor(phi)).state
        assert out.m_e.shape == out.m_v.shape
        grew = out.rows - state.rows
        assert grew == (1 if phi[0][ADD] else 0)


@pytest.mark.parametrize("action", [ADD, UPDATE])
def test_track_gradient_reaches_decision_net(action):
    s = make(2)
    rng = np.random.default_rng(action)
    state, f = rand_state(rng, 2, 4), Tensor(rng.normal(size=(1, 4)))
    noise = np.array([[5.0, -5.0]]) if action == ADD else np.array([[-5.0, 5.0]])
    phi = s.decide_action(f, state, sample=True, noise=noise)
    assert phi.data[0, action] == 1.0
    out = s.track(f, state, phi=phi).state
    ag.backward((out.m_e * rng.normal(size=out.m_e.shape)).sum())
    assert np.abs(s.ffn_dec.fc2.weight.grad).max() > 0
