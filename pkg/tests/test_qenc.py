import numpy as np
import pytest

from dst_qbot import autograd as ag
from dst_qbot.autograd import Tensor
from dst_qbot.qenc import ContextOverflow, QEncoder
from dst_qbot.state import DialogueState, as_batch


def make(seed=0, d=8, max_rows=5):
    rng = np.random.default_rng(seed)
    embed = Tensor(rng.normal(size=(40, d)), requires_grad=True)
    return QEncoder(rng, embed, d, layers=2, heads=2, d_ff=16, dropout=0.0,
                    max_question=6, max_answer=8, max_rows=max_rows, dtype=np.float64)


def rand_state(rng, k, d=8):
    return DialogueState.from_arrays(rng.normal(size=(k, d)), rng.normal(size=(k, d)))


def test_output_is_one_d_row_for_any_k():
    enc = make()
    rng = np.random.default_rng(0)
    for k in range(0, 6):
        s = rand_state(rng, k) if k else DialogueState.empty(8, dtype=np.float64)
        assert enc.encode_fact([7, 8], [9], s).shape == (1, 8)


def test_padding_does_not_change_fact():
    enc = make()
    rng = np.random.default_rng(1)
    q, a = [7, 8, 9], [10, 11]
    one = enc.encode_fact(q, a, rand_state(rng, 2)).data
    rng = np.random.default_rng(1)
    s = rand_state(rng, 2)
    # same episode batched next to a longer one: its rows and text are padded
    other = rand_state(np.random.default_rng(9), 4)
    batch = DialogueState(
        Tensor(np.stack([np.concatenate([s.m_e.data, np.full((2, 8), 3.0)]), other.m_e.data])),
        Tensor(np.stack([np.concatenate([s.m_v.data, np.full((2, 8), -3.0)]), other.m_v.data])),
        np.array([[True, True, False, False], [True] * 4]),
    )
    f = enc.encode_batch([q, [7, 8, 9, 10, 11, 12]], [a, [5] * 8], batch).data
    assert np.allclose(f[0], one, atol=1e-12)


def test_every_segment_matters():
    enc = make(2)
    rng = np.random.default_rng(3)
    s = rand_state(rng, 2)
    base = enc.encode_fact([7, 8], [9, 10], s).data
    variants = [
        enc.encode_fact([], [9, 10], s),
        enc.encode_fact([7, 8], [], s),
        enc.encode_fact([7, 8], [9, 10], DialogueState.from_arrays(np.zeros((2, 8)), s.m_v.data)),
        enc.encode_fact([7, 8], [9, 10], DialogueState.from_arrays(s.m_e.data, np.zeros((2, 8)))),
    ]
    for v in variants:
        assert not np.allclose(v.data, base)


def test_gradient_reaches_state_rows():
    enc = make(4)
    rng = np.random.default_rng(0)
    me = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    mv = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    f = enc.encode_fact([7], [8], DialogueState(me, mv, np.ones(3, dtype=bool)))
    ag.backward((f * Tensor(rng.normal(size=(1, 8)))).sum())
    assert np.all(np.abs(me.grad).sum(axis=1) > 0)
    assert np.all(np.abs(mv.grad).sum(axis=1) > 0)


def test_deterministic_replay():
    rng = np.random.default_rng(5)
    s = rand_state(rng, 3)
    a = make(7).encode_fact([7, 8], [9], s).data
    b = make(7).encode_fact([7, 8], [9], s).data
    assert a.tobytes() == b.tobytes()


def test_context_overflow():
    enc = make(max_rows=2)
    rng = np.random.default_rng(0)
    with pytest.raises(ContextOverflow):
        enc.encode_fact([7] * 7, [8], rand_state(rng, 1))
    with pytest.raises(ContextOverflow):
        enc.encode_fact([7], [8] * 9, rand_state(rng, 1))
    with pytest.raises(ContextOverflow):
        enc.encode_fact([7], [8], rand_state(rng, 3))


def test_batched_matches_single():
    enc = make(6)
    rng = np.random.default_rng(2)
    states = [rand_state(rng, 2), rand_state(rng, 2)]
    qs, ans = [[7, 8], [9]], [[10], [11, 12, 13]]
    batch = DialogueState(Tensor(np.stack([s.m_e.data for s in states])),
                          Tensor(np.stack([s.m_v.data for s in states])), np.ones((2, 2), dtype=bool))
    f = enc.encode_batch(qs, ans, batch).data
    for i in range(2):
        assert np.allclose(f[i], enc.encode_batch([qs[i]], [ans[i]], as_batch(states[i])).data[0], atol=1e-12)
