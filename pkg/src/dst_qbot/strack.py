"""State tracking: per-round Gumbel-Softmax choice between Add and Update."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import FFN, Module, masked_mean_rows
from .state import DialogueState

ADD, UPDATE = 0, 1


class TrackOutcome(NamedTuple):
    state: DialogueState
    phi: Tensor          # (..., 1, 2) one-hot, straight-through
    psi: Tensor          # (..., K, 1) words assignment distribution
    gamma: Tensor        # (..., K, 1) images assignment distribution

    @property
    def added(self):
        return self.phi.data[..., 0, ADD] >= self.phi.data[..., 0, UPDATE]


def gumbel_noise(rng: np.random.Generator, shape, dtype=np.float64):
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0)
    return (-np.log(-np.log(u))).astype(dtype)


class STrack(Module):
    def __init__(self, rng, d, dropout=0.1, tau=1.0, dtype=np.float32):
        self.ffn_dec = FFN(rng, d, 2, dropout=dropout, dtype=dtype)
        self.ffn_add_e = FFN(rng, d, d, dropout=dropout, dtype=dtype)
        self.ffn_add_v = FFN(rng, d, d, dropout=dropout, dtype=dtype)
        self.ffn_psi_dist = FFN(rng, d, 1, dropout=dropout, dtype=dtype)
        self.ffn_gamma_dist = FFN(rng, d, 1, dropout=dropout, dtype=dtype)
        self.ffn_psi = FFN(rng, d, d, dropout=dropout, dtype=dtype)
        self.ffn_gamma = FFN(rng, d, d, dropout=dropout, dtype=dtype)
        self.tau = tau

    # -- decision --------------------------------------------------------
    def decision_logits(self, f, state, rng=None, train=False):
        """FFN per row of r(f) * M_e, mean-pooled over live rows: ``(..., 1, 2)``."""
        per_row = self.ffn_dec(f * state.m_e, rng, train)
        return masked_mean_rows(per_row, state.mask)

    def decision_probs(self, f, state, rng=None, train=False, sample=False, noise=None, tau=None):
        tau = self.tau if tau is None else tau
        logits = self.decision_logits(f, state, rng, train)
        if noise is None and sample:
            noise = gumbel_noise(rng, logits.shape, logits.dtype)
        if noise is not None:
            logits = logits + np.asarray(noise, dtype=logits.dtype)
        return ag.softmax(logits * (1.0 / tau), axis=-1)

    def decide_action(self, f, state, rng=None, train=False, sample=True, noise=None, tau=None):
        """Hard one-hot phi (phi[0] = 1 means Add) with straight-through gradient."""
        soft = self.decision_probs(f, state, rng, train, sample, noise, tau)
        hard = np.zeros(soft.shape, dtype=soft.dtype)
        np.put_along_axis(hard, soft.data.argmax(axis=-1)[..., None], 1.0, axis=-1)
        return ag.straight_through(soft, hard)

    # -- actions ---------------------------------------------------------
    @staticmethod
    def _with_slot(state):
        """Pad one empty row; return padded matrices, mask and the append slot."""
        pad_shape = state.m_e.shape[:-2] + (1, state.d)
        zeros = np.zeros(pad_shape, dtype=state.m_e.dtype)
        m_e = ag.concat([state.m_e, zeros], axis=-2)
        m_v = ag.concat([state.m_v, zeros], axis=-2)
        mask = np.concatenate([state.mask, np.zeros(state.mask.shape[:-1] + (1,), dtype=bool)], axis=-1)
        counts = state.mask.sum(axis=-1)
        slot = np.arange(mask.shape[-1]) == np.asarray(counts)[..., None]
        return m_e, m_v, mask, slot

    def _added(self, f, m_e, m_v, slot, rng, train):
        e_new = self.ffn_add_e(f, rng, train)
        o_new = self.ffn_add_v(f, rng, train)
        sel = slot[..., None]
        return ag.where(sel, e_new, m_e), ag.where(sel, o_new, m_v)

    def _updated(self, f, m_e, m_v, mask, rng, train):
        row_mask = mask[..., None]
        psi = ag.softmax(self.ffn_psi_dist(f * m_e, rng, train), axis=-2, mask=row_mask)
        gamma = ag.softmax(self.ffn_gamma_dist(f * m_v, rng, train), axis=-2, mask=row_mask)
        new_e = m_e + psi * self.ffn_psi(f, rng, train)
        new_v = m_v + gamma * self.ffn_gamma(f, rng, train)
        return new_e, new_v, psi, gamma

    def add(self, f, state, rng=None, train=False) -> DialogueState:
        """Append FFN_add_e(f) to the words state and FFN_add_v(f) to the images state."""
        m_e, m_v, mask, slot = self._with_slot(state)
        new_e, new_v = self._added(f, m_e, m_v, slot, rng, train)
        return _trim(DialogueState(new_e, new_v, mask | slot, state.t))

    def update(self, f, state, rng=None, train=False, return_dists=False):
        """Merge f into existing rows through the assignment distributions psi and gamma."""
        new_e, new_v, psi, gamma = self._updated(f, state.m_e, state.m_v, state.mask, rng, train)
        out = DialogueState(new_e, new_v, state.mask.copy(), state.t)
        return (out, psi, gamma) if return_dists else out

    def track(self, f, state, rng=None, train=False, sample=None, noise=None, phi=None) -> TrackOutcome:
        """Decide and apply one action; forward is hard, backward straight-through.

        ``sample`` defaults to ``train``: Gumbel noise while training, plain
        argmax otherwise.  ``phi`` may be supplied to bypass the decision.
        """
        if sample is None:
            sample = train
        if phi is None:
            phi = self.decide_action(f, state, rng, train, sample=sample, noise=noise)
        m_e, m_v, mask, slot = self._with_slot(state)
        add_e, add_v = self._added(f, m_e, m_v, slot, rng, train)
        upd_e, upd_v, psi, gamma = self._updated(f, m_e, m_v, mask, rng, train)
        phi_add = phi[..., ADD:ADD + 1]
        phi_upd = phi[..., UPDATE:UPDATE + 1]
        new_e = phi_add * add_e + phi_upd * upd_e
        new_v = phi_add * add_v + phi_upd * upd_v
        chose_add = phi.data[..., 0, ADD] >= phi.data[..., 0, UPDATE]   # hard one-hot: same as == 1
        new_mask = mask | (slot & np.asarray(chose_add)[..., None])
        out = _trim(DialogueState(new_e, new_v, new_mask, state.t + 1))
        rows = out.rows
        return TrackOutcome(out, phi, psi[..., :rows, :], gamma[..., :rows, :])


def _trim(state: DialogueState) -> DialogueState:
    """Drop a trailing row that no episode uses."""
    if state.rows and not state.mask[..., -1].any():
        return DialogueState(state.m_e[..., :-1, :], state.m_v[..., :-1, :], state.mask[..., :-1], state.t)
    return state
