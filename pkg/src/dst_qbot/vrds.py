"""Three-hop reasoning over the dialogue state (words -> words -> images -> words)."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .nn import Linear, Module, masked_mean_rows
from .rsre import RsreParams, rsre


class Vrds(Module):
    def __init__(self, rng, d, dropout=0.1, dtype=np.float32):
        self.self_words = RsreParams(rng, d, dtype)
        self.words_to_images = RsreParams(rng, d, dtype)
        self.images_to_words = RsreParams(rng, d, dtype)
        self.w_v = Linear(rng, 2 * d, d, bias=False, dtype=dtype)
        self.rate = dropout

    def __call__(self, state, train=False, rng=None):
        """Context row vector z of shape ``(..., 1, d)``; ``state`` is left untouched."""
        mask = state.mask
        me_hat = rsre(state.m_e, state.m_e, self.self_words, mask)
        mv_hat = rsre(me_hat, state.m_v, self.words_to_images, mask)
        a_v = mv_hat.sum(axis=-2, keepdims=True)
        me_tilde = rsre(mv_hat, me_hat, self.images_to_words, mask)
        a_e = me_tilde.sum(axis=-2, keepdims=True)
        z = self.w_v(ag.concat([a_v, a_e], axis=-1))
        return ag.dropout(z, self.rate, rng, train)


def pooled_context(state):
    """Ablation stand-in for VRDS: mean over the live rows of both matrices."""
    both = ag.concat([state.m_e, state.m_v], axis=-2)
    mask = np.concatenate([state.mask, state.mask], axis=-1)
    return masked_mean_rows(both, mask)
