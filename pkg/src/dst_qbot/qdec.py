"""Question decoder: transformer with cross-attention over [M_e; M_v]."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .nn import LayerNorm, Linear, Module, uniform_param
from .state import DialogueState, as_batch
from .transformer import DecoderBlock
from .world import EOS, PAD, SOS


class QDecoder(Module):
    def __init__(self, rng, vocab_size, d, layers=2, heads=2, d_ff=None, dropout=0.1,
                 max_len=8, dtype=np.float32):
        self.embed = uniform_param(rng, vocab_size, d, d, dtype)
        self.pos = uniform_param(rng, max_len + 1, d, d, dtype)
        self.blocks = [DecoderBlock(rng, d, heads, d_ff or 2 * d, dropout, dtype) for _ in range(layers)]
        self.norm = LayerNorm(d, dtype)
        self.w_der = Linear(rng, d, vocab_size, bias=False, dtype=dtype)
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.d = d

    @staticmethod
    def memory(state: DialogueState):
        """``(B, 2K, d)`` rows [M_e; M_v] and their ``(B, 2K)`` mask."""
        mem = ag.concat([state.m_e, state.m_v], axis=-2)
        return mem, np.concatenate([state.mask, state.mask], axis=-1)

    def forward(self, input_ids, z, state: DialogueState, rng=None, train=False):
        """input_ids ``(B, n)`` starting with [SOS]; z ``(B, 1, d)``. Returns logits ``(B, n, |V|)``."""
        input_ids = np.asarray(input_ids, dtype=np.int64)
        b, n = input_ids.shape
        if n > self.pos.shape[0]:
            raise ValueError(f"decoder input of length {n} exceeds {self.pos.shape[0]} positions")
        x = ag.embedding(self.embed, input_ids) + self.pos[:n]
        if n > 1:
            z = ag.concat([z, np.zeros((b, n - 1, self.d), dtype=z.dtype)], axis=1)
        x = x + z   # h_0 = emb([SOS]) + z; later steps get no z
        memory, mem_mask = self.memory(state)
        for block in self.blocks:
            x = block(x, memory, mem_mask, rng, train)
        return self.w_der(self.norm(x))

    def teacher_forcing_batch(self, z, state, gold, rng=None, train=False):
        """gold: list of id lists, each ending in [EOS].

        Returns ``(logits (B, L, |V|), targets (B, L), mask (B, L))``.
        """
        if any(len(g) == 0 or g[-1] != EOS for g in gold):
            raise ValueError("gold sequences must be non-empty and end with [EOS]")
        for g in gold:
            if max(g) >= self.vocab_size or min(g) < 0:
                raise ValueError("token id outside the vocabulary")
        b, length = len(gold), max(len(g) for g in gold)
        inputs = np.full((b, length), PAD, dtype=np.int64)
        targets = np.full((b, length), PAD, dtype=np.int64)
        mask = np.zeros((b, length), dtype=bool)
        for i, g in enumerate(gold):
            inputs[i, 0] = SOS
            inputs[i, 1:len(g)] = g[:-1]
            targets[i, :len(g)] = g
            mask[i, :len(g)] = True
        return self.forward(inputs, z, state, rng, train), targets, mask

    def teacher_forcing_logits(self, z, state, gold):
        """Single episode: z ``1 x d``, unbatched state, gold ids ending in [EOS] -> ``L x |V|``."""
        logits, _, _ = self.teacher_forcing_batch(z.reshape(1, 1, self.d), as_batch(state), [list(gold)])
        return logits[0]

    def greedy_batch(self, z, state, max_len=None):
        """Argmax decoding for a batch; sequences exclude [SOS] and [EOS]."""
        max_len = self.max_len if max_len is None else max_len
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        b = z.shape[0]
        ids = np.full((b, 1), SOS, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        out = [[] for _ in range(b)]
        with ag.no_grad():
            for _ in range(max_len):
                logits = self.forward(ids, z, state)
                nxt = logits.data[:, -1, :].argmax(axis=-1)
                for i in range(b):
                    if not done[i]:
                        if nxt[i] == EOS:
                            done[i] = True
                        else:
                            out[i].append(int(nxt[i]))
                if done.all():
                    break
                ids = np.concatenate([ids, nxt[:, None]], axis=1)
        return out

    def decode_greedy(self, z, state, max_len=None):
        return self.greedy_batch(z.reshape(1, 1, self.d), as_batch(state), max_len)[0]
