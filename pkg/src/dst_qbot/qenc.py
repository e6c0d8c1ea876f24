"""Fact encoder: [CLS] q [SEP] a [SEP] M_e [SEP] M_v -> f (output at [CLS])."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import LayerNorm, Module, uniform_param
from .state import DialogueState, as_batch
from .transformer import EncoderBlock
from .world import CLS, PAD, SEP

SEG_QUESTION, SEG_ANSWER, SEG_WORDS, SEG_IMAGES = range(4)


class ContextOverflow(ValueError):
    pass


class QEncoder(Module):
    """Bidirectional transformer over a fixed slot layout.

    Slots: ``[CLS] q*max_q [SEP] a*max_a [SEP] M_e*max_rows [SEP] M_v*max_rows``.
    Unused slots are masked out of attention, so padding never reaches f.
    """

    def __init__(self, rng, embed: Tensor, d, layers=2, heads=2, d_ff=None, dropout=0.1,
                 max_question=8, max_answer=16, max_rows=11, dtype=np.float32):
        self.embed = embed
        self.d = d
        self.max_question, self.max_answer, self.max_rows = max_question, max_answer, max_rows
        self.n_text = max_question + max_answer + 3
        self.n_ctx = self.n_text + 2 * max_rows + 1
        self.pos = uniform_param(rng, self.n_ctx, d, d, dtype)
        self.segment = uniform_param(rng, 4, d, d, dtype)
        self.blocks = [EncoderBlock(rng, d, heads, d_ff or 2 * d, dropout, dtype) for _ in range(layers)]
        self.norm = LayerNorm(d, dtype)
        seg = np.empty(self.n_ctx, dtype=np.int64)
        seg[: max_question + 2] = SEG_QUESTION
        seg[max_question + 2: self.n_text] = SEG_ANSWER
        seg[self.n_text: self.n_text + max_rows + 1] = SEG_WORDS
        seg[self.n_text + max_rows + 1:] = SEG_IMAGES
        self._segment_ids = seg

    def _text_ids(self, questions, answers):
        b = len(questions)
        ids = np.full((b, self.n_text), PAD, dtype=np.int64)
        mask = np.zeros((b, self.n_text), dtype=bool)
        a0 = self.max_question + 2
        for i, (q, a) in enumerate(zip(questions, answers)):
            if len(q) > self.max_question or len(a) > self.max_answer:
                raise ContextOverflow(
                    f"question/answer of length {len(q)}/{len(a)} exceeds the context window "
                    f"({self.max_question}/{self.max_answer})"
                )
            ids[i, 0] = CLS
            ids[i, 1:1 + len(q)] = q
            ids[i, self.max_question + 1] = SEP
            ids[i, a0:a0 + len(a)] = a
            ids[i, self.n_text - 1] = SEP
            mask[i, 0] = True
            mask[i, 1:1 + len(q)] = True
            mask[i, self.max_question + 1] = True
            mask[i, a0:a0 + len(a)] = True
            mask[i, self.n_text - 1] = True
        return ids, mask

    def _pad_rows(self, m, rows):
        extra = self.max_rows - rows
        if extra == 0:
            return m
        return ag.concat([m, np.zeros(m.shape[:-2] + (extra, self.d), dtype=m.dtype)], axis=-2)

    def encode_batch(self, questions, answers, state: DialogueState, rng=None, train=False):
        """questions/answers: lists of token-id lists; state batched ``(B, K, d)``. Returns ``(B, 1, d)``."""
        b = len(questions)
        rows = state.rows
        if rows > self.max_rows:
            raise ContextOverflow(f"{rows} state rows exceed the context window of {self.max_rows}")
        ids, text_mask = self._text_ids(questions, answers)
        text = ag.embedding(self.embed, ids)
        sep = ag.embedding(self.embed, np.full((b, 1), SEP, dtype=np.int64))
        x = ag.concat([text, self._pad_rows(state.m_e, rows), sep, self._pad_rows(state.m_v, rows)], axis=1)
        x = x + self.pos + ag.embedding(self.segment, self._segment_ids)

        row_mask = np.zeros((b, self.max_rows), dtype=bool)
        row_mask[:, :rows] = state.mask
        key_mask = np.concatenate([text_mask, row_mask, np.ones((b, 1), dtype=bool), row_mask], axis=1)
        # slots unused by every episode are dropped; masked keys get zero weight, so f is unchanged
        live = np.flatnonzero(key_mask.any(axis=0))
        if live.size < self.n_ctx:
            x, key_mask = x[:, live, :], key_mask[:, live]
        for block in self.blocks:
            x = block(x, key_mask, rng, train)
        return self.norm(x[:, 0:1, :])

    def encode_fact(self, question, answer, state: DialogueState, rng=None, train=False):
        """One episode: token-id lists plus an unbatched state; returns a ``1 x d`` row."""
        f = self.encode_batch([list(question)], [list(answer)], as_batch(state), rng, train)
        return f[0]
