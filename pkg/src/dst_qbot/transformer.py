"""Pre-norm transformer blocks used by the fact encoder and the question decoder."""
from __future__ import annotations

import numpy as np

from .nn import FeedForward, LayerNorm, Module, MultiHeadAttention


class EncoderBlock(Module):
    def __init__(self, rng, d, heads, d_ff, dropout=0.1, dtype=np.float32):
        self.norm1 = LayerNorm(d, dtype)
        self.attn = MultiHeadAttention(rng, d, heads, dropout, dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.ffn = FeedForward(rng, d, d_ff, dropout, dtype)

    def __call__(self, x, key_mask, rng=None, train=False):
        h = self.norm1(x)
        x = x + self.attn(h, h, key_mask=key_mask, rng=rng, train=train)
        return x + self.ffn(self.norm2(x), rng, train)


class DecoderBlock(Module):
    def __init__(self, rng, d, heads, d_ff, dropout=0.1, dtype=np.float32):
        self.norm1 = LayerNorm(d, dtype)
        self.self_attn = MultiHeadAttention(rng, d, heads, dropout, dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.cross_attn = MultiHeadAttention(rng, d, heads, dropout, dtype)
        self.norm3 = LayerNorm(d, dtype)
        self.ffn = FeedForward(rng, d, d_ff, dropout, dtype)

    def __call__(self, x, memory, memory_mask, rng=None, train=False):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, causal=True, rng=rng, train=train)
        x = x + self.cross_attn(self.norm2(x), memory, key_mask=memory_mask, rng=rng, train=train)
        return x + self.ffn(self.norm3(x), rng, train)
