"""Parameter containers and the layers shared by encoder, decoder and STrack."""
from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def uniform_param(rng: np.random.Generator, rows: int, cols: int, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype), requires_grad=True)


def const_param(value: float, rows: int, cols: int, dtype) -> Tensor:
    return Tensor(np.full((rows, cols), value, dtype=dtype), requires_grad=True)


class Module:
    """Attribute-registered parameter tree (Tensors, Modules, lists of Modules)."""

    def named_parameters(self, prefix="", _seen=None):
        """Yield ``(name, tensor)``; a tensor shared between submodules appears once."""
        seen = set() if _seen is None else _seen
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                if id(value) not in seen:
                    seen.add(id(value))
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.", seen)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(arrays)
        unexpected = set(arrays) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {p.shape}")
            p.data = np.array(arrays[name], dtype=p.dtype)


class Linear(Module):
    """``x @ weight (+ bias)`` with weight stored ``d_in x d_out``."""

    def __init__(self, rng, d_in, d_out, bias=True, dtype=np.float32):
        self.weight = uniform_param(rng, d_in, d_out, d_in, dtype)
        if bias:
            self.bias = uniform_param(rng, 1, d_out, d_in, dtype)

    def __call__(self, x):
        y = ag.matmul(x, self.weight)
        bias = getattr(self, "bias", None)
        return y if bias is None else y + bias


class LayerNorm(Module):
    def __init__(self, d, dtype=np.float32):
        self.gain = const_param(1.0, 1, d, dtype)
        self.bias = const_param(0.0, 1, d, dtype)

    def __call__(self, x):
        return ag.layer_norm(x, self.gain, self.bias)


class FFN(Module):
    """Two-layer feed-forward net: Linear, GELU, Dropout, LayerNorm, Linear.

    The norm sits on the hidden layer so narrow heads (2 logits, 1 score) keep
    their scale.
    """

    def __init__(self, rng, d_in, d_out, d_hidden=None, dropout=0.1, dtype=np.float32):
        d_hidden = d_hidden or d_in
        self.fc1 = Linear(rng, d_in, d_hidden, dtype=dtype)
        self.norm = LayerNorm(d_hidden, dtype=dtype)
        self.fc2 = Linear(rng, d_hidden, d_out, dtype=dtype)
        self.rate = dropout

    def __call__(self, x, rng=None, train=False):
        h = ag.gelu(self.fc1(x))
        h = ag.dropout(h, self.rate, rng, train)
        return self.fc2(self.norm(h))


def masked_mean_rows(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over the row axis of ``x`` (kept as a single row) counting only rows where ``mask``."""
    w = mask.astype(x.dtype)
    count = np.maximum(w.sum(axis=-1, keepdims=True), 1.0)
    weights = (w / count)[..., None]
    return (x * weights).sum(axis=-2, keepdims=True)


class MultiHeadAttention(Module):
    def __init__(self, rng, d, heads, dropout=0.1, dtype=np.float32):
        if d % heads:
            raise ValueError("d must be divisible by heads")
        self.wq = Linear(rng, d, d, bias=False, dtype=dtype)
        self.wk = Linear(rng, d, d, bias=False, dtype=dtype)
        self.wv = Linear(rng, d, d, bias=False, dtype=dtype)
        self.wo = Linear(rng, d, d, bias=False, dtype=dtype)
        self.heads = heads
        self.rate = dropout

    def _split(self, x):
        b, n, d = x.shape
        return ag.transpose(x.reshape(b, n, self.heads, d // self.heads), (0, 2, 1, 3))

    def __call__(self, x, memory, key_mask=None, causal=False, rng=None, train=False):
        """x: (B, n, d) queries; memory: (B, m, d); key_mask: (B, m) bool."""
        b, n, d = x.shape
        m = memory.shape[1]
        q, k, v = self._split(self.wq(x)), self._split(self.wk(memory)), self._split(self.wv(memory))
        scores = ag.matmul(q, ag.transpose(k)) * (1.0 / math.sqrt(d // self.heads))
        mask = np.ones((b, 1, n, m), dtype=bool)
        if key_mask is not None:
            mask = mask & key_mask[:, None, None, :]
        if causal:
            mask = mask & np.tril(np.ones((n, m), dtype=bool))[None, None]
        attn = ag.softmax(scores, axis=-1, mask=mask)
        out = ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)).reshape(b, n, d)
        return ag.dropout(self.wo(out), self.rate, rng, train)


class FeedForward(Module):
    """Transformer position-wise sublayer."""

    def __init__(self, rng, d, d_ff, dropout=0.1, dtype=np.float32):
        self.fc1 = Linear(rng, d, d_ff, dtype=dtype)
        self.fc2 = Linear(rng, d_ff, d, dtype=dtype)
        self.rate = dropout

    def __call__(self, x, rng=None, train=False):
        h = ag.dropout(ag.gelu(self.fc1(x)), self.rate, rng, train)
        return ag.dropout(self.fc2(h), self.rate, rng, train)
