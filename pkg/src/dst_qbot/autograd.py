"""Tape-based reverse-mode differentiation over numpy arrays.

Tensors hold arrays of shape ``(..., rows, cols)``; leading axes are batch axes
and every primitive broadcasts over them, so a whole batch of episodes runs as
one graph.  Operations are recorded on a thread-local tape while gradient mode
is on; :func:`backward` walks the tape in exact reverse order and then clears
it.  A second backward over an already consumed tape raises :class:`GraphError`.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, NamedTuple, Sequence

import numpy as np


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_from_op", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._from_op = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None if self.grad is None else np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Node(NamedTuple):
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable


class Graph:
    """Operation tape of one thread."""

    def __init__(self):
        self.tape: list[Node] = []
        self.enabled = True

    def record(self, op, inputs, output, backward):
        self.tape.append(Node(op, inputs, output, backward))

    def reset(self):
        self.tape = []


_local = threading.local()


def get_graph() -> Graph:
    graph = getattr(_local, "graph", None)
    if graph is None:
        graph = _local.graph = Graph()
    return graph


@contextmanager
def no_grad():
    graph = get_graph()
    prev = graph.enabled
    graph.enabled = False
    try:
        yield
    finally:
        graph.enabled = prev


def is_grad_enabled():
    return get_graph().enabled


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def detach(x) -> Tensor:
    """Same values, cut from the tape."""
    return Tensor(as_tensor(x).data.copy())


def _pair(a, b):
    # raw arrays adopt the dtype of the tensor operand so f32 graphs stay f32
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return a, b


def _result(data, inputs, op, backward) -> Tensor:
    out = Tensor(data)
    graph = get_graph()
    if graph.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._from_op = True
        graph.record(op, inputs, out, backward)
    return out


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undoing numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = get_graph()
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor requiring grad")
    if not any(node.output is loss for node in graph.tape):
        raise GraphError("loss is not on the tape; the tape was already consumed by an earlier backward")
    grads = {id(loss): np.ones_like(loss.data)}
    try:
        for node in reversed(graph.tape):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._from_op:
                    key = id(t)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
                else:
                    t.grad = gi.astype(t.data.dtype, copy=True) if t.grad is None else t.grad + gi
    finally:
        graph.reset()


# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------
def _is_scalar(x):
    return isinstance(x, (int, float, np.number)) and not isinstance(x, bool)


def add(a, b) -> Tensor:
    if _is_scalar(b):
        b = float(b)
        return _result(a.data + b, (a,), "add_scalar", lambda g: (g,))
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), "add", lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        b = float(b)
        return _result(a.data - b, (a,), "sub_scalar", lambda g: (g,))
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), "sub", lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def neg(a) -> Tensor:
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        b = float(b)
        return _result(a.data * b, (a,), "mul_scalar", lambda g: (g * b,))
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def back(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), "mul", back)


def div(a, b) -> Tensor:
    if _is_scalar(b):
        return mul(a, 1.0 / float(b))
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return _result(out, (a, b), "div", back)


def exp(a) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Tensor:
    ad = a.data
    return _result(np.log(ad), (a,), "log", lambda g: (g / ad,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _result(out, (a,), "gelu", back)


def dropout(a, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; the identity (no tape entry) outside train mode."""
    if not train or rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(a.shape, dtype=np.float32) >= rate) * a.dtype.type(1.0 / (1.0 - rate))
    return _result(a.data * keep, (a,), "dropout", lambda g: (g * keep,))


def where(cond, a, b) -> Tensor:
    """Elementwise select; ``cond`` is a constant boolean array."""
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    out = np.where(cond, a.data, b.data)

    def back(g):
        return unbroadcast(np.where(cond, g, 0.0), sa), unbroadcast(np.where(cond, 0.0, g), sb)

    return _result(out, (a, b), "where", back)


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    """Forward value ``hard`` exactly; gradient passed unchanged to ``soft``."""
    hard = np.asarray(hard, dtype=soft.dtype)
    if hard.shape != soft.shape:
        raise ValueError(f"shape mismatch {hard.shape} vs {soft.shape}")
    return _result(hard.copy(), (soft,), "straight_through", lambda g: (g,))


# ----------------------------------------------------------------------
# shape and linear algebra
# ----------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # shared weight: fold the leading axes into one big GEMM
        flat = ad.reshape(-1, ad.shape[-1])

        def back_shared(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ bd.T).reshape(ad.shape), flat.T @ g2

        out = (flat @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))
        return _result(out, (a, b), "matmul", back_shared)

    def back(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), "matmul", back)


def transpose(a, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), "transpose", lambda g: (np.transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(src),))


def broadcast_to(a, shape) -> Tensor:
    src = a.shape
    out = np.broadcast_to(a.data, shape).copy()
    return _result(out, (a,), "broadcast_to", lambda g: (unbroadcast(g, src),))


def repeat_rows(q, k: int) -> Tensor:
    """Stack a ``(..., 1, d)`` row ``k`` times into ``(..., k, d)``."""
    if q.shape[-2] != 1:
        raise ValueError("repeat_rows expects a single row")
    return broadcast_to(q, q.shape[:-2] + (k, q.shape[-1]))


def concat(tensors: Sequence[Tensor], axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(tensors), "concat", back)


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None))) or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    src_shape, dtype = a.shape, a.dtype
    basic = _is_basic_index(idx)

    def back(g):
        full = np.zeros(src_shape, dtype=dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), "getitem", back)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    src = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", back)


def mean(a, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; ids may have any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise IndexError(f"token id out of range [0, {n_rows})")
    td = table.data

    def back(g):
        flat_ids = ids.reshape(-1)
        flat_g = g.reshape(-1, td.shape[1])
        onehot = np.zeros((flat_ids.size, n_rows), dtype=g.dtype)
        onehot[np.arange(flat_ids.size), flat_ids] = 1.0
        return (onehot.T @ flat_g,)

    return _result(td[ids], (table,), "embedding", back)


# ----------------------------------------------------------------------
# normalisation
# ----------------------------------------------------------------------
def softmax(x, axis=-1, mask=None) -> Tensor:
    """Numerically stabilised softmax; entries where ``mask`` is False get 0."""
    xd = x.data
    if not np.isfinite(xd).all():
        raise FloatingPointError("softmax input has non-finite entries")
    if mask is not None:
        xd = np.where(mask, xd, -np.inf)
    m = xd.max(axis=axis, keepdims=True)
    if mask is not None:
        m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(xd - m)
    s = e.sum(axis=axis, keepdims=True)
    if mask is not None:
        s = np.where(s == 0.0, 1.0, s)
    y = e / s

    def back(g):
        return ((g - (g * y).sum(axis=axis, keepdims=True)) * y,)

    return _result(y, (x,), "softmax", back)


def softmax_rows(x) -> Tensor:
    return softmax(x, axis=-1)


def log_softmax(x, axis=-1) -> Tensor:
    xd = x.data
    if not np.isfinite(xd).all():
        raise FloatingPointError("log_softmax input has non-finite entries")
    m = xd.max(axis=axis, keepdims=True)
    shifted = xd - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _result(out, (x,), "log_softmax", lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(x, gain, bias, eps=1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    gshape, bshape = gain.shape, bias.shape

    def back(g):
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, unbroadcast(g * xhat, gshape), unbroadcast(g, bshape)

    return _result(out, (x, gain, bias), "layer_norm", back)


# ----------------------------------------------------------------------
# verification
# ----------------------------------------------------------------------
def gradcheck(f, inputs, eps=1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is called as ``f(*inputs)`` and must return a single-element tensor.
    Error per entry is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    xs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for x in xs:
        x.requires_grad = True
        x.grad = None
    get_graph().reset()
    out = f(*xs)
    if out.data.size != 1:
        raise ValueError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    backward(out)
    worst = 0.0
    for x in xs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = float(f(*xs).data.reshape(-1)[0])
                flat[i] = orig - eps
                fm = float(f(*xs).data.reshape(-1)[0])
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# ----------------------------------------------------------------------
# optimisation
# ----------------------------------------------------------------------
class Adam:
    """Adam with cosine decay from ``lr`` to ``final_lr`` over ``total_steps``."""

    def __init__(self, named_params, lr=1e-3, final_lr=1e-5, total_steps=1,
                 betas=(0.9, 0.999), eps=1e-8, clip_norm=None):
        self.params = list(named_params)
        self.lr, self.final_lr = lr, final_lr
        self.total_steps = max(int(total_steps), 1)
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def current_lr(self):
        frac = min(self.step_count / self.total_steps, 1.0)
        return self.final_lr + 0.5 * (self.lr - self.final_lr) * (1.0 + math.cos(math.pi * frac))

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def grad_norm(self):
        return math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for _, p in self.params if p.grad is not None))

    def step(self):
        lr = self.current_lr()
        scale = 1.0
        if self.clip_norm:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.b1**t
        c2 = 1.0 - self.b2**t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad * scale if scale != 1.0 else p.grad
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
        self.zero_grad()

    def state_arrays(self):
        out = []
        for name, _ in self.params:
            out.append((f"m.{name}", self.m[name]))
            out.append((f"v.{name}", self.v[name]))
        return out

    def load_state_arrays(self, arrays: dict, step_count: int):
        for name, _ in self.params:
            self.m[name][...] = arrays[f"m.{name}"]
            self.v[name][...] = arrays[f"v.{name}"]
        self.step_count = step_count
