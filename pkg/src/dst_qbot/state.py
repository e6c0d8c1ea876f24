"""The paired words/images state and its byte format."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor

STATE_MAGIC = b"DSTSTAT1"
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class StateDecodeError(ValueError):
    pass


@dataclass
class DialogueState:
    """Words state ``m_e`` and images state ``m_v``, both ``(..., K, d)``.

    ``mask`` marks live rows.  Unbatched states (2-D matrices) always have every
    row live; batched states pad the row axis to the largest entity count.
    """

    m_e: Tensor
    m_v: Tensor
    mask: np.ndarray
    t: int = 0

    def __post_init__(self):
        if self.m_e.shape != self.m_v.shape:
            raise ValueError(f"words/images state shapes differ: {self.m_e.shape} vs {self.m_v.shape}")
        if self.mask.shape != self.m_e.shape[:-1]:
            raise ValueError("mask shape must match the state's row axes")

    @property
    def d(self) -> int:
        return self.m_e.shape[-1]

    @property
    def rows(self) -> int:
        return self.m_e.shape[-2]

    @property
    def k(self):
        """Entity count: an int for one episode, an int array for a batch."""
        counts = self.mask.sum(axis=-1)
        return int(counts) if self.mask.ndim == 1 else counts

    @property
    def batched(self) -> bool:
        return self.m_e.ndim > 2

    @classmethod
    def empty(cls, d, batch_shape=(), dtype=np.float32):
        """0-row state; only exists transiently before the caption is added."""
        z = np.zeros(tuple(batch_shape) + (0, d), dtype=dtype)
        return cls(Tensor(z), Tensor(z.copy()), np.zeros(tuple(batch_shape) + (0,), dtype=bool))

    @classmethod
    def from_arrays(cls, m_e, m_v, t=0):
        m_e, m_v = np.asarray(m_e), np.asarray(m_v)
        return cls(Tensor(m_e), Tensor(m_v), np.ones(m_e.shape[:-1], dtype=bool), t)

    def episode(self, i: int) -> "DialogueState":
        """Detached single-episode snapshot (live rows only) of a batched state."""
        live = self.mask[i]
        return DialogueState.from_arrays(self.m_e.data[i][live].copy(), self.m_v.data[i][live].copy(), self.t)

    def detached(self) -> "DialogueState":
        return DialogueState(Tensor(self.m_e.data.copy()), Tensor(self.m_v.data.copy()), self.mask.copy(), self.t)

    def equals(self, other: "DialogueState") -> bool:
        """Bitwise equality of contents."""
        return (
            self.t == other.t
            and self.m_e.data.dtype == other.m_e.data.dtype
            and np.array_equal(self.mask, other.mask)
            and self.m_e.data.tobytes() == other.m_e.data.tobytes()
            and self.m_v.data.tobytes() == other.m_v.data.tobytes()
        )


def serialize(state: DialogueState) -> bytes:
    if state.batched:
        raise ValueError("serialize a single episode; use state.episode(i) first")
    if state.rows == 0:
        raise ValueError("cannot serialize an empty state")
    width = state.m_e.data.dtype.itemsize
    if width not in _DTYPES:
        raise ValueError(f"unsupported dtype {state.m_e.dtype}")
    header = STATE_MAGIC + struct.pack("<IIIB", state.rows, state.d, state.t, width)
    dt = _DTYPES[width]
    return header + state.m_e.data.astype(dt).tobytes() + state.m_v.data.astype(dt).tobytes()


def deserialize(blob: bytes) -> DialogueState:
    if len(blob) < 21 or blob[:8] != STATE_MAGIC:
        raise StateDecodeError("bad magic bytes: not a DSTSTAT1 state")
    k, d, t, width = struct.unpack("<IIIB", blob[8:21])
    if width not in _DTYPES or k == 0:
        raise StateDecodeError("garbled state header")
    dt = _DTYPES[width]
    n = k * d * dt.itemsize
    if len(blob) != 21 + 2 * n:
        raise StateDecodeError(f"expected {21 + 2 * n} bytes, got {len(blob)}")
    m_e = np.frombuffer(blob[21:21 + n], dtype=dt).reshape(k, d).astype(dt.newbyteorder("="))
    m_v = np.frombuffer(blob[21 + n:], dtype=dt).reshape(k, d).astype(dt.newbyteorder("="))
    return DialogueState.from_arrays(m_e, m_v, t)


def init_from_caption(caption_ids, encoder, strack, rng=None, train=False) -> DialogueState:
    """Encode the caption alone into f(0) and apply the Adding action to an empty state.

    ``caption_ids``: one token-id sequence, or a list of them for a batch.
    """
    batch = len(caption_ids) > 0 and not np.isscalar(caption_ids[0])
    captions = list(caption_ids) if batch else [list(caption_ids)]
    if any(len(c) == 0 for c in captions):
        raise ValueError("caption must be non-empty")
    empty = DialogueState.empty(encoder.d, (len(captions),), encoder.embed.dtype)
    f = encoder.encode_batch([[] for _ in captions], captions, empty, rng, train)
    state = strack.add(f, empty, rng, train)
    return state if batch else _unbatch(state)


def _unbatch(state: DialogueState) -> DialogueState:
    return DialogueState(state.m_e[0], state.m_v[0], state.mask[0], state.t)


def as_batch(state: DialogueState) -> DialogueState:
    """View a single-episode state as a batch of one."""
    if state.batched:
        return state
    m_e = state.m_e.reshape((1,) + state.m_e.shape)
    m_v = state.m_v.reshape((1,) + state.m_v.shape)
    return DialogueState(m_e, m_v, state.mask[None], state.t)
