"""Image-feature regression and pool ranking."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .nn import Linear, Module, masked_mean_rows


class Guesser(Module):
    """Two-layer regression from [mean(M_e); mean(M_v); z] to a d_img feature."""

    def __init__(self, rng, d, d_img, dropout=0.1, dtype=np.float32):
        self.fc1 = Linear(rng, 3 * d, d, dtype=dtype)
        self.fc2 = Linear(rng, d, d_img, dtype=dtype)
        self.rate = dropout
        self.d, self.d_img = d, d_img

    def __call__(self, state, z, rng=None, train=False):
        if z.shape[-1] != self.d or state.d != self.d:
            raise ValueError(f"expected width {self.d}, got state {state.d} and z {z.shape[-1]}")
        x = ag.concat([
            masked_mean_rows(state.m_e, state.mask),
            masked_mean_rows(state.m_v, state.mask),
            z,
        ], axis=-1)
        h = ag.dropout(ag.gelu(self.fc1(x)), self.rate, rng, train)
        return self.fc2(h)

    predict_image_feature = __call__


def rank_pool(y, pool, target_index: int) -> int:
    """1-based rank of the target by ascending Euclidean distance; ties count against it."""
    pool = np.asarray(pool, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if pool.ndim != 2 or pool.shape[0] < 2:
        raise ValueError("pool must hold at least 2 candidates")
    if pool.shape[1] != y.size:
        raise ValueError(f"feature width mismatch: {y.size} vs {pool.shape[1]}")
    if not 0 <= target_index < pool.shape[0]:
        raise IndexError("target index outside the pool")
    dist = np.sqrt(((pool - y) ** 2).sum(axis=1))
    dt = dist[target_index]
    return int((dist < dt).sum() + (dist == dt).sum())


def rank_pool_batch(ys, pools, target_indices):
    """Vectorised :func:`rank_pool` over ``ys (B, d_img)`` and ``pools (B, N, d_img)``."""
    ys = np.asarray(ys, dtype=np.float64)
    pools = np.asarray(pools, dtype=np.float64)
    dist = np.sqrt(((pools - ys[:, None, :]) ** 2).sum(axis=-1))
    dt = dist[np.arange(len(ys)), target_indices][:, None]
    return ((dist < dt).sum(axis=1) + (dist == dt).sum(axis=1)).astype(int)
