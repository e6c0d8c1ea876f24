"""Recursive self-reference attention: V' = R-SRE(Q, V)."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .nn import Module, uniform_param


class RsreParams(Module):
    def __init__(self, rng, d, dtype=np.float32):
        self.w_alpha = uniform_param(rng, d, 1, d, dtype)
        self.w_beta = uniform_param(rng, 3 * d, 1, 3 * d, dtype)


def rsre(Q, V, params: RsreParams, mask=None):
    """Rescale each row of ``V`` by attention guided by ``Q``.

    Q, V: ``(..., k, d)``; mask: optional ``(..., k)`` bool of live rows.
    alpha = softmax_k(Q w_alpha); q = alpha^T Q;
    beta = softmax_k([q; q*V; V] w_beta); row i of the output is beta_i * V_i.
    """
    if Q.shape != V.shape:
        raise ValueError(f"Q and V must share shape, got {Q.shape} and {V.shape}")
    k, d = V.shape[-2], V.shape[-1]
    if k == 0:
        raise ValueError("R-SRE needs at least one row")
    if params.w_alpha.shape != (d, 1) or params.w_beta.shape != (3 * d, 1):
        raise ValueError("parameter shapes do not match d")
    row_mask = None if mask is None else mask[..., None]

    alpha = ag.softmax(ag.matmul(Q, params.w_alpha), axis=-2, mask=row_mask)
    q = ag.matmul(ag.transpose(alpha), Q)                      # (..., 1, d)
    q_rep = ag.repeat_rows(q, k)
    feats = ag.concat([q_rep, q_rep * V, V], axis=-1)          # (..., k, 3d)
    beta = ag.softmax(ag.matmul(feats, params.w_beta), axis=-2, mask=row_mask)
    return beta * V
