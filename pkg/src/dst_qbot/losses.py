"""Supervised objective: question cross-entropy + feature MSE + progressive loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass
class LossReport:
    ce: float
    mse: list = field(default_factory=list)
    mse_mean: float = 0.0
    pl: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return asdict(self)


def token_nll(logits: Tensor, gold, mask=None):
    """Per-sequence summed negative log-probability and token counts.

    logits ``(..., L, V)``; gold int ``(..., L)``; mask bool ``(..., L)``.
    """
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != logits.shape[:-1]:
        raise ValueError(f"gold shape {gold.shape} does not match logits {logits.shape}")
    if mask is None:
        mask = np.ones(gold.shape, dtype=bool)
    if gold[mask].size and gold[mask].max() >= logits.shape[-1]:
        raise ValueError("gold token outside the vocabulary")
    pick = np.zeros(logits.shape, dtype=logits.dtype)
    np.put_along_axis(pick, np.where(mask, gold, 0)[..., None], 1.0, axis=-1)
    pick *= mask[..., None]
    nll = -(ag.log_softmax(logits, axis=-1) * pick).sum(axis=-1).sum(axis=-1)
    return nll, mask.sum(axis=-1)


def ce_loss(logits: Tensor, gold, mask=None) -> Tensor:
    """Mean negative log-probability of the gold tokens over all ``l`` steps."""
    nll, counts = token_nll(logits, gold, mask)
    total = int(np.sum(counts))
    if total == 0:
        raise ValueError("cross-entropy needs at least one gold token")
    return nll.sum() * (1.0 / total)


def mse_loss(preds, target, literal_sign=False):
    """Squared L2 distance per round and its mean over rounds.

    preds: ``(T, d_img)`` (or ``(..., T, d_img)``); target broadcastable to it.
    With ``literal_sign`` the mean is negated.
    """
    preds = ag.as_tensor(preds)
    target = np.asarray(target, dtype=preds.dtype)
    if preds.shape[-2] < 1:
        raise ValueError("need at least one round")
    if target.shape[-1] != preds.shape[-1]:
        raise ValueError(f"feature width mismatch {preds.shape[-1]} vs {target.shape[-1]}")
    diff = preds - target
    per_round = (diff * diff).sum(axis=-1)
    mean = per_round.mean(axis=-1)
    return per_round, (-mean if literal_sign else mean)


def pl_loss(per_round: Tensor, detach_previous=False) -> Tensor:
    """(1/(T-1)) * sum_{t=2..T} (mse_t - mse_{t-1}); minimising it rewards shrinking distance.

    ``detach_previous`` keeps the value but treats each mse_{t-1} as a fixed
    baseline.  Without it, CE + MSE + PL puts weight 1/T - 1/(T-1) < 0 on
    round 1 and the objective is unbounded below.
    """
    per_round = ag.as_tensor(per_round)
    T = per_round.shape[-1]
    if T < 2:
        raise ValueError("progressive loss needs T >= 2 rounds")
    prev = per_round[..., :-1]
    if detach_previous:
        prev = ag.detach(prev)
    diffs = per_round[..., 1:] - prev
    return diffs.sum(axis=-1) * (1.0 / (T - 1))


def total_loss(ce: Tensor, mse_mean: Tensor, pl: Tensor, use_mse=True, use_pl=True) -> Tensor:
    total = ce
    if use_mse:
        total = total + mse_mean
    if use_pl:
        total = total + pl
    return total
