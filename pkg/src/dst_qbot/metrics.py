"""Retrieval metrics over target ranks and diversity metrics over generated questions."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

RECALL_KS = (1, 5, 10)


@dataclass
class MetricReport:
    mrr: float
    r1: float
    r5: float
    r10: float
    mean_rank: float
    pmr: float
    pmr_per_round: list = field(default_factory=list)
    mse_per_round: list = field(default_factory=list)
    unique_q: float = 0.0
    novel_q: float = 0.0
    dist_1: float = 0.0
    dist_2: float = 0.0
    ent_1: float = 0.0
    ent_2: float = 0.0
    mutual_overlap: float = 0.0
    nll: float | None = None
    episodes: int = 0
    pool_size: int = 0

    def as_dict(self):
        out = asdict(self)
        out["r@1"], out["r@5"], out["r@10"] = out.pop("r1"), out.pop("r5"), out.pop("r10")
        return out

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        rows = [
            ("episodes", f"{self.episodes}"),
            ("pool size N", f"{self.pool_size}"),
            ("MRR", f"{self.mrr:.4f}"),
            ("R@1", f"{self.r1:.4f}"),
            ("R@5", f"{self.r5:.4f}"),
            ("R@10", f"{self.r10:.4f}"),
            ("Mean rank", f"{self.mean_rank:.3f}"),
            ("PMR", f"{self.pmr:.4f}"),
            ("unique Q", f"{self.unique_q:.3f}"),
            ("novel Q", f"{self.novel_q:.4f}"),
            ("Dist-1", f"{self.dist_1:.4f}"),
            ("Dist-2", f"{self.dist_2:.4f}"),
            ("Ent-1", f"{self.ent_1:.4f}"),
            ("Ent-2", f"{self.ent_2:.4f}"),
            ("Mutual overlap", f"{self.mutual_overlap:.4f}"),
            ("NLL", "n/a" if self.nll is None else f"{self.nll:.4f}"),
        ]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
        if self.pmr_per_round:
            lines.append("PMR by round".ljust(width) + "  " + " ".join(f"{p:.3f}" for p in self.pmr_per_round))
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# retrieval
# ----------------------------------------------------------------------
def retrieval_metrics(ranks, N: int) -> dict:
    """MRR, R@{1,5,10}, mean rank and percentile mean rank from 1-based ranks."""
    if N < 2:
        raise ValueError("pool size N must be >= 2")
    r = np.asarray(ranks, dtype=np.float64).reshape(-1)
    if r.size == 0:
        raise ValueError("no ranks given")
    if np.any(r != np.round(r)) or r.min() < 1 or r.max() > N:
        raise ValueError(f"ranks must be integers in [1, {N}]")
    out = {"mrr": float(np.mean(1.0 / r))}
    for k in RECALL_KS:
        out[f"r@{k}"] = float(np.mean(r <= k))
    out["mean_rank"] = float(np.mean(r))
    out["pmr"] = float(np.mean((N - r) / (N - 1)))
    return out


# ----------------------------------------------------------------------
# diversity
# ----------------------------------------------------------------------
def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def distinct_n(questions, n: int) -> float:
    grams = [g for q in questions for g in _ngrams(q.split(), n)]
    return len(set(grams)) / len(grams) if grams else 0.0


def entropy_n(questions, n: int) -> float:
    counts = Counter(g for q in questions for g in _ngrams(q.split(), n))
    total = sum(counts.values())
    if total == 0:
        return 0.0
    return float(-sum(c / total * math.log(c / total) for c in counts.values()))


def sentence_bleu(hypothesis: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU-4, uniform weights, add-one smoothing on every order, brevity penalty."""
    hyp, ref = hypothesis.split(), reference.split()
    if not hyp:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        h = Counter(_ngrams(hyp, n))
        r = Counter(_ngrams(ref, n))
        matched = sum(min(c, r[g]) for g, c in h.items())
        log_p += math.log((matched + 1) / (sum(h.values()) + 1)) / max_n
    bp = 1.0 if len(hyp) > len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return bp * math.exp(log_p)


def mutual_overlap(questions) -> float:
    """Mean BLEU-4 over ordered pairs (i != j) of questions within one dialogue."""
    pairs = [(a, b) for i, a in enumerate(questions) for j, b in enumerate(questions) if i != j]
    if not pairs:
        return 0.0
    return float(np.mean([sentence_bleu(a, b) for a, b in pairs]))


def diversity_metrics(dialogues, train_questions) -> dict:
    """``dialogues``: list of per-dialogue question lists."""
    if not dialogues:
        raise ValueError("no dialogues given")
    train_set = set(train_questions)
    flat = [q for d in dialogues for q in d]
    return {
        "unique_q": float(np.mean([len(set(d)) for d in dialogues])),
        "novel_q": float(np.mean([q not in train_set for q in flat])) if flat else 0.0,
        "dist_1": distinct_n(flat, 1),
        "dist_2": distinct_n(flat, 2),
        "ent_1": entropy_n(flat, 1),
        "ent_2": entropy_n(flat, 2),
        "mutual_overlap": float(np.mean([mutual_overlap(d) for d in dialogues])),
    }


def nll_per_token(nll_sum: float, tokens: int) -> float:
    if tokens <= 0:
        raise ValueError("no gold tokens scored")
    return nll_sum / tokens


# ----------------------------------------------------------------------
# report assembly
# ----------------------------------------------------------------------
def build_report(transcripts, train_questions=(), nll=None) -> MetricReport:
    if not transcripts:
        raise ValueError("no transcripts")
    N = transcripts[0].pool_size
    final = retrieval_metrics([tr.rounds[-1].rank for tr in transcripts], N)
    T = len(transcripts[0].rounds)
    per_round = [retrieval_metrics([tr.rounds[t].rank for tr in transcripts], N)["pmr"] for t in range(T)]
    mse_round = [float(np.mean([tr.rounds[t].mse for tr in transcripts])) for t in range(T)]
    div = diversity_metrics([tr.questions for tr in transcripts], train_questions)
    return MetricReport(
        mrr=final["mrr"], r1=final["r@1"], r5=final["r@5"], r10=final["r@10"],
        mean_rank=final["mean_rank"], pmr=final["pmr"],
        pmr_per_round=per_round, mse_per_round=mse_round,
        nll=nll, episodes=len(transcripts), pool_size=N, **div,
    )
