"""Episode orchestration: caption -> T x (VRDS, decode, ABot, encode, STrack, guess)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .guesser import rank_pool_batch
from .losses import LossReport, mse_loss, pl_loss, token_nll
from .state import init_from_caption
from .vrds import pooled_context
from .world import EOS, Episode, Vocab, World, abot_answer

ABLATIONS = (None, "vrds", "strack", "mse", "pl")


@dataclass
class RoundRecord:
    question: str
    answer: str
    action: str          # "A" add, "U" update, "-" state frozen
    k: int
    rank: int
    mse: float
    prediction: list = field(repr=False)


@dataclass
class Transcript:
    episode_id: int
    target: int
    caption: str
    pool_size: int
    rounds: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @property
    def ranks(self):
        return [r.rank for r in self.rounds]

    @property
    def questions(self):
        return [r.question for r in self.rounds]


@dataclass
class BatchResult:
    transcripts: list
    loss: ag.Tensor | None = None
    report: LossReport | None = None
    nll_sum: float = 0.0
    nll_tokens: int = 0


class EpisodeError(RuntimeError):
    pass


def _answer_fn_default(question: str, image) -> str:
    return abot_answer(question, image)


def run_batch(model, episodes: list[Episode], world: World, vocab: Vocab, mode="eval", rng=None,
              ablate=None, literal_signs=False, answer_fn=None, tau=None, on_round=None,
              on_guess=None, pl_detach=True) -> BatchResult:
    """Play a batch of episodes in lockstep.

    mode ``train``: gold questions (teacher forcing), dropout and Gumbel
    sampling on, loss graph built.  ``score``: gold questions, no noise, no
    graph; used for NLL.  ``eval``: greedy questions answered by the ABot.
    ``answer_fn(question, image)`` replaces the rule-based ABot (interactive
    play).  ``on_round(t, questions, state)`` is called before answers are
    requested and ``on_guess(t, predictions, pools)`` after each guess.
    """
    if mode not in ("train", "score", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if ablate not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablate!r}")
    rounds = {ep.rounds for ep in episodes}
    if len(rounds) != 1:
        raise EpisodeError("all episodes in a batch must share the round budget")
    T = rounds.pop()
    train = mode == "train"
    answer_fn = answer_fn or _answer_fn_default
    if train and rng is None:
        raise ValueError("train mode needs an rng")
    opts = dict(mode=mode, rng=rng, ablate=ablate, literal_signs=literal_signs, answer_fn=answer_fn,
                tau=tau, on_round=on_round, on_guess=on_guess, pl_detach=pl_detach, T=T)
    try:
        if train:
            return _run(model, episodes, world, vocab, **opts)
        with ag.no_grad():
            return _run(model, episodes, world, vocab, **opts)
    except (ValueError, IndexError, FloatingPointError) as exc:
        ag.get_graph().reset()
        ids = [ep.id for ep in episodes]
        raise EpisodeError(f"episode batch {ids[:5]}{'...' if len(ids) > 5 else ''} aborted: {exc}") from exc


def _run(model, episodes, world, vocab, *, mode, rng, ablate, literal_signs, answer_fn, tau, on_round, on_guess,
         pl_detach, T):
    train = mode == "train"
    teacher = mode in ("train", "score")
    b = len(episodes)
    images = [world[ep.target] for ep in episodes]
    pools = np.stack([world.features[ep.pool] for ep in episodes])
    target_idx = np.array([ep.target_index for ep in episodes])
    target_feats = np.stack([im.feature for im in images])[:, None, :]

    captions = [vocab.encode(ep.caption) for ep in episodes]
    state = init_from_caption(captions, model.encoder, model.strack, rng, train)
    transcripts = [Transcript(ep.id, ep.target, ep.caption, len(ep.pool)) for ep in episodes]

    preds = []
    nll_total, nll_count = None, np.zeros(b, dtype=np.int64)
    for t in range(T):
        z = pooled_context(state) if ablate == "vrds" else model.vrds(state, train, rng)
        if teacher:
            gold = [vocab.encode(ep.questions[t]) + [EOS] for ep in episodes]
            logits, targets, mask = model.decoder.teacher_forcing_batch(z, state, gold, rng, train)
            nll, counts = token_nll(logits, targets, mask)
            nll_total = nll if nll_total is None else nll_total + nll
            nll_count += counts
            q_ids = [g[:-1] for g in gold]
        else:
            q_ids = model.decoder.greedy_batch(z, state)
        q_text = [vocab.decode(q) for q in q_ids]
        if on_round is not None:
            on_round(t, q_text, state)
        if teacher:
            a_text = [ep.answers[t] for ep in episodes]
        else:
            a_text = [answer_fn(q, im) for q, im in zip(q_text, images)]
        a_ids = [vocab.encode(a) for a in a_text]

        if ablate == "strack":
            actions = ["-"] * b
        else:
            f = model.encoder.encode_batch(q_ids, a_ids, state, rng, train)
            phi = None
            if tau is not None:
                phi = model.strack.decide_action(f, state, rng, train, sample=train, tau=tau)
            out = model.strack.track(f, state, rng, train, phi=phi)
            actions = ["A" if added else "U" for added in np.atleast_1d(out.added)]
            state = out.state

        y = model.guesser(state, z, rng, train)
        preds.append(y)
        y_np = y.data[:, 0, :]
        ranks = rank_pool_batch(y_np, pools, target_idx)
        if on_guess is not None:
            on_guess(t, y_np, pools)
        sq = ((y_np.astype(np.float64) - target_feats[:, 0, :]) ** 2).sum(axis=1)
        ks = state.k
        for i in range(b):
            transcripts[i].rounds.append(RoundRecord(
                q_text[i], a_text[i], actions[i], int(ks[i]), int(ranks[i]), float(sq[i]),
                [float(v) for v in y_np[i]],
            ))

    for tr in transcripts:
        last = tr.rounds[-1]
        tr.final = {"rank": last.rank, "k": last.k}

    result = BatchResult(transcripts)
    if teacher:
        result.nll_sum = float(nll_total.data.sum())
        result.nll_tokens = int(nll_count.sum())
    if train:
        stacked = ag.concat(preds, axis=1)                      # (B, T, d_img)
        per_round, mse_mean = mse_loss(stacked, target_feats, literal_sign=literal_signs)
        ce = (nll_total * (1.0 / nll_count.astype(stacked.dtype))).mean()
        mse_b = mse_mean.mean()
        pl_b = pl_loss(per_round, detach_previous=pl_detach).mean() if T >= 2 else None
        use_mse = ablate != "mse"
        use_pl = ablate != "pl" and pl_b is not None
        loss = ce
        if use_mse:
            loss = loss + mse_b
        if use_pl:
            loss = loss + pl_b
        result.loss = loss
        result.report = LossReport(
            ce=float(ce.item()),
            mse=[float(v) for v in per_round.data.mean(axis=0)],
            mse_mean=float(mse_b.item()),
            pl=float(pl_b.item()) if pl_b is not None else 0.0,
            total=float(loss.item()),
        )
    return result


def run_episode(model, episode: Episode, world: World, vocab: Vocab, mode="eval", rng=None, ablate=None):
    """Single-episode convenience wrapper around :func:`run_batch`."""
    res = run_batch(model, [episode], world, vocab, mode, rng, ablate)
    return res.transcripts[0], res


def iter_batches(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def play_all(model, episodes, world, vocab, batch_size=64, ablate=None, mode="eval"):
    """Eval-mode transcripts (and NLL totals in ``score`` mode) for a list of episodes."""
    transcripts, nll_sum, nll_tokens = [], 0.0, 0
    for batch in iter_batches(episodes, batch_size):
        res = run_batch(model, batch, world, vocab, mode=mode, ablate=ablate)
        transcripts.extend(res.transcripts)
        nll_sum += res.nll_sum
        nll_tokens += res.nll_tokens
    return transcripts, nll_sum, nll_tokens
