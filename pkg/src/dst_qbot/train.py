"""Supervised training loop with validation-PMR early stopping and exact resume."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import checkpoint
from .config import Config
from .game import iter_batches, play_all, run_batch
from .metrics import build_report
from .model import QBot
from .world import Episode, Vocab, World

SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    world: World
    vocab: Vocab
    splits: dict

    def questions(self, split="train"):
        return [q for ep in self.splits[split] for q in ep.questions]


def write_dataset(out_dir, world: World, vocab: Vocab, splits: dict):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "world.json", world.to_json())
    _write_text(out / "vocab.txt", vocab.dump())
    for name in SPLITS:
        _write_text(out / f"{name}.jsonl", "".join(ep.to_json() + "\n" for ep in splits[name]))


def load_dataset(data_dir) -> Dataset:
    d = Path(data_dir)
    try:
        world = World.from_json((d / "world.json").read_text())
        vocab = Vocab.load((d / "vocab.txt").read_text())
        splits = {
            name: [Episode.from_json(line) for line in (d / f"{name}.jsonl").read_text().splitlines() if line]
            for name in SPLITS
        }
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"dataset incomplete in {d}: {exc.filename} missing") from None
    return Dataset(world, vocab, splits)


def _write_text(path, text):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_bytes(path, blob):
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def gumbel_tau(cfg: Config, epoch: int) -> float:
    m = cfg.model
    if m.gumbel_tau_final is None or cfg.train.epochs < 2:
        return m.gumbel_tau
    frac = epoch / (cfg.train.epochs - 1)
    return m.gumbel_tau + (m.gumbel_tau_final - m.gumbel_tau) * frac


def evaluate(model, data: Dataset, split="val", ablate=None, batch_size=64, with_nll=True):
    """Greedy eval episodes -> (MetricReport, transcripts)."""
    episodes = data.splits[split]
    eval_ablate = ablate if ablate in ("vrds", "strack") else None
    transcripts, _, _ = play_all(model, episodes, data.world, data.vocab, batch_size, eval_ablate, "eval")
    nll = None
    if with_nll:
        _, s, n = play_all(model, episodes, data.world, data.vocab, batch_size, eval_ablate, "score")
        nll = s / n
    return build_report(transcripts, data.questions("train"), nll), transcripts


class Trainer:
    """Files written to ``out_dir``:

    config.json, log.jsonl (one line per finished epoch), last.ckpt,
    last.optim, last_state.json, best.ckpt, best.json.
    """

    def __init__(self, cfg: Config, data: Dataset, out_dir, log=None):
        self.cfg, self.data = cfg, data
        self.out = Path(out_dir)
        self.log = log or (lambda msg: None)
        self.model = QBot(cfg, len(data.vocab))
        n_train = len(data.splits["train"])
        if n_train == 0 or not data.splits["val"]:
            raise ValueError("training needs non-empty train and val splits")
        self.steps_per_epoch = math.ceil(n_train / cfg.train.batch_size)
        self.opt = ag.Adam(self.model.named_parameters(), cfg.train.lr, cfg.train.final_lr,
                           cfg.train.epochs * self.steps_per_epoch, clip_norm=cfg.train.clip_norm)
        self.epoch = 0
        self.best_pmr, self.best_epoch, self.bad_epochs = -1.0, -1, 0
        self.stopped = False

    # -- persistence ----------------------------------------------------
    def _state(self):
        return {
            "epoch": self.epoch, "step": self.opt.step_count, "best_pmr": self.best_pmr,
            "best_epoch": self.best_epoch, "bad_epochs": self.bad_epochs, "stopped": self.stopped,
        }

    def resume(self) -> bool:
        path = self.out / "last_state.json"
        if not path.exists():
            return False
        st = json.loads(path.read_text())
        self.model.load(self.out / "last.ckpt")
        self.opt.load_state_arrays(checkpoint.load(self.out / "last.optim"), st["step"])
        self.epoch, self.best_pmr = st["epoch"], st["best_pmr"]
        self.best_epoch, self.bad_epochs, self.stopped = st["best_epoch"], st["bad_epochs"], st["stopped"]
        log_path = self.out / "log.jsonl"
        if log_path.exists():
            lines = log_path.read_text().splitlines(keepends=True)[: self.epoch]
            _write_text(log_path, "".join(lines))
        return True

    def _save_epoch(self, line: dict, improved: bool):
        with open(self.out / "log.jsonl", "a") as fh:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
        blob = checkpoint.dumps(self.model.arrays())
        _write_bytes(self.out / "last.ckpt", blob)
        _write_bytes(self.out / "last.optim", checkpoint.dumps(self.opt.state_arrays()))
        if improved:
            _write_bytes(self.out / "best.ckpt", blob)
            _write_text(self.out / "best.json", json.dumps(
                {"epoch": self.best_epoch, "val_pmr": self.best_pmr, "checkpoint": "best.ckpt"}, sort_keys=True) + "\n")
        _write_text(self.out / "last_state.json", json.dumps(self._state(), sort_keys=True) + "\n")

    # -- loop -----------------------------------------------------------
    def train_epoch(self, epoch: int) -> dict:
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, epoch, 7])
        episodes = self.data.splits["train"]
        order = rng.permutation(len(episodes))
        tau = gumbel_tau(cfg, epoch)
        sums, n = {}, 0
        for idx in iter_batches(order, cfg.train.batch_size):
            batch = [episodes[i] for i in idx]
            res = run_batch(self.model, batch, self.data.world, self.data.vocab, "train", rng,
                            ablate=cfg.train.ablate, literal_signs=cfg.train.literal_loss_signs, tau=tau,
                            pl_detach=cfg.train.pl_detach_previous)
            if not np.isfinite(res.report.total):
                raise FloatingPointError(f"non-finite loss in epoch {epoch}")
            ag.backward(res.loss)
            self.opt.step()
            w = len(batch)
            rep = res.report
            for key, val in (("ce", rep.ce), ("mse", rep.mse_mean), ("pl", rep.pl), ("total", rep.total)):
                sums[key] = sums.get(key, 0.0) + val * w
            sums["mse_per_round"] = sums.get("mse_per_round", 0.0) + np.asarray(rep.mse) * w
            n += w
        out = {k: (v / n if np.isscalar(v) else [float(x) for x in v / n]) for k, v in sums.items()}
        out["tau"] = tau
        out["lr"] = self.opt.current_lr()
        return out

    def run(self, stop_after: int | None = None):
        """Train until the epoch budget, early stop, or ``stop_after`` epochs in this call."""
        self.out.mkdir(parents=True, exist_ok=True)
        _write_text(self.out / "config.json", self.cfg.to_json())
        done_here = 0
        while self.epoch < self.cfg.train.epochs and not self.stopped:
            if stop_after is not None and done_here >= stop_after:
                break
            e = self.epoch
            losses = self.train_epoch(e)
            report, _ = evaluate(self.model, self.data, "val", with_nll=False,
                                 batch_size=self.cfg.train.batch_size)
            improved = report.pmr > self.best_pmr
            if improved:
                self.best_pmr, self.best_epoch, self.bad_epochs = report.pmr, e, 0
            else:
                self.bad_epochs += 1
            self.epoch = e + 1
            if self.bad_epochs >= self.cfg.train.patience:
                self.stopped = True
            val = report.as_dict()
            for key in ("nll", "unique_q", "novel_q", "dist_1", "dist_2", "ent_1", "ent_2", "mutual_overlap"):
                val.pop(key, None)
            line = {"epoch": e, "train": losses, "val": val, "best_epoch": self.best_epoch}
            self._save_epoch(line, improved)
            done_here += 1
            self.log(f"epoch {e:2d}  loss {losses['total']:.4f} (ce {losses['ce']:.4f} mse {losses['mse']:.4f} "
                     f"pl {losses['pl']:+.4f})  val PMR {report.pmr:.4f} MRR {report.mrr:.4f}"
                     + ("  *" if improved else ""))
        return self.model


def train(cfg: Config, data: Dataset, out_dir, resume=True, stop_after=None, log=None) -> Trainer:
    trainer = Trainer(cfg, data, out_dir, log)
    if resume:
        trainer.resume()
    trainer.run(stop_after)
    return trainer
