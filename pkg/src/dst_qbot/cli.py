"""dst-qbot command line: gen-data, train, eval, play."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config
from .game import EpisodeError, run_batch
from .train import Trainer, _write_text, evaluate, load_dataset, write_dataset
from .world import Vocab, generate_world, make_episodes, split_episodes

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _warn(warnings):
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)


def _config_for(args, fallback_dir=None) -> Config:
    """--config if given, else ``config.json`` beside the data/checkpoint, else defaults."""
    path = getattr(args, "config", None)
    if path is None and fallback_dir is not None and (Path(fallback_dir) / "config.json").exists():
        path = Path(fallback_dir) / "config.json"
    cfg, warnings = load_config(path)
    _warn(warnings)
    return cfg


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_gen_data(args):
    cfg = _config_for(args)
    wc = cfg.world
    world = generate_world(cfg.seed, wc.num_images, cfg.model.d_img, wc.max_objects,
                           wc.visible_scale, wc.hidden_scale)
    episodes = make_episodes(world, cfg.seed, wc.pool_size, wc.rounds, wc.num_episodes)
    train, val, test = split_episodes(episodes, wc.splits)
    write_dataset(args.out, world, Vocab(), {"train": train, "val": val, "test": test})
    _write_text(Path(args.out) / "config.json", cfg.to_json())
    print(f"wrote {len(world)} images, {len(train)}/{len(val)}/{len(test)} train/val/test episodes to {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config_for(args, args.data)
    data = load_dataset(args.data)
    _check_rounds(cfg, data)
    out = Path(args.out)
    trainer = Trainer(cfg, data, out, log=print)
    if args.resume and trainer.resume():
        print(f"resumed at epoch {trainer.epoch}")
    else:
        for name in ("log.jsonl", "last_state.json", "best.json", "best.ckpt", "last.ckpt", "last.optim"):
            if (out / name).exists():
                (out / name).unlink()
    trainer.run(args.stop_after)
    print(f"best epoch {trainer.best_epoch} val PMR {trainer.best_pmr:.4f}")
    return EXIT_OK


def _check_rounds(cfg, data):
    rounds = {ep.rounds for split in data.splits.values() for ep in split}
    if rounds != {cfg.world.rounds}:
        raise ConfigError(f"config error at world/rounds: {cfg.world.rounds} but dataset has {sorted(rounds)}")


def _load_model(args, data):
    from .model import QBot

    ckpt = Path(args.checkpoint)
    cfg = _config_for(args, ckpt.parent)
    _check_rounds(cfg, data)
    model = QBot(cfg, len(data.vocab))
    model.load(ckpt)
    return cfg, model


def cmd_eval(args):
    data = load_dataset(args.data)
    cfg, model = _load_model(args, data)
    if args.ablate in ("mse", "pl") and cfg.train.ablate != args.ablate:
        _warn([f"--ablate {args.ablate} is a training-time ablation; this checkpoint was trained with "
               f"train.ablate={cfg.train.ablate!r}"])
    report, transcripts = evaluate(model, data, args.split, args.ablate, cfg.train.batch_size)
    print(f"split={args.split} ablate={args.ablate or 'none'}")
    print(report.table(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = report.as_dict()
        payload.update({"split": args.split, "ablate": args.ablate, "checkpoint": Path(args.checkpoint).name})
        _write_text(out / "metrics.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
        _write_text(out / "transcripts.jsonl", "".join(t.to_json() + "\n" for t in transcripts))
    return EXIT_OK


def cmd_play(args):
    data = load_dataset(args.data)
    cfg, model = _load_model(args, data)
    episodes = data.splits[args.split]
    matches = [ep for ep in episodes if ep.id == args.episode] if args.episode is not None else episodes[:1]
    if not matches:
        raise KeyError(f"episode {args.episode} not in split {args.split}")
    ep = matches[0]
    print(f"episode {ep.id}  pool of {len(ep.pool)} images")
    print(f"caption: {ep.caption}")

    def ask(question, image):
        if not args.human_abot:
            from .world import abot_answer

            answer = abot_answer(question, image)
            print(f"A: {answer}")
            return answer
        line = sys.stdin.readline()
        if not line:
            raise EOFError("input closed mid-game")
        return line.strip().lower()

    def show_question(t, questions, state):
        print(f"round {t + 1}  Q: {questions[0]}")
        if args.human_abot:
            print("your answer> ", end="", flush=True)

    def show_guess(t, preds, pools):
        dist = np.sqrt(((pools[0] - preds[0]) ** 2).sum(axis=1))
        top = np.argsort(dist, kind="stable")[:5]
        print("  top-5: " + " ".join(str(ep.pool[i]) for i in top))

    res = run_batch(model, [ep], data.world, data.vocab, "eval", answer_fn=ask,
                    on_round=show_question, on_guess=show_guess)
    tr = res.transcripts[0]
    print(f"final rank {tr.final['rank']} of {len(ep.pool)} (target image {ep.target})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "play.jsonl", tr.to_json() + "\n")
    return EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="dst-qbot", description="Dialogue-state-tracking questioner on a synthetic guessing game.")
    p.add_argument("--print-config", action="store_true", help="print the effective config as JSON and exit")
    p.add_argument("--config", help="JSON config (used with --print-config)")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen-data", help="generate a synthetic world and episode splits")
    g.add_argument("--config")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="supervised training with early stopping")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", action="store_true", help="continue from last.ckpt in --out")
    t.add_argument("--stop-after", type=int, help="stop after this many epochs (simulated interruption)")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--config")
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.add_argument("--ablate", choices=["vrds", "strack", "mse", "pl"])
    e.add_argument("--out")

    pl = sub.add_parser("play", help="play one episode interactively")
    pl.add_argument("--checkpoint", required=True)
    pl.add_argument("--data", required=True)
    pl.add_argument("--config")
    pl.add_argument("--split", default="test", choices=["train", "val", "test"])
    pl.add_argument("--episode", type=int)
    pl.add_argument("--human-abot", action="store_true", help="read answers from stdin")
    pl.add_argument("--out")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "play": cmd_play}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.print_config:
            cfg, warnings = load_config(args.config)
            _warn(warnings)
            print(cfg.to_json(), end="")
            return EXIT_OK
        if args.command is None:
            parser.print_help()
            return EXIT_CONFIG
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        _err(exc)
        return EXIT_CONFIG
    except EOFError as exc:
        _err(f"aborted: {exc}")
        return EXIT_RUNTIME
    except (OSError, KeyError, ValueError, EpisodeError, FloatingPointError) as exc:
        _err(exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
