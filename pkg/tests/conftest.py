import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from dst_qbot import autograd as ag  # noqa: E402
from dst_qbot.config import Config  # noqa: E402
from dst_qbot.model import QBot  # noqa: E402
from dst_qbot.world import Vocab, generate_world, make_episodes, split_episodes  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _fresh_tape():
    ag.get_graph().reset()
    yield
    ag.get_graph().reset()


def tiny_config(seed=0, d=8, d_img=6, rounds=3, **model):
    cfg = Config(seed=seed)
    cfg.model.d, cfg.model.d_img = d, d_img
    cfg.model.layers, cfg.model.heads, cfg.model.d_ff = 1, 2, 2 * d
    cfg.model.dropout = 0.0
    for k, v in model.items():
        setattr(cfg.model, k, v)
    cfg.world.rounds = rounds
    cfg.world.num_images, cfg.world.pool_size = 60, 10
    return cfg


def tiny_model(seed=0, dtype=np.float64, **kw):
    cfg = tiny_config(seed, **kw)
    return QBot(cfg, len(Vocab()), dtype=dtype), cfg


@pytest.fixture(scope="session")
def vocab():
    return Vocab()


@pytest.fixture(scope="session")
def small_world():
    world = generate_world(3, 60, d_img=6)
    episodes = make_episodes(world, 3, pool_size=10, rounds=3)
    train, val, test = split_episodes(episodes)
    return world, {"train": train, "val": val, "test": test}


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, title, detail = results[number]
        extra = ", ".join(f"{k} {v}" for k, v in detail.items())
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({extra})")
