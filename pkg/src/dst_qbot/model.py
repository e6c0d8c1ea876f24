"""The questioner bundle: decoder (owns the token table), encoder, VRDS, STrack, guesser."""
from __future__ import annotations

import hashlib

import numpy as np

from . import checkpoint
from .config import Config
from .guesser import Guesser
from .nn import Module
from .qdec import QDecoder
from .qenc import QEncoder
from .strack import STrack
from .vrds import Vrds


class QBot(Module):
    def __init__(self, cfg: Config, vocab_size: int, seed: int | None = None, dtype=np.float32):
        m = cfg.model
        rng = np.random.default_rng([cfg.seed if seed is None else seed, 31337])
        self.decoder = QDecoder(rng, vocab_size, m.d, m.layers, m.heads, m.d_ff, m.dropout,
                                m.max_question_len, dtype)
        self.encoder = QEncoder(rng, self.decoder.embed, m.d, m.layers, m.heads, m.d_ff, m.dropout,
                                m.max_question_len, m.max_answer_len, cfg.max_rows, dtype)
        self.vrds = Vrds(rng, m.d, m.dropout, dtype)
        self.strack = STrack(rng, m.d, m.dropout, m.gumbel_tau, dtype)
        self.guesser = Guesser(rng, m.d, m.d_img, m.dropout, dtype)
        self.cfg = cfg

    def arrays(self):
        return [(name, p.data) for name, p in self.named_parameters()]

    def save(self, path):
        checkpoint.save(path, self.arrays())

    def load(self, path):
        self.load_state_dict(checkpoint.load(path))

    def fingerprint(self) -> str:
        """SHA-256 over the serialized parameters."""
        return hashlib.sha256(checkpoint.dumps(self.arrays())).hexdigest()
