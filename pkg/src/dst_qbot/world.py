"""Desk-scale GuessWhich world: procedural images, closed grammar, rule-based ABot."""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

NOUNS = ("ball", "cat", "dog", "cup", "car", "tree", "bird", "chair", "book", "lamp", "boat", "hat")
COLORS = ("red", "blue", "green", "yellow", "black", "white", "pink", "brown")
SIZES = ("small", "medium", "large")
POSITIONS = ("top left", "top right", "bottom left", "bottom right")
COUNT_WORDS = ("one", "two", "three", "four")
CAPTION_COUNT = ("a", "two", "three", "four")
YES, NO, NONE, UNKNOWN = "yes", "no", "none", "unknown"

SPECIALS = ("[SOS]", "[EOS]", "[PAD]", "[SEP]", "[CLS]")
SOS, EOS, PAD, SEP, CLS = range(5)

ANSWER_SET = frozenset((YES, NO, NONE, UNKNOWN) + COLORS + SIZES + POSITIONS + COUNT_WORDS)


def plural(noun: str) -> str:
    return noun + "s"


def _vocabulary_words():
    words = ["a", "and", "is", "there", "what", "color", "the", "where", "how", "many", "size"]
    words += list(COUNT_WORDS[1:]) + ["one", YES, NO, NONE, UNKNOWN]
    words += ["top", "bottom", "left", "right"]
    words += list(SIZES) + list(COLORS) + list(NOUNS) + [plural(n) for n in NOUNS]
    seen, out = set(), []
    for w in words:
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


class Vocab:
    """Token <-> id table; ids 0-4 are the special tokens."""

    def __init__(self, tokens=None):
        self.tokens = list(tokens) if tokens is not None else list(SPECIALS) + _vocabulary_words()
        if tuple(self.tokens[:5]) != SPECIALS:
            raise ValueError("ids 0-4 must be the special tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        try:
            return [self.index[w] for w in text.split()]
        except KeyError as exc:
            raise ValueError(f"out-of-vocabulary word {exc.args[0]!r}") from None

    def decode(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids if i not in (SOS, EOS, PAD))

    def dump(self) -> str:
        return "\n".join(self.tokens) + "\n"

    @classmethod
    def load(cls, text: str) -> "Vocab":
        return cls([line for line in text.splitlines() if line])


@dataclass(frozen=True)
class SynthObject:
    noun: str
    color: str
    size: str
    count: int
    position: str

    def as_dict(self):
        return {"noun": self.noun, "color": self.color, "size": self.size,
                "count": self.count, "position": self.position}


@dataclass
class SynthImage:
    id: int
    objects: tuple
    feature: np.ndarray = field(repr=False)

    def find(self, noun):
        for obj in self.objects:
            if obj.noun == noun:
                return obj
        return None

    def attribute_key(self):
        return tuple(sorted((o.noun, o.color, o.size, o.count, o.position) for o in self.objects))


class AttributeEmbeddings:
    """Fixed seeded embedding per attribute value; an image feature is their sum.

    Caption-visible attributes (noun, count, first color) and hidden ones
    (position, size, other colors) get separate scales so that the caption
    alone leaves real uncertainty for the dialogue to resolve.
    """

    def __init__(self, seed: int, d_img: int, visible_scale=0.12, hidden_scale=0.3):
        self.visible_scale, self.hidden_scale = visible_scale, hidden_scale
        rng = np.random.default_rng([seed, 7919])
        unit = 1.0 / np.sqrt(d_img)
        self.tables = {
            "noun": rng.normal(0, visible_scale * unit, (len(NOUNS), d_img)),
            "count": rng.normal(0, visible_scale * unit, (len(COUNT_WORDS), d_img)),
            "color": rng.normal(0, hidden_scale * unit, (len(COLORS), d_img)),
            "size": rng.normal(0, hidden_scale * unit, (len(SIZES), d_img)),
            "position": rng.normal(0, hidden_scale * unit, (len(POSITIONS), d_img)),
        }

    def row(self, attr: str, value) -> np.ndarray:
        table = {"noun": NOUNS, "color": COLORS, "size": SIZES, "position": POSITIONS}
        idx = value - 1 if attr == "count" else table[attr].index(value)
        return self.tables[attr][idx]

    def feature(self, objects) -> np.ndarray:
        total = np.zeros(self.tables["noun"].shape[1])
        for obj in objects:
            for attr in ("noun", "color", "size", "count", "position"):
                total = total + self.row(attr, getattr(obj, attr))
        return total


class World:
    def __init__(self, images, d_img, seed, embeddings=None):
        self.images = list(images)
        self.d_img = d_img
        self.seed = seed
        self.embeddings = embeddings or AttributeEmbeddings(seed, d_img)
        self._features = np.stack([im.feature for im in self.images]) if self.images else np.zeros((0, d_img))

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i) -> SynthImage:
        return self.images[i]

    @property
    def features(self) -> np.ndarray:
        return self._features

    # -- persistence -------------------------------------------------
    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "d_img": self.d_img,
            "visible_scale": self.embeddings.visible_scale,
            "hidden_scale": self.embeddings.hidden_scale,
            "images": [
                {
                    "id": im.id,
                    "objects": [o.as_dict() for o in im.objects],
                    "feature": base64.b64encode(im.feature.astype("<f8").tobytes()).decode("ascii"),
                }
                for im in self.images
            ],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "World":
        doc = json.loads(text)
        images = []
        for rec in doc["images"]:
            objs = tuple(SynthObject(**o) for o in rec["objects"])
            feat = np.frombuffer(base64.b64decode(rec["feature"]), dtype="<f8").astype(np.float64)
            images.append(SynthImage(rec["id"], objs, feat))
        emb = AttributeEmbeddings(doc["seed"], doc["d_img"], doc["visible_scale"], doc["hidden_scale"])
        return cls(images, doc["d_img"], doc["seed"], emb)


def _max_distinct(max_objects=4):
    from math import comb
    per_obj = len(COLORS) * len(SIZES) * len(COUNT_WORDS) * len(POSITIONS)
    return sum(comb(len(NOUNS), n) * per_obj**n for n in range(1, max_objects + 1))


def generate_world(seed: int, num_images: int, d_img: int = 32, max_objects: int = 4,
                   visible_scale=0.12, hidden_scale=0.3) -> World:
    """Deterministic image set with pairwise-distinct attribute sets."""
    if num_images < 2:
        raise ValueError("num_images must be >= 2")
    if not 1 <= max_objects <= 4:
        raise ValueError("max_objects must be in 1..4")
    if num_images > _max_distinct(max_objects):
        raise ValueError("more images requested than distinct attribute combinations exist")
    rng = np.random.default_rng(seed)
    emb = AttributeEmbeddings(seed, d_img, visible_scale, hidden_scale)
    seen = set()
    images = []
    while len(images) < num_images:
        n_obj = int(rng.integers(1, max_objects + 1))
        # objects listed in vocabulary order, so the caption order is canonical
        nouns = np.sort(rng.choice(len(NOUNS), size=n_obj, replace=False))
        objs = tuple(
            SynthObject(
                noun=NOUNS[int(n)],
                color=COLORS[int(rng.integers(len(COLORS)))],
                size=SIZES[int(rng.integers(len(SIZES)))],
                count=int(rng.integers(1, 5)),
                position=POSITIONS[int(rng.integers(len(POSITIONS)))],
            )
            for n in nouns
        )
        key = tuple(sorted((o.noun, o.color, o.size, o.count, o.position) for o in objs))
        if key in seen:
            continue
        seen.add(key)
        images.append(SynthImage(len(images), objs, emb.feature(objs)))
    return World(images, d_img, seed, emb)


# ----------------------------------------------------------------------
# language
# ----------------------------------------------------------------------
def render_caption(image: SynthImage) -> str:
    """Count, color and noun of the first object; count and noun of the rest."""
    parts = []
    for i, obj in enumerate(image.objects):
        noun = obj.noun if obj.count == 1 else plural(obj.noun)
        words = [CAPTION_COUNT[obj.count - 1]]
        if i == 0:
            words.append(obj.color)
        words.append(noun)
        parts.append(" ".join(words))
    return " and ".join(parts)


def _singular(word):
    if word in NOUNS:
        return word
    if word.endswith("s") and word[:-1] in NOUNS:
        return word[:-1]
    return None


def parse_question(text: str):
    """Return ``(form, noun, attr)`` for a grammar question, else ``None``."""
    w = text.split()
    if len(w) == 5 and w[:3] == ["is", "there", "a"] and w[4] in NOUNS and (w[3] in COLORS or w[3] in SIZES):
        return ("exists", w[4], w[3])
    if len(w) == 5 and w[:4] == ["what", "color", "is", "the"] and w[4] in NOUNS:
        return ("color", w[4], None)
    if len(w) == 4 and w[:3] == ["where", "is", "the"] and w[3] in NOUNS:
        return ("where", w[3], None)
    if len(w) == 3 and w[:2] == ["how", "many"] and _singular(w[2]) and w[2] != _singular(w[2]):
        return ("count", _singular(w[2]), None)
    if len(w) == 5 and w[:4] == ["what", "size", "is", "the"] and w[4] in NOUNS:
        return ("size", w[4], None)
    return None


def abot_answer(question: str, image: SynthImage) -> str:
    """Truthful answer from the attribute table; ``unknown`` when unparseable or inapplicable."""
    parsed = parse_question(question)
    if parsed is None:
        return UNKNOWN
    form, noun, attr = parsed
    obj = image.find(noun)
    if form == "exists":
        return YES if obj is not None and attr in (obj.color, obj.size) else NO
    if form == "count":
        return NONE if obj is None else COUNT_WORDS[obj.count - 1]
    if obj is None:
        return UNKNOWN
    if form == "color":
        return obj.color
    if form == "where":
        return obj.position
    return obj.size


def oracle_questions(image: SynthImage, caption: str | None = None, rounds: int = 10) -> list[str]:
    """Gold questions: one per attribute the caption hides, then absent-noun counts.

    The first object's color is in the caption; every object's position and
    size, and the other objects' colors, are hidden.  Lists shorter than
    ``rounds`` are padded with ``how many <nouns>`` for absent nouns.
    """
    caption = caption if caption is not None else render_caption(image)
    out = []
    for i, obj in enumerate(image.objects):
        # the caption template names a color for the first object only
        color_shown = i == 0 and f"{obj.color} {obj.noun}" in caption
        if not color_shown:
            out.append(f"what color is the {obj.noun}")
        out.append(f"where is the {obj.noun}")
        out.append(f"what size is the {obj.noun}")
    present = {o.noun for o in image.objects}
    for noun in NOUNS:
        if len(out) >= rounds:
            break
        if noun not in present:
            out.append(f"how many {plural(noun)}")
    return out[:rounds]


# ----------------------------------------------------------------------
# episodes
# ----------------------------------------------------------------------
@dataclass
class Episode:
    id: int
    target: int
    pool: list
    caption: str
    questions: list
    answers: list
    rounds: int = 10

    def __post_init__(self):
        if self.target not in self.pool:
            raise ValueError("target must be in the pool")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    @property
    def target_index(self):
        return self.pool.index(self.target)

    def to_json(self):
        return json.dumps({
            "id": self.id, "target": self.target, "pool": self.pool, "caption": self.caption,
            "questions": self.questions, "answers": self.answers, "rounds": self.rounds,
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


def make_episodes(world: World, seed: int, pool_size: int, rounds: int = 10, num_episodes=None):
    """One episode per target image (shuffled); distractors drawn from the whole world."""
    if pool_size < 2:
        raise ValueError("pool size must be >= 2")
    if pool_size > len(world):
        raise ValueError("pool size exceeds number of images")
    rng = np.random.default_rng([seed, 104729])
    n = num_episodes or len(world)
    targets = rng.permutation(len(world))
    if n > len(world):
        targets = np.concatenate([targets, rng.integers(0, len(world), n - len(world))])
    episodes = []
    for eid, target in enumerate(targets[:n]):
        target = int(target)
        others = rng.choice(len(world) - 1, size=pool_size - 1, replace=False)
        others = [int(o) + int(o >= target) for o in others]
        pool = sorted(others + [target])
        image = world[target]
        caption = render_caption(image)
        qs = oracle_questions(image, caption, rounds)
        answers = [abot_answer(q, image) for q in qs]
        episodes.append(Episode(eid, target, pool, caption, qs, answers, rounds))
    return episodes


def split_episodes(episodes, fractions=(0.8, 0.1, 0.1)):
    n = len(episodes)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return episodes[:n_train], episodes[n_train:n_train + n_val], episodes[n_train + n_val:]


def consistent(image: SynthImage, caption: str, qa_pairs) -> bool:
    """Would ``image`` produce exactly this caption and these answers?"""
    if render_caption(image) != caption:
        return False
    return all(abot_answer(q, image) == a for q, a in qa_pairs)
