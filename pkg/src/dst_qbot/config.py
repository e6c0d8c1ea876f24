"""Run configuration: dataclass defaults, JSON overrides, schema validation."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

import jsonschema

DESK_SCALE_MAX_IMAGES = 20_000


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d: int = 64
    d_img: int = 32
    layers: int = 2
    heads: int = 2
    d_ff: int = 128
    dropout: float = 0.1
    max_question_len: int = 8
    max_answer_len: int = 16
    gumbel_tau: float = 1.0
    gumbel_tau_final: float | None = None   # set to anneal linearly over training


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 30
    lr: float = 1e-3
    final_lr: float = 1e-5
    patience: int = 10
    clip_norm: float | None = 5.0
    ablate: str | None = None               # "mse" or "pl": drop that loss term
    literal_loss_signs: bool = False
    pl_detach_previous: bool = True         # False: differentiate through both rounds of each PL term


@dataclass
class WorldConfig:
    num_images: int = 4096
    pool_size: int = 100
    rounds: int = 10
    max_objects: int = 4
    visible_scale: float = 0.12
    hidden_scale: float = 0.3
    num_episodes: int | None = None
    splits: list = field(default_factory=lambda: [0.8, 0.1, 0.1])


@dataclass
class PathsConfig:
    data: str | None = None
    out: str | None = None


@dataclass
class Config:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def max_rows(self):
        return self.world.rounds + 1


_POS_INT = {"type": "integer", "minimum": 1}
_OPT_NUM = {"type": ["number", "null"], "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": _POS_INT, "d_img": _POS_INT, "layers": _POS_INT, "heads": _POS_INT, "d_ff": _POS_INT,
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "max_question_len": _POS_INT, "max_answer_len": _POS_INT,
                "gumbel_tau": {"type": "number", "exclusiveMinimum": 0},
                "gumbel_tau_final": _OPT_NUM,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch_size": _POS_INT, "epochs": _POS_INT, "patience": _POS_INT,
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "final_lr": {"type": "number", "minimum": 0},
                "clip_norm": _OPT_NUM,
                "ablate": {"enum": [None, "mse", "pl"]},
                "literal_loss_signs": {"type": "boolean"},
                "pl_detach_previous": {"type": "boolean"},
            },
        },
        "world": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_images": {"type": "integer", "minimum": 2},
                "pool_size": {"type": "integer", "minimum": 2},
                "rounds": _POS_INT,
                "max_objects": {"type": "integer", "minimum": 1, "maximum": 4},
                "visible_scale": {"type": "number", "minimum": 0},
                "hidden_scale": {"type": "number", "minimum": 0},
                "num_episodes": {"type": ["integer", "null"], "minimum": 3},
                "splits": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3},
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"data": {"type": ["string", "null"]}, "out": {"type": ["string", "null"]}},
        },
    },
}


def _build(cls, values: dict):
    kwargs = {}
    for f in fields(cls):
        if f.name in values:
            v = values[f.name]
            sub = {"model": ModelConfig, "train": TrainConfig, "world": WorldConfig, "paths": PathsConfig}
            kwargs[f.name] = _build(sub[f.name], v) if cls is Config and f.name in sub else v
    return cls(**kwargs)


def validate(raw: dict) -> list[str]:
    """Raise :class:`ConfigError` on schema or semantic errors; return warnings."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    cfg = _build(Config, raw)
    if cfg.model.d % cfg.model.heads:
        raise ConfigError("config error at model/d: must be divisible by model/heads")
    if cfg.world.pool_size > cfg.world.num_images:
        raise ConfigError("config error at world/pool_size: larger than world/num_images")
    if abs(sum(cfg.world.splits) - 1.0) > 1e-9:
        raise ConfigError("config error at world/splits: fractions must sum to 1")
    warnings = []
    if cfg.world.num_images > DESK_SCALE_MAX_IMAGES:
        warnings.append(
            f"num_images={cfg.world.num_images} is beyond desk scale (> {DESK_SCALE_MAX_IMAGES}); "
            "generation and training will be slow"
        )
    return warnings


def load_config(path=None, overrides: dict | None = None) -> tuple[Config, list[str]]:
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config error at <root>: must be a JSON object")
    if overrides:
        raw = _merge(raw, overrides)
    env_seed = os.environ.get("DST_SEED")
    if env_seed is not None:
        try:
            raw = _merge(raw, {"seed": int(env_seed)})
        except ValueError:
            raise ConfigError(f"DST_SEED must be an integer, got {env_seed!r}") from None
    warnings = validate(raw)
    return _build(Config, raw), warnings


def config_from_dict(raw: dict) -> Config:
    validate(raw)
    return _build(Config, raw)


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out
