"""Layered run configuration.

One JSON document drives a whole pipeline run. Values resolve in
precedence order: command-line overrides beat MEDREK_* environment
variables, which beat the config file, which beats built-in defaults.
A top-level seed fans out to every section that takes one unless that
section pins its own.

Environment keys map as MEDREK_<SECTION>_<FIELD>, e.g.
MEDREK_TRAIN_LR=0.001 or MEDREK_EVAL_BATCH_SIZES='[1,10]'. Values are
parsed as JSON when possible and kept as strings otherwise.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .dataset import SynthConfig
from .errors import IoError, ValidationError
from .evaluation import FluencyConfig
from .lm import LmConfig
from .system import SystemConfig
from .training import TrainConfig

SPLITS = ("all", "train", "valid", "test")


@dataclass
class PretrainConfig:
    epochs: int = 300
    lr: float = 4e-3
    batch_packs: int = 8
    seed: int = 0
    target_ce: float | None = None
    target_accuracy: float | None = None

    def validate(self) -> "PretrainConfig":
        if self.epochs <= 0 or self.lr <= 0 or self.batch_packs <= 0:
            raise ValidationError("pretrain config: epochs, lr and batch_packs must be positive")
        if self.seed < 0:
            raise ValidationError("pretrain config: seed must be non-negative")
        return self


@dataclass
class EvalConfig:
    split: str = "all"
    batch_sizes: tuple[int, ...] = (1, 10, 50, 100)
    fluency_tokens: int = 20
    fluency_scale: float = 1.0
    fluency_sign: float = 1.0
    weight_bigram: float = 1.0
    weight_trigram: float = 1.0
    overlap_threshold: float = 0.6

    def validate(self) -> "EvalConfig":
        if self.split not in SPLITS:
            raise ValidationError(f"eval config: split must be one of {SPLITS}")
        if not self.batch_sizes:
            raise ValidationError("eval config: batch_sizes is empty")
        if any(not isinstance(b, int) or b <= 0 for b in self.batch_sizes):
            raise ValidationError("eval config: batch sizes must be positive integers")
        if len(set(self.batch_sizes)) != len(self.batch_sizes):
            raise ValidationError("eval config: duplicate batch sizes")
        self.fluency()  # delegates the fluency field checks
        if not 0.0 < self.overlap_threshold < 1.0:
            raise ValidationError("eval config: overlap_threshold must lie in (0, 1)")
        return self

    def fluency(self) -> FluencyConfig:
        return FluencyConfig(
            weight_bigram=self.weight_bigram,
            weight_trigram=self.weight_trigram,
            scale=self.fluency_scale,
            sign=self.fluency_sign,
            tokens=self.fluency_tokens,
        )


@dataclass
class RunConfig:
    seed: int = 0
    data: SynthConfig = field(default_factory=SynthConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    system: SystemConfig = field(default_factory=SystemConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        if self.seed < 0:
            raise ValidationError("config: seed must be non-negative")
        for section in _SECTIONS:
            getattr(self, section).validate()
        return self


_SECTIONS = ("data", "lm", "pretrain", "system", "train", "eval")
_SEEDED_SECTIONS = ("data", "pretrain", "system", "train")

# Tuned desk-scale run: 50 synthetic records and a small language
# model pretrained on the matching corpus before editor training.
BUILTIN_CONFIGS: dict[str, dict] = {
    "desk50": {
        "seed": 0,
        "lm": {"d_lm": 64, "heads": 4},
        "pretrain": {"epochs": 300, "lr": 4e-3, "target_ce": 0.6, "target_accuracy": 0.9},
        "system": {"d_enc": 32, "d_rep": 64, "prompt_tokens": 3, "prototype_tokens": 10},
        "train": {"epochs": 200, "batch_size": 8, "lr": 1e-3, "clip_norm": 1.0},
        "eval": {"batch_sizes": [1, 10, 50]},
    },
}


def config_to_dict(cfg: RunConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["eval"]["batch_sizes"] = list(cfg.eval.batch_sizes)
    return out


def _section_types() -> dict[str, type]:
    return {f.name: f.default_factory for f in dataclasses.fields(RunConfig) if f.name != "seed"}


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ValidationError("config: top level must be an object")
    known = set(_SECTIONS) | {"seed"}
    for key in data:
        if key not in known:
            raise ValidationError(f"config: unknown section '{key}'")
    sections = {}
    for name, factory in _section_types().items():
        payload = data.get(name, {})
        if not isinstance(payload, dict):
            raise ValidationError(f"config: section '{name}' must be an object")
        defaults = factory()
        valid_fields = {f.name for f in dataclasses.fields(defaults)}
        for key, value in payload.items():
            if key not in valid_fields:
                raise ValidationError(f"config: unknown key '{name}.{key}'")
            if isinstance(value, list):
                value = tuple(value)
            setattr(defaults, key, value)
        sections[name] = defaults
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValidationError("config: seed must be an integer")
    return RunConfig(seed=seed, **sections).validate()


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _env_layer(env: dict) -> dict:
    layer: dict = {}
    for key, raw in sorted(env.items()):
        if not key.startswith("MEDREK_"):
            continue
        rest = key[len("MEDREK_"):].lower()
        if rest == "seed":
            layer["seed"] = _parse_value(raw)
            continue
        section, _, fieldname = rest.partition("_")
        if section not in _SECTIONS or not fieldname:
            raise ValidationError(f"config: unrecognized environment variable '{key}'")
        layer.setdefault(section, {})[fieldname] = _parse_value(raw)
    return layer


def _override_layer(overrides) -> dict:
    layer: dict = {}
    for item in overrides:
        path, sep, raw = item.partition("=")
        if not sep or not path:
            raise ValidationError(f"config: override '{item}' is not key=value")
        if path == "seed":
            layer["seed"] = _parse_value(raw)
            continue
        section, dot, fieldname = path.partition(".")
        if not dot or section not in _SECTIONS or not fieldname:
            raise ValidationError(f"config: override key '{path}' is not seed or section.field")
        layer.setdefault(section, {})[fieldname] = _parse_value(raw)
    return layer


def _merge(base: dict, extra: dict) -> None:
    for key, value in extra.items():
        if isinstance(value, dict):
            base.setdefault(key, {}).update(value)
        else:
            base[key] = value


def read_config_file(path: str) -> dict:
    if path in BUILTIN_CONFIGS:
        return json.loads(json.dumps(BUILTIN_CONFIGS[path]))
    if not os.path.isfile(path):
        raise IoError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return data


def load_config(path: str | None = None, env: dict | None = None, overrides=()) -> RunConfig:
    merged: dict = {}
    if path is not None:
        _merge(merged, read_config_file(path))
    _merge(merged, _env_layer(os.environ if env is None else env))
    _merge(merged, _override_layer(overrides))
    seed = merged.get("seed", 0)
    for section in _SEEDED_SECTIONS:
        merged.setdefault(section, {}).setdefault("seed", seed)
    return config_from_dict(merged)


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
