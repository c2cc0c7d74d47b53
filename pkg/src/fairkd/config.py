"""Run configuration: one JSON document wiring every pipeline stage together.

A RunConfig nests the per-module configs (universe, training, loss, encoder
specs, evaluation, output paths). Loading is strict: unknown keys and
ill-typed values raise ConfigError naming the offending key, so a typo in a
sweep script fails before any artifact is written.

Command-line overrides use dotted keys ("train.epochs=3"); values are parsed
as JSON where possible and fall back to plain strings. The digest of the
fully resolved config is stamped into every output artifact.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

from .errors import ConfigError
from .formats import canonical_json, read_text
from .losses import LossConfig, MarginConfig
from .synthdata import UniverseConfig
from .training import EncoderSpec, TrainConfig

CONFIG_DIR_ENV = "FAIRKD_CONFIG_DIR"


@dataclass
class EvalConfig:
    """Verification protocol size and cross-validation depth."""

    k: int = 10
    pairs_per_group: int = 60

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.pairs_per_group < 2:
            raise ValueError("pairs_per_group must be >= 2")


@dataclass
class PathsConfig:
    """Output directories; commands create them on demand."""

    manifests: str = "runs/manifests"
    checkpoints: str = "runs/checkpoints"
    reports: str = "runs/reports"


@dataclass
class RunConfig:
    universe: UniverseConfig = field(default_factory=UniverseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    teacher: EncoderSpec = field(default_factory=lambda: EncoderSpec(
        input_dim=16, hidden_widths=(64, 48), embedding_dim=12, init_seed=1))
    student: EncoderSpec = field(default_factory=lambda: EncoderSpec(
        input_dim=16, hidden_widths=(24,), embedding_dim=12, init_seed=2))
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    def validate(self) -> None:
        """Cross-field consistency; single-field checks live in each config."""
        feat = self.universe.feature_dim
        for label, spec in (("teacher", self.teacher), ("student", self.student)):
            if spec.input_dim != feat:
                raise ConfigError(
                    f"{label}.input_dim is {spec.input_dim} but "
                    f"universe.feature_dim is {feat}")
        if self.teacher.embedding_dim != self.student.embedding_dim:
            raise ConfigError(
                f"student.embedding_dim is {self.student.embedding_dim} but "
                f"teacher.embedding_dim is {self.teacher.embedding_dim}")


_SECTION_TYPES = {
    "universe": UniverseConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "margin": MarginConfig,
    "teacher": EncoderSpec,
    "student": EncoderSpec,
    "eval": EvalConfig,
    "paths": PathsConfig,
}


def _to_jsonable(value):
    if is_dataclass(value) and not isinstance(value, type):
        return {f.name: _to_jsonable(getattr(value, f.name))
                for f in fields(value)}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    return value


def to_dict(cfg: RunConfig) -> dict:
    return _to_jsonable(cfg)


def config_digest(cfg: RunConfig) -> str:
    """Short stable digest of the fully resolved config."""
    payload = canonical_json(to_dict(cfg)).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:12]


def _build_section(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    valid = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise ConfigError(f"unknown config key {path}.{unknown[0]}")
    kwargs = {}
    for key, value in data.items():
        child = f"{path}.{key}"
        if key in _SECTION_TYPES and isinstance(value, dict):
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, child)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, ConfigError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    cfg = _build_section(RunConfig, data, "config")
    cfg.validate()
    return cfg


def _set_dotted(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = doc
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through scalar key {part!r}")
    node[parts[-1]] = value


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply "dotted.key=value" strings onto a raw config document."""
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_dotted(doc, key.strip(), value)
    return doc


def resolve_config_path(name: str) -> Path:
    """Literal path, or a file under $FAIRKD_CONFIG_DIR as a fallback."""
    direct = Path(name)
    if direct.exists():
        return direct
    config_dir = os.environ.get(CONFIG_DIR_ENV)
    if config_dir:
        for candidate in (Path(config_dir) / name,
                          Path(config_dir) / f"{name}.json"):
            if candidate.exists():
                return candidate
    raise ConfigError(f"config file not found: {name}")


def load_config(source: str | None = None, overrides=()) -> RunConfig:
    """RunConfig from a JSON file (or defaults) plus dotted overrides."""
    if source is None:
        doc = {}
    else:
        path = resolve_config_path(source)
        try:
            doc = json.loads(read_text(path))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    apply_overrides(doc, overrides)
    return from_dict(doc)
