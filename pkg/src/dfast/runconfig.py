"""Flat ``section.key=value`` run configuration merging model, training and data options.

Example file::

    # comments and blank lines are ignored
    model.k = 16
    model.modules = mva,dca,ltsa
    train.epochs = 20
    data.split = kfold:5

Unknown keys, duplicate keys and values that do not parse as the field's
type are rejected before anything runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Tuple, Union

from .config import ConfigError, ModelConfig
from .data import parse_strategy
from .training import TrainConfig


@dataclass(frozen=True)
class DataOptions:
    path: Optional[str] = None
    format: Optional[str] = None
    split: str = "kfold:5"
    split_seed: int = 0

    def __post_init__(self):
        try:
            parse_strategy(self.split)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.format not in (None, "dfst-bin", "csv"):
            raise ConfigError(f"data.format must be dfst-bin or csv, got {self.format!r}")


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataOptions}


def _coerce(raw: str, default, key: str):
    """Parse ``raw`` into the type of the field's default value."""
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(part.strip() for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    if default is None and raw.lower() in ("", "none", "null"):
        return None
    return raw


def _render(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataOptions = field(default_factory=DataOptions)

    def with_overrides(self, overrides: Union[Mapping[str, str], Iterable[Tuple[str, str]]]) -> "RunConfig":
        """Apply dotted-key string overrides, validating the merged result."""
        items = overrides.items() if isinstance(overrides, Mapping) else overrides
        changes: Dict[str, Dict[str, object]] = {name: {} for name in SECTIONS}
        for key, raw in items:
            section, _, name = key.partition(".")
            if section not in SECTIONS or not name:
                raise ConfigError(f"unknown config key {key!r} (expected model.*, train.* or data.*)")
            current = getattr(self, section)
            known = {f.name for f in fields(current)}
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[section][name] = _coerce(str(raw), getattr(current, name), key)
        try:
            return RunConfig(**{s: replace(getattr(self, s), **changes[s]) for s in SECTIONS})
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        pairs, seen = [], set()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            if key in seen:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            seen.add(key)
            pairs.append((key, value))
        return cls().with_overrides(pairs)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        return cls.parse(Path(path).read_text())

    def to_text(self) -> str:
        """Every effective value, one per line; parsing this text reproduces the config."""
        lines = []
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                lines.append(f"{section}.{f.name}={_render(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"
