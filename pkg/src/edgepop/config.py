"""Run configuration: an INI file with fixed sections and keys.

Example::

    [run]
    algorithm = edge_popup
    seed = 0
    epochs = 100

    [model]
    arch = conv2
    k = 0.5
    init = signed_constant

    [optim]
    optimizer = sgd
    lr = 0.1

    [data]
    dataset = cifar10

Unknown sections or keys are rejected, which catches typos in sweeps.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

from edgepop.errors import ConfigError, ParameterError
from edgepop.init import KINDS, InitSpec
from edgepop.layers import ALGORITHM_MODES, ARCH_NAMES, ArchSpec
from edgepop.popup import ABS_MODES


@dataclass
class RunSection:
    algorithm: str = "edge_popup"
    seed: int = 0
    epochs: int = 100
    out: str = "runs/default"
    workers: int = 1
    dtype: str = "float32"


@dataclass
class ModelSection:
    arch: str = "conv2"
    width_multiplier: Fraction = Fraction(1)
    fc_widths: tuple[int, ...] | None = None
    k: float = 0.5
    init: str = "signed_constant"
    scaled: bool = False
    abs_mode: str = "rank"
    score_init: str = "kaiming_uniform"


@dataclass
class OptimSection:
    optimizer: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class DataSection:
    dataset: str = "cifar10"
    data_dir: str | None = None
    augment: bool = False
    classes: int = 10
    dim: int = 64
    per_class: int = 200
    spread: float = 1.0
    separation: float = 1.0
    data_seed: int = 0


@dataclass
class TrainConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    optim: OptimSection = field(default_factory=OptimSection)
    data: DataSection = field(default_factory=DataSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        r, m, o, d = self.run, self.model, self.optim, self.data
        _choice("run.algorithm", r.algorithm, tuple(ALGORITHM_MODES))
        _choice("run.dtype", r.dtype, ("float32", "float64"))
        _choice("model.arch", m.arch, ARCH_NAMES)
        _choice("model.init", m.init, KINDS)
        _choice("model.score_init", m.score_init, KINDS)
        _choice("model.abs_mode", m.abs_mode, ABS_MODES)
        _choice("optim.optimizer", o.optimizer, ("sgd", "adam"))
        _choice("optim.schedule", o.schedule, ("cosine", "constant"))
        _choice("data.dataset", d.dataset, ("cifar10", "blobs"))
        if d.augment and d.dataset != "cifar10":
            raise ConfigError("data.augment applies to image datasets only")
        if not 0 < m.k <= 1:
            raise ConfigError(f"model.k must lie in (0, 1], got {m.k}")
        if r.epochs < 1:
            raise ConfigError(f"run.epochs must be positive, got {r.epochs}")
        if o.batch_size < 1:
            raise ConfigError(f"optim.batch_size must be positive, got {o.batch_size}")
        if o.lr <= 0:
            raise ConfigError(f"optim.lr must be positive, got {o.lr}")
        if r.workers < 1:
            raise ConfigError(f"run.workers must be positive, got {r.workers}")
        try:
            self.arch_spec()
            self.init_spec()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    def arch_spec(self) -> ArchSpec:
        return ArchSpec(self.model.arch, self.model.width_multiplier, self.data.classes if self.data.dataset == "blobs" else 10, self.model.fc_widths)

    def init_spec(self) -> InitSpec:
        return InitSpec(self.model.init, self.model.scaled, self.model.k)

    def to_dict(self) -> dict:
        out = {}
        for section in fields(self):
            values = {}
            for f in fields(getattr(self, section.name)):
                v = getattr(getattr(self, section.name), f.name)
                values[f.name] = _format(v)
            out[section.name] = values
        return out

    def to_ini(self) -> str:
        lines = []
        for section, values in self.to_dict().items():
            lines.append(f"[{section}]")
            lines.extend(f"{key} = {value}" for key, value in values.items() if value != "")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def replace(self, **overrides) -> "TrainConfig":
        """Copy with dotted overrides, e.g. ``replace(**{"model.k": 0.3})``."""
        data = self.to_dict()
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if section not in data or key not in data[section]:
                raise ConfigError(f"unknown config key {dotted!r}")
            data[section][key] = _format(value)
        return from_mapping(data)


def _choice(name: str, value, allowed) -> None:
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {tuple(allowed)}, got {value!r}")


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse(raw: str, target_type, key: str):
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is Fraction:
            return Fraction(raw)
        if target_type == "widths":
            return tuple(int(x) for x in raw.split(",")) if raw else None
        if target_type == "optional_str":
            return raw or None
        return raw
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


_TYPES = {
    "str": str,
    "int": int,
    "float": float,
    "bool": bool,
    "Fraction": Fraction,
    "tuple[int, ...] | None": "widths",
    "str | None": "optional_str",
}

_SECTIONS = {"run": RunSection, "model": ModelSection, "optim": OptimSection, "data": DataSection}


def _parse_k(raw: str) -> float:
    """k may be written as a fraction (0.5) or a percentage (50 or 50%)."""
    text = raw.strip()
    pct = text.endswith("%")
    value = float(text.rstrip("%"))
    if pct or value > 1:
        value /= 100.0
    return value


def from_mapping(mapping: dict) -> TrainConfig:
    sections = {}
    for name, values in mapping.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        cls = _SECTIONS[name]
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {name}.{key}")
            if name == "model" and key == "k":
                try:
                    kwargs[key] = _parse_k(str(raw))
                except ValueError as exc:
                    raise ConfigError(f"bad value for model.k: {raw!r}") from exc
                continue
            kwargs[key] = _parse(str(raw), _TYPES[known[key].type], f"{name}.{key}")
        sections[name] = cls(**kwargs)
    return TrainConfig(**sections)


def load_config(path: str | Path, overrides: dict | None = None) -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        text = Path(path).read_text()
        parser.read_string(text, source=str(path))
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    mapping = {s: dict(parser.items(s)) for s in parser.sections()}
    cfg = from_mapping(mapping)
    return cfg.replace(**overrides) if overrides else cfg


def parse_config_text(text: str) -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return from_mapping({s: dict(parser.items(s)) for s in parser.sections()})


def default_blobs_config(**overrides) -> TrainConfig:
    """Desk-scale MLP on the 10-class blobs task.

    Spread 2 at separation 1 leaves the task hard enough that narrow or very
    sparse subnetworks fall visibly short of dense training.
    """
    cfg = TrainConfig(
        run=RunSection(epochs=50),
        model=ModelSection(arch="mlp", k=0.5, init="signed_constant"),
        optim=OptimSection(batch_size=128, lr=0.1),
        data=DataSection(dataset="blobs", spread=2.0),
    )
    return cfg.replace(**overrides) if overrides else cfg

