"""Versioned experiment configuration, loaded from YAML and validated strictly.

Unknown keys anywhere are rejected. See README for the full schema.
"""
from __future__ import annotations

import copy
import types
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import yaml

from .errors import ConfigError, ZiraError
from .taskgen import SHOTS, ImageSpec
from .toymodel import ModelDims, PretrainConfig
from .trainer import METHODS, TrainConfig, method_config
from .zil import ZilConfig

SCHEMA_VERSION = 1


@dataclass
class ModelSection:
    in_channels: int = 3
    channels: int = 8
    image_size: int = 8
    embed_dim: int = 16
    n_general: int = 10
    pool: int = 2
    temperature: float = 3.0
    ptb_gain: float = 0.3
    s_init_language: float = 1.0
    s_init_vision: float = 0.1


@dataclass
class TasksSection:
    n_tasks: int = 5
    classes_per_task: int = 5
    shots: str = "full"
    shift_strength: float = 1.0
    center_jitter: float = 0.3
    scale_jitter: float = 0.1
    pixel_noise: float = 0.05


@dataclass
class TrainSection:
    method: str = "zira"
    lr_hlrb: float = 1e-3
    eta: float = 0.2
    lr_decay_factor: float = 0.1
    epochs: int = 2
    batch_size: int = 2
    weight_decay: float = 1e-4
    carry_s: bool = False
    full_finetune_lr: float = 1e-4


@dataclass
class ZilSection:
    lam: float = 0.1
    norm_kind: str = "l1_mean"


@dataclass
class GridSection:
    axes: dict[str, list] = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    version: int = SCHEMA_VERSION
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = "runs"
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    tasks: TasksSection = field(default_factory=TasksSection)
    train: TrainSection = field(default_factory=TrainSection)
    zil: ZilSection = field(default_factory=ZilSection)
    grid: GridSection | None = None

    # ------------------------------------------------------------ derived objects

    def model_dims(self) -> ModelDims:
        n_total = self.model.n_general + self.tasks.n_tasks * self.tasks.classes_per_task
        return ModelDims(n_classes_total=n_total, **asdict(self.model))

    def image_spec(self) -> ImageSpec:
        t = self.tasks
        return ImageSpec(self.model.in_channels, self.model.image_size, t.center_jitter, t.scale_jitter, t.pixel_noise)

    def train_config(self, method: str | None = None) -> TrainConfig:
        t = asdict(self.train)
        name = method or t.pop("method")
        t.pop("method", None)
        base = TrainConfig(zil=ZilConfig(self.zil.lam, self.zil.norm_kind), **t)
        return method_config(base, name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["zil"]["lambda"] = d["zil"].pop("lam")
        return d

    def with_override(self, axis: str, value) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        section, key = AXES.get(axis, (None, None))
        if section is None:
            raise ConfigError(f"unknown grid axis {axis!r}; choose from {sorted(AXES)}")
        setattr(getattr(out, section), key, value)
        validate(out)
        return out


# grid axis name -> (section, field)
AXES = {
    "lambda": ("zil", "lam"),
    "norm_kind": ("zil", "norm_kind"),
    "method": ("train", "method"),
    "eta": ("train", "eta"),
    "carry_s": ("train", "carry_s"),
    "s_init_language": ("model", "s_init_language"),
    "s_init_vision": ("model", "s_init_vision"),
    "shots": ("tasks", "shots"),
    "shift_strength": ("tasks", "shift_strength"),
}

_RENAMES = {ZilSection: {"lambda": "lam"}}


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if is_dataclass(tp):
        return _build(tp, value, where)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        (inner,) = typing.get_args(tp) or (typing.Any,)
        return [_coerce(inner, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return {str(k): v for k, v in value.items()}
    if origin is tuple:
        return tuple(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, (str, int)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a string")
        return str(value)
    return value


def _build(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    renames = _RENAMES.get(cls, {})
    data = {renames.get(k, k): v for k, v in data.items()}
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}" if where else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ZiraError as e:
        raise ConfigError(f"{where or 'config'}: {e}") from e


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {cfg.version} (expected {SCHEMA_VERSION})")
    if not cfg.seeds:
        raise ConfigError("seeds must list at least one seed")
    if str(cfg.tasks.shots) not in SHOTS:
        raise ConfigError(f"tasks.shots must be one of {sorted(SHOTS)}")
    if cfg.train.method not in METHODS:
        raise ConfigError(f"train.method must be one of {sorted(METHODS)}")
    if cfg.grid is not None:
        for axis, values in cfg.grid.axes.items():
            if axis not in AXES:
                raise ConfigError(f"grid.axes: unknown axis {axis!r}")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid.axes.{axis}: expected a non-empty list")
    try:
        cfg.model_dims()
        cfg.train_config()
    except ZiraError as e:
        raise ConfigError(str(e)) from e
    return cfg


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict) or "version" not in data:
        raise ConfigError("config must be a mapping with a 'version' field")
    return validate(_build(ExperimentConfig, data, ""))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    return from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def default_config(**overrides) -> ExperimentConfig:
    return validate(replace(ExperimentConfig(), **overrides))
