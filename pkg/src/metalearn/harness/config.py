"""Run configuration: nested dataclasses with a flat ``dotted.key=value`` text form."""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """Invalid configuration: unknown key, bad value or inconsistent settings."""


@dataclass
class DataSection:
    path: str | None = None
    text_dim: int = 256
    n_classes: int | None = None


@dataclass
class SynthSection:
    """Synthetic task used by ``synth-gen`` and by runs without ``data.path``."""

    n_groups: int = 5
    n_classes: int = 4
    dim: int = 32
    samples_per_class: int = 50
    drift: float = 1.0
    noise: float = 0.3
    seed: int = 0


@dataclass
class SplitSection:
    aux: tuple[str, ...] = ("g0", "g1", "g2")
    dev: str = "g3"
    target: tuple[str, ...] = ("g4",)
    src: str | None = None
    train_cap: int | None = 64
    pool_ratio: float = 0.5
    test_fraction: float = 0.5
    joint: bool = False


@dataclass
class EncoderSection:
    hidden_dims: tuple[int, ...] = (64,)
    output_dim: int = 32
    per_step_layer_norm: bool = True


@dataclass
class EpisodeSection:
    support_size: int = 16
    query_size: int = 16


@dataclass
class InnerSection:
    steps: int = 5
    lr: float | None = None              # per-algorithm default when unset
    head_multiplier: float | None = None  # per-algorithm default when unset
    lr_lr: float = 6e-5                   # outer rate for the learnable inner rates


@dataclass
class TrainSection:
    epochs: int = 100
    episodes_per_epoch: int = 100         # outer updates per epoch, each on meta_batch episodes
    meta_batch: int = 4
    outer_lr: float = 3e-5
    patience: int = 3
    early_stop_metric: str = "loss"
    baseline_epochs: int = 10
    baseline_lr: float | None = None      # defaults to outer_lr
    batch_size: int = 16
    grid_epochs: int = 10
    simpleshot: bool = True
    proto_centering: bool = False
    zero_shot_holdout: float = 0.2


@dataclass
class EvalSection:
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    test_finetune_steps: int = 5
    support_size: int = 16


ALGORITHM_NAMES = ("protonet", "maml", "fomaml", "reptile", "protomaml", "protomaml_n",
                   "fo_protomaml", "fo_protomaml_n")

# chosen values of the hyper-parameter search
INNER_LR_DEFAULT = {"reptile": 5e-5}
INNER_LR_FALLBACK = 1e-5
HEAD_MULTIPLIER_DEFAULT = {"reptile": 1.0}
HEAD_MULTIPLIER_FALLBACK = 10.0


@dataclass
class RunConfig:
    algorithm: str = "fo_protomaml_n"
    seed: int = 0
    threads: int = 1
    include_src: bool = False
    init_from_checkpoint: str | None = None
    data: DataSection = field(default_factory=DataSection)
    synth: SynthSection = field(default_factory=SynthSection)
    split: SplitSection = field(default_factory=SplitSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    episode: EpisodeSection = field(default_factory=EpisodeSection)
    inner: InnerSection = field(default_factory=InnerSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "RunConfig":
        if self.algorithm not in ALGORITHM_NAMES:
            raise ConfigError(f"algorithm: unknown value {self.algorithm!r}; "
                              f"choose from {', '.join(ALGORITHM_NAMES)}")
        checks = [
            ("train.meta_batch", self.train.meta_batch >= 1),
            ("train.patience", self.train.patience >= 1),
            ("train.epochs", self.train.epochs >= 1),
            ("train.episodes_per_epoch", self.train.episodes_per_epoch >= 1),
            ("train.batch_size", self.train.batch_size >= 1),
            ("inner.steps", self.inner.steps >= 0),
            ("eval.seeds", len(self.eval.seeds) >= 1),
            ("eval.test_finetune_steps", self.eval.test_finetune_steps >= 0),
            ("threads", self.threads >= 1),
            ("train.early_stop_metric", self.train.early_stop_metric in ("loss", "accuracy")),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"{key}: invalid value {get_key(self, key)!r}")
        if self.inner.steps == 0 and self.algorithm not in ("protonet",):
            raise ConfigError("inner.steps: optimization-based algorithms need at least one step")
        return self

    def resolved(self) -> "RunConfig":
        """Copy with every per-algorithm default filled in."""
        out = copy_config(self)
        if out.inner.lr is None:
            out.inner.lr = INNER_LR_DEFAULT.get(out.algorithm, INNER_LR_FALLBACK)
        if out.inner.head_multiplier is None:
            out.inner.head_multiplier = HEAD_MULTIPLIER_DEFAULT.get(out.algorithm,
                                                                    HEAD_MULTIPLIER_FALLBACK)
        return out.validate()


def copy_config(config: RunConfig) -> RunConfig:
    return from_flat(to_flat(config))


# -- flat key=value form --------------------------------------------------------

def _hints(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _is_section(tp) -> bool:
    return dataclasses.is_dataclass(tp)


def to_flat(config: RunConfig) -> dict[str, Any]:
    """Ordered ``dotted.key -> value`` mapping covering every field."""
    flat: dict[str, Any] = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if dataclasses.is_dataclass(value):
            for sub in dataclasses.fields(value):
                flat[f"{f.name}.{sub.name}"] = getattr(value, sub.name)
        else:
            flat[f.name] = value
    return flat


def _field_type(key: str):
    parts = key.split(".")
    hints = _hints(RunConfig)
    if parts[0] not in hints:
        raise ConfigError(f"unknown config key {key!r}")
    tp = hints[parts[0]]
    if _is_section(tp):
        if len(parts) != 2:
            raise ConfigError(f"unknown config key {key!r}")
        sub_hints = _hints(tp)
        if parts[1] not in sub_hints:
            raise ConfigError(f"unknown config key {key!r}")
        return sub_hints[parts[1]]
    if len(parts) != 1:
        raise ConfigError(f"unknown config key {key!r}")
    return tp


def _parse_scalar(text: str, tp, key: str):
    try:
        if tp is bool:
            low = text.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {tp.__name__}") from None
    raise ConfigError(f"{key}: unsupported type {tp}")


def parse_value(key: str, text: str):
    tp = _field_type(key)
    args = typing.get_args(tp)
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType) and type(None) in args:
        if text.strip().lower() in ("", "none", "null"):
            return None
        tp = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(tp), typing.get_args(tp)
    if origin is tuple:
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        return tuple(_parse_scalar(t, args[0], key) for t in items)
    return _parse_scalar(text, tp, key)


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def get_key(config: RunConfig, key: str):
    obj = config
    for part in key.split("."):
        obj = getattr(obj, part)
    return obj


def set_key(config: RunConfig, key: str, value) -> None:
    _field_type(key)
    parts = key.split(".")
    target = config
    for part in parts[:-1]:
        target = getattr(target, part)
    setattr(target, parts[-1], value)


def from_flat(flat: Mapping[str, Any]) -> RunConfig:
    config = RunConfig()
    for key, value in flat.items():
        set_key(config, key, value)
    return config


def apply_overrides(config: RunConfig, overrides: Mapping[str, str] | list[str]) -> RunConfig:
    """Apply ``key=value`` strings (or a mapping of them) on a copy of ``config``."""
    out = copy_config(config)
    items = overrides.items() if isinstance(overrides, Mapping) else (
        _split_assignment(o, f"override {o!r}") for o in overrides)
    for key, text in items:
        set_key(out, key, parse_value(key, text) if isinstance(text, str) else text)
    return out


def _split_assignment(line: str, where: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigError(f"{where}: expected key=value")
    key, value = line.split("=", 1)
    return key.strip(), value.strip()


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    config = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = _split_assignment(line, f"{source}:{lineno}")
        try:
            set_key(config, key, parse_value(key, value))
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return config


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def dump_config(config: RunConfig) -> str:
    return "".join(f"{k}={format_value(v)}\n" for k, v in to_flat(config).items())


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(config), encoding="utf-8")
