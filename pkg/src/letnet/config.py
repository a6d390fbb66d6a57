"""Run configuration files.

One assignment per line, ``section.key = value``; ``#`` starts a comment.
Sections are ``model``, ``train``, ``data`` and ``run``.  Tuples are
comma-separated, booleans are ``true``/``false`` and ``none`` clears an
optional value.  ``model.preset`` (an ablation row or ``tiny``) supplies
the base model fields that the other ``model.*`` lines override,
regardless of line order.  Example::

    model.preset = tiny
    model.num_classes = 3
    train.max_iterations = 2000
    data.kind = synthetic
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .model import ABLATIONS, TINY, ModelConfig, ablation_config, tiny_config
from .training import TrainConfig

PRESETS = ("tiny", *ABLATIONS)


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"
    root: str | None = None
    train_split: str = "train"
    val_split: str = "val"
    synthetic_seed: int = 0
    synthetic_size: tuple[int, int] = (64, 64)
    synthetic_density: float = 3.0
    synthetic_noise: float = 0.05
    train_count: int = 64
    val_count: int = 16
    mean: tuple[float, float, float] | None = None
    std: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "camvid"):
            raise ConfigError(f"data.kind must be synthetic or camvid, got {self.kind!r}")
        if self.kind == "camvid" and not self.root:
            raise ConfigError("data.root is required when data.kind = camvid")
        if self.train_count < 0 or self.val_count < 0:
            raise ConfigError("data.train_count and data.val_count must be >= 0")
        for name in ("mean", "std"):
            v = getattr(self, name)
            if v is not None and len(v) != 3:
                raise ConfigError(f"data.{name} needs three values, got {len(v)}")
        if self.std is not None and any(s <= 0 for s in self.std):
            raise ConfigError("data.std entries must be > 0")


@dataclass(frozen=True)
class RunOptions:
    seed: int = 0
    checkpoint: str = "letnet.ckpt"
    metrics: str = "metrics.csv"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=tiny_config)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunOptions = field(default_factory=RunOptions)
    preset: str = "tiny"


# -- value codecs ----------------------------------------------------------------

def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _tuple(item):
    def parse(text: str):
        parts = [p.strip() for p in text.split(",")]
        if any(not p for p in parts):
            raise ValueError(f"empty element in {text!r}")
        return tuple(item(p) for p in parts)
    return parse


def _optional(inner):
    def parse(text: str):
        return None if text.lower() == "none" else inner(text)
    return parse


def _str(text: str) -> str:
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


SCHEMA: dict[str, dict[str, object]] = {
    "model": {
        "num_classes": int,
        "channels": _tuple(int),
        "depths": _tuple(int),
        "dilations": _optional(_tuple(int)),
        "decoder_depths": _tuple(int),
        "transformer": _bool,
        "skips": _tuple(str),
        "pixel_attention": _bool,
        "heads": int,
        "segments": int,
        "mlp_ratio": int,
        "fe_reduction": int,
        "ca_kernel": int,
        "resolution": _tuple(int),
    },
    "train": {
        "batch_size": int,
        "max_iterations": int,
        "optimizer": _str,
        "momentum": float,
        "beta2": float,
        "eps": float,
        "weight_decay": float,
        "lr": float,
        "power": float,
        "class_weights": _optional(_tuple(float)),
        "ignore_index": int,
        "seed": int,
        "log_every": int,
        "flip": _bool,
        "crop": _optional(_tuple(int)),
    },
    "data": {
        "kind": _str,
        "root": _optional(_str),
        "train_split": _str,
        "val_split": _str,
        "synthetic_seed": int,
        "synthetic_size": _tuple(int),
        "synthetic_density": float,
        "synthetic_noise": float,
        "train_count": int,
        "val_count": int,
        "mean": _optional(_tuple(float)),
        "std": _optional(_tuple(float)),
    },
    "run": {"seed": int, "checkpoint": _str, "metrics": _str},
}


def _preset_model(name: str) -> ModelConfig:
    if name == "tiny":
        return tiny_config()
    return ablation_config(name)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- parsing ---------------------------------------------------------------------

def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse config text; every error names ``source:line:column``."""
    values: dict[str, dict[str, object]] = {s: {} for s in SCHEMA}
    where: dict[str, tuple[int, int]] = {}
    preset = "tiny"
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        col = len(body) - len(body.lstrip()) + 1
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}:{col}: expected 'section.key = value'")
        key_text, value_text = body.split("=", 1)
        key = key_text.strip()
        value_col = len(key_text) + 1 + (len(value_text) - len(value_text.lstrip())) + 1
        value = value_text.strip()
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}:{col}: key {key!r} must be 'section.key'")
        section, name = key.split(".", 1)
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}:{col}: unknown section {section!r} in key {key!r}")
        if key in where:
            raise ConfigError(f"{source}:{lineno}:{col}: duplicate key {key!r} (first set on line {where[key][0]})")
        where[key] = (lineno, col)
        if key == "model.preset":
            preset = _str(value)
            if preset not in PRESETS:
                raise ConfigError(
                    f"{source}:{lineno}:{value_col}: model.preset {preset!r} not one of {', '.join(PRESETS)}"
                )
            continue
        if name not in SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}:{col}: unknown key {key!r}")
        if not value:
            raise ConfigError(f"{source}:{lineno}:{value_col}: missing value for {key!r}")
        try:
            values[section][name] = SCHEMA[section][name](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}:{value_col}: bad value for {key!r}: {exc}") from None

    def build(section: str, factory):
        try:
            return factory(values[section])
        except ConfigError as exc:
            keys = [k for k in where if k.startswith(section + ".")]
            loc = f"{where[keys[0]][0]}:{where[keys[0]][1]}" if keys else "0:0"
            raise ConfigError(f"{source}:{loc}: {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"{source}: {exc}") from None

    base = _preset_model(preset)
    model = build("model", lambda v: replace(base, **v))
    train = build("train", lambda v: TrainConfig(**v))
    data = build("data", lambda v: DataConfig(**v))
    run = build("run", lambda v: RunOptions(**v))
    return RunConfig(model, train, data, run, preset)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text (byte {exc.start})") from None
    return parse_config(text, str(path))


def preset_config(name: str = "tiny") -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    return RunConfig(model=_preset_model(name), preset=name)


def dump_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(dump_config(c)) == c``."""
    lines = [f"model.preset = {cfg.preset}"]
    for section in SCHEMA:
        obj = getattr(cfg, section)
        for f in fields(obj):
            if f.name in SCHEMA[section]:
                lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


__all__ = [
    "DataConfig", "PRESETS", "RunConfig", "RunOptions", "TINY",
    "dump_config", "load_config", "parse_config", "preset_config",
]
