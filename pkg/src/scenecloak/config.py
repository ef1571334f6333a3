"""Run configuration: a YAML tree parsed strictly into dataclasses."""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .core import ConfigError, DataError
from .engines import Method, MethodConfig, TiltShiftConfig
from .maps import SobelConfig


@dataclass
class AdapterSpec:
    name: str
    weights: str | None = None
    device: str = "cpu"
    options: dict = field(default_factory=dict)


@dataclass
class AdapterSet:
    attack: AdapterSpec = field(default_factory=lambda: AdapterSpec("tiny_conv"))
    saliency: AdapterSpec | None = field(default_factory=lambda: AdapterSpec("spectral_residual"))
    aesthetics: AdapterSpec | None = field(default_factory=lambda: AdapterSpec("neg_total_variation"))


@dataclass
class SyntheticSpec:
    n_per_class: int = 25
    size: int = 32
    seed: int | None = None


@dataclass
class DatasetSpec:
    """Exactly one of ``path`` (class-per-directory), ``manifest`` (CSV) or ``synthetic``."""

    path: str | None = None
    manifest: str | None = None
    class_map: str | None = None
    synthetic: SyntheticSpec | None = None

    def __post_init__(self):
        given = [k for k in ("path", "manifest", "synthetic") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ConfigError(f"dataset needs exactly one of path, manifest, synthetic; got {given or 'none'}")

    def validate_paths(self):
        for key in ("path", "manifest", "class_map"):
            value = getattr(self, key)
            if value is not None and not Path(value).exists():
                raise DataError(f"dataset.{key} does not exist: {value}")


@dataclass
class ProbeSpec:
    epsilon: float = 0.15
    n: int = 100


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    side: int | None = 256
    filter_correct: bool = True
    save_images: bool = True
    methods: list = field(default_factory=lambda: [m.value for m in Method])
    epsilons: list = field(default_factory=lambda: [0.0, 0.01, 0.05])
    dataset: DatasetSpec = field(default_factory=lambda: DatasetSpec(synthetic=SyntheticSpec()))
    adapters: AdapterSet = field(default_factory=AdapterSet)
    sobel: SobelConfig = field(default_factory=SobelConfig)
    tilt_shift: TiltShiftConfig = field(default_factory=TiltShiftConfig)
    scaling_mode: str = "range01"
    tiltshift_order: str = "perturb_then_filter"
    probe: ProbeSpec = field(default_factory=ProbeSpec)

    def __post_init__(self):
        for m in self.methods:
            Method.parse(m)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.side is not None and self.side < 3:
            raise ConfigError("side must be >= 3")
        self.method_config  # validates scaling_mode and tiltshift_order

    @property
    def method_config(self):
        return MethodConfig(self.sobel, self.tilt_shift, self.scaling_mode, self.tiltshift_order)


def _strip_optional(tp):
    if isinstance(tp, types.UnionType) or typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def from_dict(cls, data, where="config"):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        tp = _strip_optional(hints[key])
        if dataclasses.is_dataclass(tp) and value is not None:
            value = from_dict(tp, value, f"{where}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def to_dict(cfg):
    return dataclasses.asdict(cfg)


def load_config(path=None, overrides=None):
    """Read a YAML config file (optional) and apply dotted-key overrides on top."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return from_dict(RunConfig, data)


def dump_config(cfg, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)
