"""Experiment configuration: YAML files, dotted overrides, validation, hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .attack import AttackConfig
from .errors import ConfigError
from .fedsim import FedConfig
from .graph import DEFAULT_CLASS_SPEC, MUTAG_LIKE_SPEC

SYNTHETIC_SPECS = {"default": DEFAULT_CLASS_SPEC, "mutag-like": MUTAG_LIKE_SPEC}


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"        # synthetic | tu | graphs
    path: str = ""
    synthetic: str = "mutag-like"    # key of SYNTHETIC_SPECS
    count: int = 600
    generator_seed: int = 0
    test_fraction: float = 0.2
    degree_cap: int = 50


@dataclass(frozen=True)
class DefenseConfig:
    T: int = 30
    T_grid: tuple = (10, 30, 50)
    aug_T_set: tuple = ()
    finetune_rounds: int = 200
    successful_only: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    output_dir: str = "runs"
    eval_every: int = 0
    seed: int = 0

    @property
    def attack(self):
        return self.fed.attack

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self, num_classes=None):
        """Every problem found, as a list of messages."""
        errors = list(self.fed.validate(num_classes))
        d = self.dataset
        if d.source not in ("synthetic", "tu", "graphs"):
            errors.append(f"dataset.source must be synthetic, tu or graphs, got {d.source!r}")
        if d.source == "synthetic" and d.synthetic not in SYNTHETIC_SPECS:
            errors.append(f"dataset.synthetic must be one of {sorted(SYNTHETIC_SPECS)}, got {d.synthetic!r}")
        if d.source != "synthetic" and not d.path:
            errors.append(f"dataset.path is required for source {d.source!r}")
        if d.source == "synthetic" and d.count < 4:
            errors.append(f"dataset.count must be >= 4, got {d.count}")
        if not 0 < d.test_fraction < 1:
            errors.append(f"dataset.test_fraction must lie in (0, 1), got {d.test_fraction}")
        df = self.defense
        for T in (df.T, *df.T_grid, *df.aug_T_set):
            if int(T) < 1:
                errors.append(f"defense T values must be >= 1, got {T}")
        if df.finetune_rounds < 0:
            errors.append(f"defense.finetune_rounds must be >= 0, got {df.finetune_rounds}")
        if self.fed.seed != self.seed:
            errors.append(f"fed.seed={self.fed.seed} disagrees with seed={self.seed}")
        return errors

    def class_spec(self):
        return SYNTHETIC_SPECS[self.dataset.synthetic]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data, prefix):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) under {prefix or 'top level'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name not in _NESTED.get(cls, {}) else None
        if name in _NESTED.get(cls, {}):
            kwargs[name] = _build(_NESTED[cls][name], value, f"{prefix}{name}.")
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value) if isinstance(value, (list, tuple)) else (value,)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_NESTED = {
    ExperimentConfig: {"dataset": DatasetConfig, "fed": FedConfig, "defense": DefenseConfig},
    FedConfig: {"attack": AttackConfig},
}


def from_dict(data):
    data = dict(data or {})
    # the top-level seed and fed.seed mirror each other when only one is set
    fed = dict(data.get("fed") or {})
    if "seed" in data:
        fed.setdefault("seed", data["seed"])
    elif "seed" in fed:
        data["seed"] = fed["seed"]
    if fed:
        data["fed"] = fed
    try:
        return _build(ExperimentConfig, data, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(data, overrides):
    """Apply ``key.path=value`` strings (values parsed as YAML scalars)."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides=()):
    data = {}
    if path:
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(apply_overrides(data, overrides))


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def check_fairness_pair(gcba, gdba):
    """Messages for a violated equal-total-edges constraint between two attack configs."""
    lhs, rhs = gcba.rho * gcba.e_tri, gdba.rho * gdba.e_tri
    if abs(lhs - rhs) > 1e-9:
        return [f"fairness: rho_c*e_tri_c = {lhs:g} differs from rho_d*e_tri_d = {rhs:g}"]
    return []


def validate_or_raise(cfg, num_classes=None):
    errors = cfg.validate(num_classes)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


__all__ = [
    "DatasetConfig",
    "DefenseConfig",
    "ExperimentConfig",
    "apply_overrides",
    "check_fairness_pair",
    "dump_config",
    "from_dict",
    "load_config",
    "validate_or_raise",
]
