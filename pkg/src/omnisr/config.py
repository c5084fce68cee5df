"""YAML config files with dotted command-line overrides.

Every section is checked against the dataclass it feeds, so a misspelt key
fails loudly with its full dotted name.
"""

from pathlib import Path

import yaml

from .models import ModelConfig
from .pipeline import InferenceOptions
from .training.degradation import DegradationConfig, DegradationTrainConfig
from .training.loop import Phase
from .training.schedule import TrainConfig


class ConfigError(ValueError):
    pass


TOP_LEVEL = {
    "kind": None,
    "output": None,
    "init_from": None,
    "stage2_source": None,
    "data": {"root", "train_split", "val_split", "pseudo_root"},
    "model": ModelConfig,
    "train": TrainConfig,
    "phases": None,
    "degradation_model": DegradationConfig,
    "degradation_train": DegradationTrainConfig,
    "inference": InferenceOptions,
}


def _field_names(spec):
    if isinstance(spec, set):
        return spec
    return set(spec.__dataclass_fields__)


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def apply_override(cfg, key, value):
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a section")
    node[parts[-1]] = value


def validate(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    for key, value in cfg.items():
        if key not in TOP_LEVEL:
            raise ConfigError(f"unknown config key: {key}")
        spec = TOP_LEVEL[key]
        if spec is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"config section {key} must be a mapping")
        for sub in value:
            if sub not in _field_names(spec):
                raise ConfigError(f"unknown config key: {key}.{sub}")
    for i, phase in enumerate(cfg.get("phases") or []):
        try:
            Phase.from_dict(phase)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"phases[{i}]: {exc}") from exc
    if cfg.get("kind", "sr") not in ("sr", "degradation"):
        raise ConfigError(f"unknown config value kind={cfg['kind']!r}")
    return cfg


def load_config(path=None, overrides=()):
    cfg = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} not found")
        cfg = yaml.safe_load(path.read_text()) or {}
    for text in overrides:
        apply_override(cfg, *parse_override(text))
    return validate(cfg)
