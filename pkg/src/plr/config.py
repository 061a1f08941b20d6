"""Configuration: built-in defaults, INI config files, and precedence.

Precedence is flag > config file > built-in default; the PLR_SEED
environment variable sits below config files as a seed source of last
resort. The INI file uses the sections [model], [optimizer], [scheduler]
and [train].
"""

import configparser
import os

from .errors import ConfigError

#: Paper-faithful defaults, frozen here and asserted by a golden test.
DEFAULTS = {
    "noise": {
        "octaves": 5,
        "base_frequency": 4.0 / 512.0,
        "persistence": 0.22,
        "lacunarity": 2.0,
        "size": 512,
    },
    "bank": {
        "count": 5000,
        "min_mean": 180.0,
        "size_min": 5,
        "size_max": 25,
    },
    "corrupt": {
        "strategy": "perlin",
        "patches_per_image": 30,
        "kernel_size": 5,
        "sigma": "auto",
        "grid": 10,
        "paste_mode": "replace",
    },
    "model": {
        "levels": 5,
        "base_channels": 64,
        "convs_per_level": 2,
        "kernel": 3,
        "fc_units": 512,
    },
    "pretrain": {
        "batch_size": 4,
        "optimizer": "sgd",
        "initial_lr": 1e-3,
        "augment": False,
        "epochs": 100,
        "input_size": 224,
    },
    "finetune": {
        "batch_size": 16,
        "optimizer": "adadelta",
        "initial_lr": 0.1,
        "augment": True,
        "epochs": 100,
        "input_size": 224,
        "label_fraction": 1.0,
    },
    "scheduler": {
        "patience": 10,
        "factor": 0.5,
        "min_lr": 1e-6,
    },
}


def default_config():
    """Deep copy of the built-in defaults (safe to mutate)."""
    return {section: dict(values) for section, values in DEFAULTS.items()}


def load_ini(path):
    """Parse an INI config file into {section: {key: raw-string}}."""
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except (configparser.Error, OSError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _cast(raw, like):
    if isinstance(like, bool):
        lowered = str(raw).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def resolve(flag_value, file_cfg, section, key, default):
    """flag > config-file > default, with type carried by the default."""
    if flag_value is not None:
        return flag_value
    raw = file_cfg.get(section, {}).get(key)
    if raw is not None:
        try:
            return _cast(raw, default)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return default


def resolve_seed(flag_value, file_cfg):
    """Seed precedence: --seed > [train] seed > PLR_SEED env > 0."""
    if flag_value is not None:
        return int(flag_value)
    raw = file_cfg.get("train", {}).get("seed")
    if raw is not None:
        return int(raw)
    env = os.environ.get("PLR_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"PLR_SEED must be an integer, got {env!r}") from exc
    return 0
