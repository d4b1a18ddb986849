"""Flat `key = value` run configuration: parsing, presets, validation and the resolved-config dump."""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

from aevb_data import CONFIG_KEYS, MODELS, PRESETS, RunConfig
from model_fa import KL_MODES, POSTERIOR_FAMILIES
from model_gmvae import ESTIMATORS
from model_vae_cvae import LABEL_MODES


class ConfigError(ValueError):
    """A configuration value is missing, unknown or out of range; field names it."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


_FIELD_TYPES = get_type_hints(RunConfig)


def _coerce(field: str, annotation: Any, text: str) -> Any:
    origin = get_origin(annotation)
    if origin is Union:
        if text.lower() == "none":
            return None
        inner = next(arg for arg in get_args(annotation) if arg is not type(None))
        return _coerce(field, inner, text)
    if origin is tuple:
        parts = [part.strip() for part in text.split(",") if part.strip()]
        try:
            return tuple(int(part) for part in parts)
        except ValueError as exc:
            raise ConfigError(field, f"expected comma-separated integers, got {text!r}") from exc
    if annotation is bool:
        if text.lower() not in ("true", "false"):
            raise ConfigError(field, f"expected true or false, got {text!r}")
        return text.lower() == "true"
    if annotation in (int, float):
        try:
            return annotation(text)
        except ValueError as exc:
            raise ConfigError(field, f"expected {annotation.__name__}, got {text!r}") from exc
    return text


def format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> dict[str, Any]:
    """Typed overrides from config text; unknown keys and malformed lines are errors."""
    overrides: dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"line {number}", f"expected 'key = value', got {content!r}")
        key, value = (part.strip() for part in content.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown key")
        overrides[key] = _coerce(key, _FIELD_TYPES[key], value)
    return overrides


def format_config(config: RunConfig) -> str:
    lines = ["# resolved run configuration"]
    lines += [f"{f.name} = {format_value(getattr(config, f.name))}" for f in fields(config)]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> RunConfig:
    return validate(replace(RunConfig(), **parse_config_text(text)))


def build_config(
    preset: Optional[str] = None,
    path: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
    out: Optional[str] = None,
) -> RunConfig:
    """Preset, then config file, then command-line overrides."""
    config = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        config = replace(config, **PRESETS[preset])
    if path is not None:
        config = replace(config, **parse_config_text(Path(path).read_text()))
    if seed is not None:
        config = replace(config, seed=seed)
    if out is not None:
        config = replace(config, out=out)
    return validate(config)


def _choice(config: RunConfig, field: str, allowed: tuple[str, ...]) -> None:
    value = getattr(config, field)
    if value not in allowed:
        raise ConfigError(field, f"{value!r} is not one of {', '.join(allowed)}")


def _at_least(config: RunConfig, field: str, minimum: int) -> None:
    value = getattr(config, field)
    if value is not None and value < minimum:
        raise ConfigError(field, f"must be at least {minimum}, got {value}")


def validate(config: RunConfig) -> RunConfig:
    _choice(config, "model", MODELS)
    _choice(config, "estimator", ESTIMATORS)
    _choice(config, "posterior", POSTERIOR_FAMILIES)
    _choice(config, "kl", KL_MODES)
    _choice(config, "label_mode", LABEL_MODES)
    _choice(config, "schedule", ("joint", "alternating"))
    _choice(config, "starting_phase", ("E", "M"))
    _choice(config, "data", ("synthetic", "mnist"))
    for field in ("latent_dim", "data_dim", "num_classes", "hidden_size", "batch_size", "eval_every",
                  "phase_length", "synthetic_n", "eval_batch_size", "eval_draws", "train_size", "test_size"):
        _at_least(config, field, 1)
    for field in ("steps", "patience", "seed", "eval_seed", "predictive_samples", "decay_every"):
        _at_least(config, field, 0)
    if any(width < 1 for width in config.hidden):
        raise ConfigError("hidden", f"widths must be positive, got {format_value(config.hidden)}")
    if not 0.0 <= config.dropout < 1.0:
        raise ConfigError("dropout", f"must lie in [0, 1), got {config.dropout}")
    if not config.temperature > 0:
        raise ConfigError("temperature", f"must be positive, got {config.temperature}")
    if not config.learning_rate > 0:
        raise ConfigError("learning_rate", f"must be positive, got {config.learning_rate}")
    if not 0.0 < config.lr_decay <= 1.0:
        raise ConfigError("lr_decay", f"must lie in (0, 1], got {config.lr_decay}")
    if config.model == "fa" and config.data != "synthetic":
        raise ConfigError("data", "the fa model trains on synthetic data")
    if config.model != "fa" and config.data != "mnist":
        raise ConfigError("data", f"the {config.model} model trains on mnist data")
    if config.model == "gmvae" and config.kl != "analytic":
        raise ConfigError("kl", "gmvae chooses its KL form through estimator")
    return config
