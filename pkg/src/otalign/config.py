"""Experiment configuration: JSON document, strict validation on load.

The document mirrors ExperimentConfig section by section; any key that is
not part of the schema is an error, so typos never silently fall back to
defaults. Every field has a default, which makes `{}` a valid config.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SyntheticDatasetSpec, dataset_spec_from_dict
from .errors import ArgumentError, ConfigError
from .losses import LossWeights
from .model import FUSION_MODES, ScheduleConfig
from .sinkhorn import SinkhornConfig

__all__ = ["ExperimentConfig", "load_config", "config_from_dict", "config_to_dict", "config_hash"]


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: SyntheticDatasetSpec = field(default_factory=SyntheticDatasetSpec)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    fusion_mode: str = "ot"
    renormalize_rows: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-6
    encoder_dim: int = 16
    decoder_dim: int = 16
    batch_size: int = 16
    eval_every: int = 10
    output_dir: str = "runs/experiment"
    seed: int = 0

    def validate(self) -> None:
        self.dataset.validate()
        self.sinkhorn.validate()
        self.weights.validate()
        self.schedule.validate()
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(
                f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}"
            )
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.encoder_dim < 1 or self.decoder_dim < 1:
            raise ConfigError("model dims must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


def _section(data: dict, name: str, cls):
    body = data.get(name, {})
    if not isinstance(body, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(body) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return cls(**body)


_TOP_LEVEL_SCALARS = (
    "fusion_mode",
    "renormalize_rows",
    "batch_size",
    "eval_every",
    "output_dir",
    "seed",
)
_ADAM_KEYS = ("beta1", "beta2", "eps", "weight_decay")
_MODEL_KEYS = ("encoder_dim", "decoder_dim")


def config_from_dict(data: dict) -> ExperimentConfig:
    known_sections = {"dataset", "sinkhorn", "weights", "schedule", "adam", "model"}
    unknown = set(data) - known_sections - set(_TOP_LEVEL_SCALARS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    dataset = dataset_spec_from_dict(data.get("dataset", {}))
    sinkhorn = _section(data, "sinkhorn", SinkhornConfig)
    weights = _section(data, "weights", LossWeights)
    schedule = _section(data, "schedule", ScheduleConfig)

    adam = data.get("adam", {})
    if set(adam) - set(_ADAM_KEYS):
        raise ConfigError(f"unknown keys in section 'adam': {sorted(set(adam) - set(_ADAM_KEYS))}")
    model = data.get("model", {})
    if set(model) - set(_MODEL_KEYS):
        raise ConfigError(
            f"unknown keys in section 'model': {sorted(set(model) - set(_MODEL_KEYS))}"
        )

    kwargs = {k: data[k] for k in _TOP_LEVEL_SCALARS if k in data}
    cfg = ExperimentConfig(
        dataset=dataset,
        sinkhorn=sinkhorn,
        weights=weights,
        schedule=schedule,
        adam_beta1=adam.get("beta1", 0.9),
        adam_beta2=adam.get("beta2", 0.999),
        adam_eps=adam.get("eps", 1e-8),
        weight_decay=adam.get("weight_decay", 1e-6),
        encoder_dim=model.get("encoder_dim", 16),
        decoder_dim=model.get("decoder_dim", 16),
        **kwargs,
    )
    try:
        cfg.validate()
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def section(obj) -> dict:
        return {f.name: getattr(obj, f.name) for f in fields(obj)}

    out = {
        "dataset": section(cfg.dataset),
        "sinkhorn": section(cfg.sinkhorn),
        "weights": section(cfg.weights),
        "schedule": section(cfg.schedule),
        "adam": {
            "beta1": cfg.adam_beta1,
            "beta2": cfg.adam_beta2,
            "eps": cfg.adam_eps,
            "weight_decay": cfg.weight_decay,
        },
        "model": {"encoder_dim": cfg.encoder_dim, "decoder_dim": cfg.decoder_dim},
    }
    for key in _TOP_LEVEL_SCALARS:
        out[key] = getattr(cfg, key)
    return out


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be an object")
    try:
        return config_from_dict(data)
    except (TypeError, ArgumentError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
