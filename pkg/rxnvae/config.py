"""Run configuration.

Defaults live in ``settings.json`` next to this module; every dataclass field
has a matching CLI flag (underscores become dashes).
"""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

from .errors import ConfigError

log = logging.getLogger(__name__)

SETTINGS_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "settings.json")


def _check_positive(obj, names):
    for name in names:
        value = getattr(obj, name)
        if value is None or value <= 0:
            raise ConfigError(f"{type(obj).__name__}.{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 50
    hidden_dim: int = 200
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 100
    kl_warmup_epochs: int = 10
    grad_clip: float = 10.0
    use_step_context: bool = False
    seed: int = 0

    def validate(self):
        _check_positive(self, ("latent_dim", "hidden_dim", "lr", "batch_size", "epochs", "grad_clip"))
        if self.kl_warmup_epochs < 0:
            raise ConfigError("ModelConfig.kl_warmup_epochs must be >= 0")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DecodeLimits:
    jt_max_nodes: int = 40
    rxn_max_depth: int = 5
    rxn_max_nodes: int = 50

    def validate(self):
        _check_positive(self, ("jt_max_nodes", "rxn_max_depth"))
        # room for the root, one template and its largest reactant list
        if self.rxn_max_nodes < 5:
            raise ConfigError("DecodeLimits.rxn_max_nodes must be >= 5")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class BOConfig:
    iterations: int = 5
    batch_per_iter: int = 50
    candidate_pool_size: int = 2000
    subset_size: int = 1500
    top_k_perturb: int = 20
    perturb_sigma: float = 0.3
    gp_restarts: int = 8
    seed: int = 0

    def validate(self):
        _check_positive(self, ("iterations", "batch_per_iter", "candidate_pool_size", "subset_size",
                               "top_k_perturb", "perturb_sigma", "gp_restarts"))
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class GeneratorConfig:
    n_templates: int = 12
    n_start_molecules: int = 40
    max_depth: int = 3
    frequency_floor: int = 5
    apply_frequency_floor: bool = True

    def validate(self):
        _check_positive(self, ("n_templates", "n_start_molecules", "max_depth"))
        if self.max_depth > 6:
            raise ConfigError("GeneratorConfig.max_depth must be <= 6")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Settings:
    model: ModelConfig = field(default_factory=ModelConfig)
    limits: DecodeLimits = field(default_factory=DecodeLimits)
    bo: BOConfig = field(default_factory=BOConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    oracle_timeout_s: float = 10.0

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "limits": self.limits.to_dict(),
            "bo": self.bo.to_dict(),
            "generator": self.generator.to_dict(),
            "oracle": {"timeout_s": self.oracle_timeout_s},
        }


def _build(cls, raw, section):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    return cls(**raw).validate()


def settings_from_dict(raw):
    return Settings(
        model=_build(ModelConfig, raw.get("model", {}), "model"),
        limits=_build(DecodeLimits, raw.get("limits", {}), "limits"),
        bo=_build(BOConfig, raw.get("bo", {}), "bo"),
        generator=_build(GeneratorConfig, raw.get("generator", {}), "generator"),
        oracle_timeout_s=float(raw.get("oracle", {}).get("timeout_s", 10.0)),
    )


def load_settings(path=None):
    """Load settings JSON, falling back to built-in defaults if the file is unusable."""
    path = path or SETTINGS_PATH
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        log.warning("Config load error (%s): %s; using defaults", path, e)
        return Settings()
    return settings_from_dict(raw)


def override(config, **changes):
    """dataclasses.replace that ignores None values (unset CLI flags)."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return dataclasses.replace(config, **changes).validate() if changes else config
