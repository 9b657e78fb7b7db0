"""Experiment configuration: one flat JSON object covering every knob.

Defaults follow the published hyperparameters (T=50 with a linear
(2e-3, 0.4) schedule for single-image models and a cosine schedule for the
video models; 16 blocks of width 64; Adam at 2e-4 dropping to 2e-5 after
100K iterations; 95% crops; batch size 1; frame-gap range 3; 3 correction
steps). Everything else is an artifact default and is documented here.
Unknown keys in a config file are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

ROLE_ITERATIONS = {
    "image": 50_000,
    "projector": 100_000,
    "predictor": 200_000,
    "interpolator": 50_000,
}

ROLES = tuple(ROLE_ITERATIONS)


class ConfigError(ValueError):
    """Bad configuration file or overrides."""


@dataclass
class ExperimentConfig:
    # run identity
    role: str = "image"
    input: str | None = None
    seed: int = 0
    # media
    resolution_cap: int = 256
    # diffusion schedule ("auto": linear for image role, cosine for the rest)
    schedule: str = "auto"
    timesteps: int = 50
    beta_start: float = 2e-3
    beta_end: float = 0.4
    # network
    depth: int = 16
    width: int = 64
    embed_dim: int = 64
    stem_kernel: int = 3
    block_kernel: int = 7
    # training
    iterations: int | None = None  # default: per-role budget
    lr: float = 2e-4
    lr_drop_at: int = 100_000
    lr_after: float = 2e-5
    grad_clip: float = 1.0
    crop_fraction: float = 0.95
    k_range: int = 3
    curriculum_warmup: int | None = None  # default: 20% of iterations
    trace_every: int = 1
    # generation
    frames: int = 24
    direction: str = "forward"
    t_corr: int = 3
    refine_t_start: int = 10
    # sampling details (exposed for ablation)
    clamp_x0: bool = True
    variance: str = "posterior"  # or "beta"
    # ablation flags
    noise_prediction: bool = False
    with_attention: bool = False
    with_resampling: bool = False
    resnet_blocks: bool = False
    no_projector: bool = False
    k_only_pm1: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.schedule not in ("auto", "linear", "cosine"):
            raise ConfigError(f"schedule must be auto/linear/cosine, got {self.schedule!r}")
        if self.direction not in ("forward", "backward"):
            raise ConfigError(f"direction must be forward/backward, got {self.direction!r}")
        if self.variance not in ("posterior", "beta"):
            raise ConfigError(f"variance must be posterior/beta, got {self.variance!r}")
        if self.timesteps < 1:
            raise ConfigError("timesteps must be >= 1")

    # resolved values -----------------------------------------------------
    def schedule_kind(self) -> str:
        if self.schedule != "auto":
            return self.schedule
        return "linear" if self.role == "image" else "cosine"

    def resolved_iterations(self) -> int:
        return self.iterations if self.iterations is not None else ROLE_ITERATIONS[self.role]

    def effective_k_range(self) -> int:
        return 1 if self.k_only_pm1 else self.k_range

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - cls.field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        """Read a JSON config file and apply flag overrides on top."""
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if overrides:
            unknown = set(overrides) - cls.field_names()
            if unknown:
                raise ConfigError(f"unknown override keys: {sorted(unknown)}")
            data.update(overrides)
        return cls.from_dict(data)


def config_schema() -> dict:
    """JSON-schema description of the config format (additionalProperties off)."""
    type_map = {int: "integer", float: "number", str: "string", bool: "boolean"}
    props = {}
    for f in fields(ExperimentConfig):
        base = {"int | None": ["integer", "null"], "str | None": ["string", "null"]}.get(
            str(f.type)
        )
        if base is None:
            base = type_map.get(f.type, "number")
            if not isinstance(base, str):
                base = "number"
        props[f.name] = {"type": base}
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "solodiff experiment configuration",
        "type": "object",
        "properties": props,
        "additionalProperties": False,
    }
