"""Run configuration shared by every CLI command."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError
from .losses import LossWeights


@dataclass(frozen=True)
class RunConfig:
    sampson_threshold: float = 2.0
    voxel_size: float | None = None  # None: 4x median nearest-neighbor spacing
    k: int = 10
    L_encoding: int = 4
    heads: int = 2
    model_dim: int = 16
    feature_dim: int = 8
    lambda_ssim: float = 0.2
    lambda_vol: float = 0.001
    lambda_laplacian: float = 1.0
    lambda_ncc: float = 0.01
    ncc_window: int = 11
    pyramid_levels: int = 4
    seed: int = 42

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "voxel_size" and value is None:
                continue
            integral = f.type in ("int",)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{f.name} must be numeric, got {value!r}")
            if integral and not isinstance(value, int):
                raise ConfigError(f"{f.name} must be an integer, got {value!r}")
        positive = ("sampson_threshold", "k", "L_encoding", "heads", "model_dim", "feature_dim",
                    "ncc_window", "pyramid_levels")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.voxel_size is not None and not self.voxel_size > 0:
            raise ConfigError("voxel_size must be positive")
        if self.model_dim % self.heads:
            raise ConfigError("model_dim must be divisible by heads")
        if self.ncc_window % 2 == 0:
            raise ConfigError("ncc_window must be odd")
        self.loss_weights  # validates the lambdas

    @property
    def loss_weights(self) -> LossWeights:
        try:
            return LossWeights(self.lambda_ssim, self.lambda_vol, self.lambda_laplacian, self.lambda_ncc)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def as_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **overrides) -> RunConfig:
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_config(path=None, **overrides) -> RunConfig:
    """Read a JSON config (only RunConfig keys allowed) and apply non-None overrides."""
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**data).with_overrides(**overrides)
