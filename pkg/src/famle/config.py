"""Experiment configuration: one YAML file, strictly validated.

Unknown keys are rejected at every nesting level.  ``dump`` followed by
``parse`` reproduces the config exactly.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError
from .model import InnerUpdateConfig
from .situations import FAMILIES

METHODS = ("famle", "maml", "reptile", "scratch")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class InnerSection(_Strict):
    k: int = Field(10, ge=0)
    alpha: float = Field(1e-2, ge=0)
    beta: float = Field(1e-2, ge=0)
    batch_size: Optional[int] = Field(256, ge=1)

    def build(self) -> InnerUpdateConfig:
        return InnerUpdateConfig(self.k, self.alpha, self.beta, self.batch_size)


class MethodSection(_Strict):
    """Meta-training rates plus the inner update used both in meta-training and online."""

    alpha_meta: float = Field(0.1, ge=0)
    beta_meta: float = Field(0.1, ge=0)
    outer_iterations: int = Field(3000, ge=0)
    inner: InnerSection = InnerSection()
    # online inner update; falls back to ``inner`` when unset
    online: Optional[InnerSection] = None

    def online_inner(self) -> InnerUpdateConfig:
        return (self.online or self.inner).build()


class AdaptationSection(_Strict):
    window_size: int = Field(64, ge=1)
    adapt_every: int = Field(10, ge=1)


class MPCSection(_Strict):
    horizon: int = Field(15, ge=1)
    n_candidates: int = Field(500, ge=1)


class RunSection(_Strict):
    methods: tuple[Literal["famle", "maml", "scratch"], ...] = ("famle", "maml", "scratch")
    episode_length: int = Field(300, ge=0)
    seeds: tuple[int, ...] = tuple(range(10))
    # damaged joints in the held-out arm situation
    held_out_damages: int = Field(2, ge=1)
    goal_threshold: float = -0.1


class SineSection(_Strict):
    point_counts: tuple[int, ...] = (0, 2, 3, 4, 5)
    grid_points: int = Field(200, ge=2)
    seeds: tuple[int, ...] = tuple(range(20))

    @model_validator(mode="after")
    def _counts(self):
        if any(c < 0 for c in self.point_counts):
            raise ValueError("point_counts must be non-negative")
        return self


class ExperimentConfig(_Strict):
    name: str = "experiment"
    family: Literal["sine", "arm", "pointmass"] = "arm"
    n_joints: int = Field(2, ge=1)
    n_situations: int = Field(8, ge=1)
    n_transitions: int = Field(500, ge=1)
    hidden_sizes: tuple[int, ...] = (64, 64)
    embed_dim: int = Field(5, ge=0)
    seed: int = 0
    standardize_targets: bool = True
    famle: MethodSection = MethodSection(alpha_meta=1.0, beta_meta=0.5,
                                         inner=InnerSection(k=5, alpha=0.01, beta=0.5))
    maml: MethodSection = MethodSection(alpha_meta=0.01, inner=InnerSection(k=5, alpha=0.05, beta=0.0))
    reptile: MethodSection = MethodSection(alpha_meta=1.0, inner=InnerSection(k=5, alpha=0.01, beta=0.0))
    scratch: MethodSection = MethodSection(outer_iterations=0, inner=InnerSection(k=5, alpha=0.05, beta=0.0))
    adaptation: AdaptationSection = AdaptationSection()
    mpc: MPCSection = MPCSection()
    run: RunSection = RunSection()
    sine: SineSection = SineSection()
    output_dir: str = "out"

    @model_validator(mode="after")
    def _check(self):
        assert self.family in FAMILIES
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be >= 1")
        return self

    def method(self, name: str) -> MethodSection:
        if name not in METHODS:
            raise ConfigurationError(f"unknown method {name!r}")
        return getattr(self, name)


def parse(text: str) -> ExperimentConfig:
    """Parse YAML text; any problem raises :class:`ConfigurationError`."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    try:
        return ExperimentConfig.model_validate(raw or {})
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc


def dump(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse(text)
