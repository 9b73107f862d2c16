"""Experiment configuration, validation, and canonical hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..environment import WorldConfig

BASELINE_FULL = "aaf"
BASELINE_LEARNER_ONLY = "learner_only"
BASELINE_STATIC_GUARD = "static_guard"
BASELINES = (BASELINE_FULL, BASELINE_LEARNER_ONLY, BASELINE_STATIC_GUARD)


@dataclass
class DetectionConfig:
    global_budget: float = 0.05
    edge_alpha: float = 1e-3
    warmup_steps: int = 500
    h0_init: float = 2.0
    mi_window: int = 64
    mi_bins: int = 8
    min_delta: float = 1e-3
    bump_coefficient: float = 1.0


@dataclass
class InterventionConfig:
    window: int = 25
    k_targets: int = 2
    c_max: float = 5.0
    g_max: float = 1.0
    c_patch: float = 0.5
    c_throttle: float = 0.25
    recalcitrance_window: int = 100
    failsafe_window: int = 300
    moving_average_window: int = 1000

    @property
    def penalty_weight(self) -> float:
        return self.c_max / self.window


@dataclass
class ScenarioConfig:
    """Optional scripted disturbance (cartel fixture)."""

    kind: str = "none"
    cartel_size: int = 0
    cartel_start: int = 0


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    intervention: InterventionConfig = field(default_factory=InterventionConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    episode_steps: int = 1000
    baseline: str = BASELINE_FULL
    hash_algorithm: str = "blake2b"

    def validate(self) -> None:
        self.world.validate()
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}")
        if self.episode_steps < 1:
            raise ValueError("episode_steps must be positive")
        if self.intervention.c_max <= self.intervention.g_max:
            raise ValueError(
                "budget dominance violated: c_max must exceed g_max"
            )
        if self.detection.warmup_steps >= self.episode_steps:
            raise ValueError("warmup_steps must be smaller than episode_steps")
        if self.scenario.kind not in ("none", "cartel"):
            raise ValueError(f"unknown scenario kind: {self.scenario.kind!r}")
        if self.scenario.kind == "cartel":
            if not 0 < self.scenario.cartel_size <= self.world.num_agents:
                raise ValueError("cartel_size must fit the population")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        world = WorldConfig(**data.pop("world", {}))
        detection = DetectionConfig(**data.pop("detection", {}))
        intervention = InterventionConfig(**data.pop("intervention", {}))
        scenario = ScenarioConfig(**data.pop("scenario", {}))
        return cls(
            world=world,
            detection=detection,
            intervention=intervention,
            scenario=scenario,
            **data,
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def write(self, path) -> None:
        Path(path).write_text(canonical_json(self.to_dict()) + "\n", encoding="utf-8")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(config.to_dict()).encode()).hexdigest()[:16]
