# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Experiment settings and their flat key=value text form.

Nested sections are addressed with dotted keys, e.g. `episode.n_classes=10`
or `optimizer.lr=0.1`. Lines starting with '#' and blank lines are ignored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from supattn.lib.data import SynthConfig
from supattn.lib.errors import ParseError, ValidationError
from supattn.lib.logging import Log
from supattn.lib.network import ModelShape
from supattn.lib.objectives import AmSoftmaxConfig, Objective, Variant

FULL: str = "full"


@dataclass
class EpisodeSpec:
    n_classes: int = 10
    n_support: int = 1
    n_query: int = 2
    support_seconds: float = 2.0
    query_seconds_min: float = 1.0
    query_seconds_max: float = 2.0

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ValidationError("EpisodeSpec: n_classes must be ≥ 2")
        if self.n_support < 1 or self.n_query < 1:
            raise ValidationError("EpisodeSpec: n_support and n_query must be ≥ 1")
        if self.support_seconds <= 0 or self.query_seconds_min <= 0:
            raise ValidationError("EpisodeSpec: durations must be > 0")
        if self.query_seconds_min > self.query_seconds_max:
            raise ValidationError("EpisodeSpec: query_seconds_min > query_seconds_max")


@dataclass
class OptimizerSettings:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay_factor: float = 10.0
    decay_patience: int = 50
    max_decays: int = 3
    min_improvement: float = 1e-4

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValidationError("OptimizerSettings: lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("OptimizerSettings: momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("OptimizerSettings: weight_decay must be ≥ 0")
        if self.lr_decay_factor <= 1.0:
            raise ValidationError("OptimizerSettings: lr_decay_factor must be > 1")
        if self.decay_patience < 1 or self.max_decays < 0:
            raise ValidationError("OptimizerSettings: bad decay_patience or max_decays")


@dataclass
class ModelSettings:
    hidden: tuple[int, ...] = (64,)
    frame_dim: int = 32
    embed_dim: int = 256

    def to_shape(self, feature_dim: int, num_classes: int) -> ModelShape:
        return ModelShape(
            feature_dim=feature_dim,
            hidden=tuple(self.hidden),
            frame_dim=self.frame_dim,
            embed_dim=self.embed_dim,
            num_classes=num_classes,
        )


@dataclass
class ExperimentConfig:
    variant: Variant = Variant.SAP
    objective: Objective = Objective.PL_SOFTMAX
    lambda_mu: float = 1.0
    mu_only: bool = False
    steps: int = 500
    seed: int = 0
    batch_size: int = 64
    crop_seconds: float = 2.0
    cmvn: bool = False
    data_dir: str = ""
    holdout_per_speaker: int = 3
    # > 0 holds out whole speakers instead of utterances
    holdout_speakers: int = 0
    pairs_per_speaker: int = 100
    durations: tuple[str, ...] = ("1", "2", "5", FULL)
    log_every: int = 50
    episode: EpisodeSpec = field(default_factory=EpisodeSpec)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    am: AmSoftmaxConfig = field(default_factory=AmSoftmaxConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    # ------ PUBLIC METHODS ------ #

    def validate(self) -> None:
        if self.lambda_mu < 0:
            raise ValidationError("ExperimentConfig: lambda_mu must be ≥ 0")
        if self.steps < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ValidationError("ExperimentConfig: steps, batch_size, log_every must be ≥ 1")
        if self.crop_seconds <= 0:
            raise ValidationError("ExperimentConfig: crop_seconds must be > 0")
        if self.holdout_per_speaker < 2:
            # Target trials need two held-out utterances per speaker
            raise ValidationError("ExperimentConfig: holdout_per_speaker must be ≥ 2")
        if self.holdout_speakers == 1 or self.holdout_speakers < 0:
            # Non-target trials need two held-out speakers
            raise ValidationError("ExperimentConfig: holdout_speakers must be 0 or ≥ 2")
        if self.pairs_per_speaker < 1:
            raise ValidationError("ExperimentConfig: pairs_per_speaker must be ≥ 1")
        if self.mu_only and not self.variant.has_context_loss:
            raise ValidationError(
                f"ExperimentConfig: mu_only needs a context-loss variant, got {self.variant.value}"
            )
        self.test_durations()
        self.episode.validate()
        self.optimizer.validate()
        self.am.validate()
        if not self.data_dir:
            self.synth.validate()
            self._check_training_speakers(self.synth.num_speakers)

    def _check_training_speakers(self, num_speakers: int) -> None:
        train_speakers: int = num_speakers - self.holdout_speakers
        if self.holdout_speakers and train_speakers < 2:
            raise ValidationError(
                f"ExperimentConfig: holding out {self.holdout_speakers} of {num_speakers} "
                "speakers leaves fewer than 2 for training"
            )
        if self.objective.episodic and train_speakers < self.episode.n_classes:
            raise ValidationError(
                f"ExperimentConfig: episodes of {self.episode.n_classes} classes need as many "
                f"training speakers, have {train_speakers}"
            )

    def test_durations(self) -> list[float | None]:
        """Durations in seconds, None standing for the full utterance"""

        out: list[float | None] = []
        for d in self.durations:
            if d == FULL:
                out.append(None)
                continue
            try:
                seconds: float = float(d)
            except ValueError:
                raise ValidationError(f"ExperimentConfig: bad duration '{d}'")
            if seconds <= 0:
                raise ValidationError(f"ExperimentConfig: duration '{d}' must be > 0")
            out.append(seconds)
        if None not in out:
            out.append(None)
        return out

    def to_text(self) -> str:
        lines: list[str] = [f"{key}={value}" for key, value in _flatten(self, "")]
        return "\n".join(lines) + "\n"

    def copy(self, **changes: Any) -> ExperimentConfig:
        config: ExperimentConfig = ExperimentConfig.from_text(self.to_text())
        for key, value in changes.items():
            _assign(config, key, value if isinstance(value, str) else _format(value))
        return config

    @staticmethod
    def from_text(text: str, path: str = "<config>", preset: str = "default") -> ExperimentConfig:
        """Build config from 'key=value' lines on top of a preset"""

        config: ExperimentConfig = ExperimentConfig.preset(preset)
        for number, raw in enumerate(text.splitlines(), start=1):
            line: str = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(path, number, f"expected key=value, got '{line}'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "preset":
                continue
            try:
                _assign(config, key, value)
            except ValidationError as e:
                raise ParseError(path, number, str(e))
        return config

    @staticmethod
    def from_file(path: str) -> ExperimentConfig:
        Log.debug(f"Config: Read '{path}'")
        with open(path, "r") as f:
            text: str = f.read()
        preset: str = "default"
        for line in text.splitlines():
            if line.strip().startswith("preset="):
                preset = line.split("=", 1)[1].strip()
        return ExperimentConfig.from_text(text, path, preset)

    @staticmethod
    def preset(name: str) -> ExperimentConfig:
        config = ExperimentConfig()
        match name:
            case "default":
                pass
            case "fast":
                config.steps = 60
                config.batch_size = 16
                config.holdout_per_speaker = 3
                config.pairs_per_speaker = 20
                config.durations = ("0.5", "1", FULL)
                config.log_every = 20
                config.episode = EpisodeSpec(
                    n_classes=4, support_seconds=0.6, query_seconds_min=0.3, query_seconds_max=0.6
                )
                config.crop_seconds = 0.6
                config.model = ModelSettings(hidden=(16,), frame_dim=8, embed_dim=32)
                config.synth = SynthConfig(
                    num_speakers=6,
                    utterances_per_speaker=7,
                    feature_dim=8,
                    frames_per_utterance=100,
                )
            case "paper":
                config.cmvn = True
                config.holdout_speakers = 20
                config.episode = EpisodeSpec(n_classes=100)
                config.synth = SynthConfig(num_speakers=120)
            case _:
                raise ValidationError(f"Config: unknown preset '{name}'")
        return config


# ------ PRIVATE ------ #


def _format(value: Any) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _flatten(obj: Any, prefix: str) -> list[tuple[str, str]]:
    items: list[tuple[str, str]] = []
    for f in dataclasses.fields(obj):
        value: Any = getattr(obj, f.name)
        key: str = prefix + f.name
        if dataclasses.is_dataclass(value):
            items.extend(_flatten(value, key + "."))
        else:
            items.append((key, _format(value)))
    return items


def _parse(current: Any, text: str, key: str) -> Any:
    """Parse text into the type of the current value"""

    try:
        if isinstance(current, Enum):
            return type(current)(text.upper() if isinstance(current, Variant) else text.lower())
        if isinstance(current, bool):
            lowered: str = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            parts: list[str] = [p.strip() for p in text.split(",") if p.strip()]
            if current and isinstance(current[0], int):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        return text
    except ValueError:
        raise ValidationError(f"bad value '{text}' for '{key}'")


def _assign(config: ExperimentConfig, key: str, text: str) -> None:
    target: Any = config
    *sections, name = key.split(".")
    for section in sections:
        if not dataclasses.is_dataclass(target) or not hasattr(target, section):
            raise ValidationError(f"unknown key '{key}'")
        target = getattr(target, section)
    names: set[str] = {f.name for f in dataclasses.fields(target)}
    if name not in names or dataclasses.is_dataclass(getattr(target, name)):
        raise ValidationError(f"unknown key '{key}'")
    setattr(target, name, _parse(getattr(target, name), text, key))
