# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from supattn.lib.errors import ParseError, ValidationError
from supattn.lib.logging import Log
from supattn.lib.numerics import Rng, seeded_rng
from supattn.state import State

FEATURE_SUFFIX: str = ".feat"
MASK_SUFFIX: str = ".mask"

# Floor applied to the per-dimension variance in normalize_time_axis
VARIANCE_FLOOR: float = 1e-8


@dataclass
class FrameSequence:
    features: np.ndarray
    utterance_id: str
    speaker: int
    frame_rate: int = State.FRAME_RATE
    informative_mask: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValidationError(
                f"Data: '{self.utterance_id}' needs a T×F matrix with T ≥ 1, "
                f"got shape {self.features.shape}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValidationError(f"Data: '{self.utterance_id}' has non-finite features")
        if self.informative_mask is not None:
            self.informative_mask = np.asarray(self.informative_mask, dtype=bool)
            if self.informative_mask.shape != (self.num_frames,):
                raise ValidationError(
                    f"Data: '{self.utterance_id}' mask length "
                    f"{self.informative_mask.shape} does not match T={self.num_frames}"
                )

    def __repr__(self) -> str:
        return f"<FrameSequence '{self.utterance_id}' spk={self.speaker} T={self.num_frames}>"

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def seconds(self) -> float:
        return self.num_frames / self.frame_rate


@dataclass
class Dataset:
    utterances: list[FrameSequence]
    num_speakers: int

    def __post_init__(self):
        counts: list[int] = [0] * self.num_speakers
        for utt in self.utterances:
            if not 0 <= utt.speaker < self.num_speakers:
                raise ValidationError(
                    f"Data: '{utt.utterance_id}' has speaker {utt.speaker}, "
                    f"expected < {self.num_speakers}"
                )
            counts[utt.speaker] += 1
        for speaker, count in enumerate(counts):
            if count == 0:
                raise ValidationError(f"Data: speaker {speaker} has no utterances")

    def __len__(self) -> int:
        return len(self.utterances)

    # ------ PROPERTIES ------ #

    @property
    def feature_dim(self) -> int:
        return self.utterances[0].feature_dim

    @property
    def by_speaker(self) -> list[list[FrameSequence]]:
        """Utterances grouped by speaker, in dataset order"""

        groups: list[list[FrameSequence]] = [[] for _ in range(self.num_speakers)]
        for utt in self.utterances:
            groups[utt.speaker].append(utt)
        return groups

    # ------ PUBLIC METHODS ------ #

    def get(self, utterance_id: str) -> FrameSequence:
        for utt in self.utterances:
            if utt.utterance_id == utterance_id:
                return utt
        raise ValidationError(f"Data: unknown utterance '{utterance_id}'")

    def split(self, holdout_per_speaker: int) -> tuple[Dataset, Dataset]:
        """Keep the last utterances of every speaker apart for verification"""

        if holdout_per_speaker < 1:
            raise ValidationError("Data: holdout_per_speaker must be ≥ 1")
        train: list[FrameSequence] = []
        heldout: list[FrameSequence] = []
        for speaker, group in enumerate(self.by_speaker):
            if len(group) <= holdout_per_speaker:
                raise ValidationError(
                    f"Data: speaker {speaker} has {len(group)} utterances, "
                    f"can't hold out {holdout_per_speaker}"
                )
            train.extend(group[:-holdout_per_speaker])
            heldout.extend(group[-holdout_per_speaker:])
        Log.debug(f"Data: Split {len(train)} train / {len(heldout)} held-out utterances")
        return Dataset(train, self.num_speakers), Dataset(heldout, self.num_speakers)

    def split_speakers(self, holdout_speakers: int) -> tuple[Dataset, Dataset]:
        """
        Hold out the last speakers entirely, so verification runs on voices
        never seen in training. Both sides are relabelled from 0.
        """

        if not 2 <= holdout_speakers < self.num_speakers - 1:
            raise ValidationError(
                f"Data: can't hold out {holdout_speakers} of {self.num_speakers} speakers, "
                "need ≥ 2 on each side"
            )
        first: int = self.num_speakers - holdout_speakers
        train: list[FrameSequence] = [u for u in self.utterances if u.speaker < first]
        heldout: list[FrameSequence] = [
            replace(u, speaker=u.speaker - first) for u in self.utterances if u.speaker >= first
        ]
        Log.debug(
            f"Data: Split {first} train / {holdout_speakers} held-out speakers "
            f"({len(train)} / {len(heldout)} utterances)"
        )
        return Dataset(train, first), Dataset(heldout, holdout_speakers)

    def map(self, fn) -> Dataset:
        return Dataset([fn(utt) for utt in self.utterances], self.num_speakers)


@dataclass
class SynthConfig:
    num_speakers: int = 20
    utterances_per_speaker: int = 10
    feature_dim: int = 40
    frames_per_utterance: int = 300
    speaker_spread: float = 1.0
    noise_scale: float = 0.3
    distractor_fraction: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        for name in (
            "num_speakers",
            "utterances_per_speaker",
            "feature_dim",
            "frames_per_utterance",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"SynthConfig: {name} must be ≥ 1")
        if not 0.0 <= self.distractor_fraction < 1.0:
            raise ValidationError("SynthConfig: distractor_fraction must be in [0, 1)")
        if self.speaker_spread < 0 or self.noise_scale < 0:
            raise ValidationError("SynthConfig: spreads must be ≥ 0")


# ------ TRANSFORMS ------ #


def normalize_time_axis(frames: FrameSequence) -> FrameSequence:
    """Per-dimension mean/variance normalization over time (CMVN)"""

    x: np.ndarray = frames.features
    mean: np.ndarray = x.mean(axis=0)
    var: np.ndarray = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    return replace(frames, features=(x - mean) / np.sqrt(var))


def crop(frames: FrameSequence, target_seconds: float, rng: Rng) -> FrameSequence:
    """Contiguous random slice of target_seconds. Short utterances come back whole"""

    if target_seconds <= 0:
        raise ValidationError(f"crop: target_seconds must be > 0, got {target_seconds}")
    length: int = max(1, int(round(target_seconds * frames.frame_rate)))
    if length >= frames.num_frames:
        return frames
    start: int = int(rng.integers(0, frames.num_frames - length + 1))
    mask: np.ndarray | None = frames.informative_mask
    return replace(
        frames,
        features=frames.features[start : start + length],
        informative_mask=None if mask is None else mask[start : start + length],
    )


def synth_dataset(config: SynthConfig) -> Dataset:
    """
    Speakers are mean vectors; informative frames scatter around them.
    Distractor frames come from one shared centre, flagged False in the mask.
    """

    config.validate()
    Log.debug(f"Data: Synthesize {config.num_speakers} speakers, seed {config.seed}")

    rng: Rng = seeded_rng(config.seed)
    dim: int = config.feature_dim
    length: int = config.frames_per_utterance
    means: np.ndarray = rng.normal(0.0, config.speaker_spread, (config.num_speakers, dim))
    distractor_centre: np.ndarray = rng.normal(0.0, config.speaker_spread, dim)
    num_distractors: int = int(round(config.distractor_fraction * length))

    utterances: list[FrameSequence] = []
    for speaker in range(config.num_speakers):
        for index in range(config.utterances_per_speaker):
            features: np.ndarray = means[speaker] + config.noise_scale * rng.standard_normal(
                (length, dim)
            )
            mask: np.ndarray = np.ones(length, dtype=bool)
            if num_distractors:
                positions: np.ndarray = rng.choice(length, num_distractors, replace=False)
                features[positions] = distractor_centre + config.speaker_spread * (
                    rng.standard_normal((num_distractors, dim))
                )
                mask[positions] = False
            utterances.append(
                FrameSequence(
                    features=features,
                    utterance_id=f"spk{speaker:03d}-utt{index:03d}",
                    speaker=speaker,
                    informative_mask=mask,
                )
            )

    return Dataset(utterances, config.num_speakers)


# ------ FILES ------ #


def save_features(frames: FrameSequence, path: str) -> None:
    lines: list[str] = [
        f"{frames.num_frames} {frames.feature_dim} {frames.frame_rate} "
        f"{frames.speaker} {frames.utterance_id}"
    ]
    for row in frames.features:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")

    if frames.informative_mask is not None:
        with open(_mask_path(path), "w") as f:
            f.write(" ".join("1" if v else "0" for v in frames.informative_mask) + "\n")


def load_features(path: str) -> FrameSequence:
    Log.debug(f"Data: Load '{path}'")
    with open(path, "r") as f:
        lines: list[str] = f.read().splitlines()

    if not lines or not lines[0].strip():
        raise ParseError(path, 1, "empty file, expected header 'T F frame_rate speaker_id utterance_id'")

    header: list[str] = lines[0].split()
    if len(header) != 5:
        raise ParseError(path, 1, f"header needs 5 fields, found {len(header)}")
    try:
        num_frames, dim, frame_rate, speaker = (int(v) for v in header[:4])
    except ValueError:
        raise ParseError(path, 1, "T, F, frame_rate and speaker_id must be integers")
    if num_frames < 1 or dim < 1 or frame_rate < 1 or speaker < 0:
        raise ParseError(path, 1, "header values out of range")

    rows: list[str] = lines[1:]
    while rows and not rows[-1].strip():
        rows.pop()
    if len(rows) != num_frames:
        raise ParseError(
            path,
            len(rows) + 2 if len(rows) < num_frames else num_frames + 2,
            f"header declares {num_frames} rows, file has {len(rows)}",
        )

    features: np.ndarray = np.empty((num_frames, dim), dtype=np.float64)
    for i, line in enumerate(rows):
        tokens: list[str] = line.split()
        if len(tokens) != dim:
            raise ParseError(path, i + 2, f"expected {dim} values, found {len(tokens)}")
        try:
            features[i] = [float(t) for t in tokens]
        except ValueError as e:
            raise ParseError(path, i + 2, f"non-numeric token ({e})")
        if not np.all(np.isfinite(features[i])):
            raise ParseError(path, i + 2, "non-finite value")

    mask: np.ndarray | None = None
    if os.path.exists(_mask_path(path)):
        mask = _load_mask(_mask_path(path), num_frames)

    return FrameSequence(
        features=features,
        utterance_id=header[4],
        speaker=speaker,
        frame_rate=frame_rate,
        informative_mask=mask,
    )


def save_dataset(dataset: Dataset, directory: str) -> None:
    Log.debug(f"Data: Write {len(dataset)} utterances to '{directory}'")
    os.makedirs(directory, exist_ok=True)
    for utt in dataset.utterances:
        save_features(utt, os.path.join(directory, utt.utterance_id + FEATURE_SUFFIX))


def load_dataset(directory: str) -> Dataset:
    if not os.path.isdir(directory):
        raise ValidationError(f"Data: '{directory}' is not a directory")
    names: list[str] = sorted(n for n in os.listdir(directory) if n.endswith(FEATURE_SUFFIX))
    if not names:
        raise ValidationError(f"Data: no '{FEATURE_SUFFIX}' files in '{directory}'")
    utterances: list[FrameSequence] = [
        load_features(os.path.join(directory, name)) for name in names
    ]
    num_speakers: int = max(u.speaker for u in utterances) + 1
    Log.info(f"Data: Loaded {len(utterances)} utterances of {num_speakers} speakers")
    return Dataset(utterances, num_speakers)


# ------ PRIVATE ------ #


def _mask_path(path: str) -> str:
    return os.path.splitext(path)[0] + MASK_SUFFIX


def _load_mask(path: str, num_frames: int) -> np.ndarray:
    with open(path, "r") as f:
        tokens: list[str] = f.read().split()
    if len(tokens) != num_frames or any(t not in ("0", "1") for t in tokens):
        raise ParseError(path, 1, f"mask needs {num_frames} tokens of 0/1")
    return np.array([t == "1" for t in tokens], dtype=bool)
