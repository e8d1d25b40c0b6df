# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from supattn.lib.config import EpisodeSpec
from supattn.lib.data import Dataset, FrameSequence, crop
from supattn.lib.errors import ValidationError
from supattn.lib.numerics import Rng


@dataclass
class FrameBatch:
    """
    Cropped sequences for one training step, before embedding.

    In episodic mode support/query labels are episode classes 0..N-1 and
    speakers holds the global training speaker of every query. In
    classification mode the support is empty and query_labels == speakers.
    """

    query: list[FrameSequence]
    query_labels: np.ndarray
    speakers: np.ndarray
    support: list[FrameSequence] = field(default_factory=list)
    support_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    num_classes: int = 0

    @property
    def episodic(self) -> bool:
        return bool(self.support)


def _split_picks(
    count: int, n_support: int, n_query: int, rng: Rng
) -> tuple[np.ndarray, np.ndarray]:
    """
    Support indices first, then queries from the utterances left over.
    Repeats happen only once every distinct utterance is used.
    """

    order: np.ndarray = rng.permutation(count)
    support: np.ndarray = order[:n_support]
    if support.size < n_support:
        support = np.concatenate([support, rng.choice(count, n_support - support.size)])
    rest: np.ndarray = order[n_support:]
    if rest.size == 0:
        rest = order
    query: np.ndarray = rest[:n_query]
    if query.size < n_query:
        query = np.concatenate([query, rng.choice(rest, n_query - query.size)])
    return support, query


def sample_episode(dataset: Dataset, spec: EpisodeSpec, rng: Rng) -> FrameBatch:
    """
    N distinct speakers, K support crops and M query crops each. Queries
    never reuse a support utterance while the speaker has another one left.
    """

    spec.validate()
    per_class: int = spec.n_support + spec.n_query
    groups: list[list[FrameSequence]] = dataset.by_speaker
    # Speakers with a single utterance would give support == query
    eligible: list[int] = [s for s, g in enumerate(groups) if len(g) >= min(per_class, 2)]
    if len(eligible) < spec.n_classes:
        raise ValidationError(
            f"sample_episode: need {spec.n_classes} speakers with ≥ {min(per_class, 2)} "
            f"utterances, dataset has {len(eligible)}"
        )

    chosen: np.ndarray = rng.choice(eligible, size=spec.n_classes, replace=False)
    support: list[FrameSequence] = []
    query: list[FrameSequence] = []
    speakers: list[int] = []
    for speaker in chosen:
        group: list[FrameSequence] = groups[int(speaker)]
        support_picks, query_picks = _split_picks(len(group), spec.n_support, spec.n_query, rng)
        for i in support_picks:
            support.append(crop(group[int(i)], spec.support_seconds, rng))
        for i in query_picks:
            seconds: float = float(rng.uniform(spec.query_seconds_min, spec.query_seconds_max))
            query.append(crop(group[int(i)], seconds, rng))
            speakers.append(int(speaker))

    classes: np.ndarray = np.arange(spec.n_classes, dtype=np.int64)
    return FrameBatch(
        query=query,
        query_labels=np.repeat(classes, spec.n_query),
        speakers=np.array(speakers, dtype=np.int64),
        support=support,
        support_labels=np.repeat(classes, spec.n_support),
        num_classes=spec.n_classes,
    )


def sample_batch(dataset: Dataset, batch_size: int, seconds: float, rng: Rng) -> FrameBatch:
    """Random crops of random utterances for classification training"""

    if batch_size < 1:
        raise ValidationError("sample_batch: batch_size must be ≥ 1")
    picks: np.ndarray = rng.integers(0, len(dataset), size=batch_size)
    query: list[FrameSequence] = [crop(dataset.utterances[int(i)], seconds, rng) for i in picks]
    labels: np.ndarray = np.array([u.speaker for u in query], dtype=np.int64)
    return FrameBatch(
        query=query,
        query_labels=labels,
        speakers=labels.copy(),
        num_classes=dataset.num_speakers,
    )
