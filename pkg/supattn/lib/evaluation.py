# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Verification scoring: trials, cosine scores, EER, minDCF and DET curves.

A trial is accepted when its score is ≥ the threshold. DET points are taken
at every distinct score plus +inf, so the first point accepts everything
and the last one rejects everything.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from supattn.lib.data import Dataset, FrameSequence, crop
from supattn.lib.errors import ParseError, ValidationError
from supattn.lib.logging import Log
from supattn.lib.numerics import Rng
from supattn.lib.utils import threaded_map

EmbedFn = Callable[[FrameSequence], np.ndarray]


@dataclass(frozen=True)
class Trial:
    enroll_utterance_id: str
    test_utterance_id: str
    target: bool


@dataclass
class ScoredTrialSet:
    trials: list[Trial]
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if self.scores.shape != (len(self.trials),):
            raise ValidationError("ScoredTrialSet: need exactly one score per trial")
        if not np.all(np.isfinite(self.scores)):
            raise ValidationError("ScoredTrialSet: non-finite score")

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.target for t in self.trials], dtype=bool)

    @property
    def target_scores(self) -> np.ndarray:
        return self.scores[self.labels]

    @property
    def nontarget_scores(self) -> np.ndarray:
        return self.scores[~self.labels]

    @staticmethod
    def from_scores(targets, nontargets) -> ScoredTrialSet:
        """Anonymous trial set, handy when only the score lists matter"""

        targets = np.asarray(targets, dtype=np.float64).reshape(-1)
        nontargets = np.asarray(nontargets, dtype=np.float64).reshape(-1)
        trials: list[Trial] = [Trial(f"t{i}", f"t{i}", True) for i in range(targets.size)]
        trials += [Trial(f"n{i}", f"n{i}", False) for i in range(nontargets.size)]
        return ScoredTrialSet(trials, np.concatenate([targets, nontargets]))


@dataclass
class DcfConfig:
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0
    normalize: bool = True

    def validate(self) -> None:
        if not 0.0 < self.p_target < 1.0:
            raise ValidationError(f"DcfConfig: p_target must be in (0, 1), got {self.p_target}")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValidationError("DcfConfig: costs must be > 0")


@dataclass(frozen=True)
class DetPoint:
    threshold: float
    p_miss: float
    p_fa: float


# ------ SCORING ------ #


def cosine_score(e1: np.ndarray, e2: np.ndarray) -> float:
    e1 = np.asarray(e1, dtype=np.float64).reshape(-1)
    e2 = np.asarray(e2, dtype=np.float64).reshape(-1)
    if e1.shape != e2.shape:
        raise ValidationError(f"cosine_score: shapes {e1.shape} and {e2.shape} differ")
    n1: float = float(np.linalg.norm(e1))
    n2: float = float(np.linalg.norm(e2))
    if n1 < 1e-12 or n2 < 1e-12:
        raise ValidationError("cosine_score: zero-norm embedding")
    return float(np.clip(np.dot(e1, e2) / (n1 * n2), -1.0, 1.0))


def build_trials(dataset: Dataset, pairs_per_speaker: int, rng: Rng) -> list[Trial]:
    """
    Per speaker, pairs_per_speaker target pairs between its own utterances and
    as many nontarget pairs against other speakers. Every distinct pair is
    used before any pair repeats.
    """

    if pairs_per_speaker < 1:
        raise ValidationError("build_trials: pairs_per_speaker must be ≥ 1")
    if dataset.num_speakers < 2:
        raise ValidationError("build_trials: nontarget trials need at least 2 speakers")

    groups: list[list[FrameSequence]] = dataset.by_speaker
    for speaker, group in enumerate(groups):
        if len(group) < 2:
            raise ValidationError(
                f"build_trials: speaker {speaker} has {len(group)} utterance, needs ≥ 2"
            )

    trials: list[Trial] = []
    for speaker, group in enumerate(groups):
        ids: list[str] = [u.utterance_id for u in group]
        same: list[tuple[int, int]] = [
            (i, j) for i in range(len(ids)) for j in range(i + 1, len(ids))
        ]
        for k in _draw(len(same), pairs_per_speaker, rng):
            i, j = same[k]
            trials.append(Trial(ids[i], ids[j], True))

        others: list[str] = [
            u.utterance_id for s, g in enumerate(groups) if s != speaker for u in g
        ]
        for k in _draw(len(ids) * len(others), pairs_per_speaker, rng):
            trials.append(Trial(ids[k // len(others)], others[k % len(others)], False))

    Log.debug(f"Eval: Built {len(trials)} trials for {dataset.num_speakers} speakers")
    return trials


def _draw(population: int, count: int, rng: Rng) -> np.ndarray:
    """count indices, every distinct index once before any repeat"""

    if population >= count:
        return rng.choice(population, size=count, replace=False)
    distinct: np.ndarray = rng.permutation(population)
    return np.concatenate([distinct, rng.choice(population, size=count - population)])


def score_trials(trials: list[Trial], embeddings: dict[str, np.ndarray]) -> ScoredTrialSet:
    scores: list[float] = []
    for trial in trials:
        try:
            enroll: np.ndarray = embeddings[trial.enroll_utterance_id]
            test: np.ndarray = embeddings[trial.test_utterance_id]
        except KeyError as e:
            raise ValidationError(f"score_trials: no embedding for utterance {e}")
        scores.append(cosine_score(enroll, test))
    return ScoredTrialSet(list(trials), np.array(scores))


def duration_protocol(
    dataset: Dataset,
    trials: list[Trial],
    embed_fn: EmbedFn,
    test_seconds: float | None,
    rng: Rng,
) -> ScoredTrialSet:
    """
    Enroll with full utterances, test with one crop of test_seconds per test
    utterance (None keeps it whole). Crops are drawn in sorted id order.
    """

    enroll_ids: list[str] = sorted({t.enroll_utterance_id for t in trials})
    test_ids: list[str] = sorted({t.test_utterance_id for t in trials})

    enroll_frames: list[FrameSequence] = [dataset.get(i) for i in enroll_ids]
    test_frames: list[FrameSequence] = [dataset.get(i) for i in test_ids]
    if test_seconds is not None:
        test_frames = [crop(f, test_seconds, rng) for f in test_frames]

    enroll: list[np.ndarray] = threaded_map(embed_fn, enroll_frames)
    test: list[np.ndarray] = threaded_map(embed_fn, test_frames)
    enroll_map: dict[str, np.ndarray] = dict(zip(enroll_ids, enroll))
    test_map: dict[str, np.ndarray] = dict(zip(test_ids, test))

    scores: np.ndarray = np.array(
        [
            cosine_score(enroll_map[t.enroll_utterance_id], test_map[t.test_utterance_id])
            for t in trials
        ]
    )
    return ScoredTrialSet(list(trials), scores)


# ------ METRICS ------ #


def _check_classes(scores: ScoredTrialSet) -> tuple[np.ndarray, np.ndarray]:
    targets: np.ndarray = np.sort(scores.target_scores)
    nontargets: np.ndarray = np.sort(scores.nontarget_scores)
    if targets.size == 0 or nontargets.size == 0:
        raise ValidationError("Eval: need at least one target and one nontarget trial")
    return targets, nontargets


def _error_rates(scores: ScoredTrialSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, p_miss, p_fa) at every distinct score and +inf"""

    targets, nontargets = _check_classes(scores)
    thresholds: np.ndarray = np.append(np.unique(scores.scores), np.inf)
    # Misses: targets strictly below the threshold
    p_miss: np.ndarray = np.searchsorted(targets, thresholds, side="left") / targets.size
    # False alarms: nontargets at or above the threshold
    p_fa: np.ndarray = 1.0 - np.searchsorted(nontargets, thresholds, side="left") / nontargets.size
    return thresholds, p_miss, p_fa


def det_curve(scores: ScoredTrialSet) -> list[DetPoint]:
    thresholds, p_miss, p_fa = _error_rates(scores)
    return [
        DetPoint(float(t), float(m), float(f)) for t, m, f in zip(thresholds, p_miss, p_fa)
    ]


def compute_eer(scores: ScoredTrialSet) -> tuple[float, float]:
    """Returns (eer, threshold), interpolating linearly between DET points"""

    thresholds, p_miss, p_fa = _error_rates(scores)
    diff: np.ndarray = p_miss - p_fa
    k: int = int(np.flatnonzero(diff >= 0)[0])
    if diff[k] == 0.0 or k == 0:
        return float(p_miss[k]), float(thresholds[k])

    t: float = float(-diff[k - 1] / (diff[k] - diff[k - 1]))
    eer: float = float(p_miss[k - 1] + t * (p_miss[k] - p_miss[k - 1]))
    lo, hi = float(thresholds[k - 1]), float(thresholds[k])
    threshold: float = lo if math.isinf(hi) else lo + t * (hi - lo)
    return min(max(eer, 0.0), 1.0), threshold


def compute_min_dcf(scores: ScoredTrialSet, cfg: DcfConfig | None = None) -> tuple[float, float]:
    """Returns (min_dcf, threshold) over all DET points"""

    cfg = cfg or DcfConfig()
    cfg.validate()
    thresholds, p_miss, p_fa = _error_rates(scores)
    costs: np.ndarray = cfg.c_miss * p_miss * cfg.p_target + cfg.c_fa * p_fa * (1 - cfg.p_target)
    best: int = int(np.argmin(costs))
    value: float = float(costs[best])
    if cfg.normalize:
        value /= min(cfg.c_miss * cfg.p_target, cfg.c_fa * (1 - cfg.p_target))
    return value, float(thresholds[best])


def sign_test(wins: int, n: int) -> float:
    """One-sided binomial p-value P(X ≥ wins) for X ~ Binomial(n, 1/2)"""

    if n < 0 or not 0 <= wins <= max(n, 0):
        raise ValidationError(f"sign_test: need 0 ≤ wins ≤ n, got {wins} of {n}")
    tail: int = sum(math.comb(n, i) for i in range(wins, n + 1))
    return tail / 2**n


# ------ FILES ------ #


def write_trials(trials: list[Trial], path: str) -> None:
    with open(path, "w") as f:
        for t in trials:
            f.write(f"{int(t.target)} {t.enroll_utterance_id} {t.test_utterance_id}\n")


def read_trials(path: str) -> list[Trial]:
    trials: list[Trial] = []
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            tokens: list[str] = line.split()
            if not tokens:
                continue
            if len(tokens) != 3 or tokens[0] not in ("0", "1"):
                raise ParseError(path, number, "expected '<0|1> <enroll_id> <test_id>'")
            trials.append(Trial(tokens[1], tokens[2], tokens[0] == "1"))
    if not trials:
        raise ParseError(path, 1, "no trials")
    return trials


def write_scores(scores: ScoredTrialSet, path: str) -> None:
    with open(path, "w") as f:
        for trial, score in zip(scores.trials, scores.scores):
            f.write(f"{score:.17g} {trial.enroll_utterance_id} {trial.test_utterance_id}\n")


def write_det_csv(points: list[DetPoint], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "p_miss", "p_fa"])
        for p in points:
            writer.writerow([repr(p.threshold), repr(p.p_miss), repr(p.p_fa)])


def write_embeddings(embeddings: dict[str, np.ndarray], path: str) -> None:
    with open(path, "w") as f:
        for utt_id in sorted(embeddings):
            values: str = " ".join(f"{v:.17g}" for v in np.ravel(embeddings[utt_id]))
            f.write(f"{utt_id} {values}\n")


def read_embeddings(path: str) -> dict[str, np.ndarray]:
    embeddings: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            tokens: list[str] = line.split()
            if not tokens:
                continue
            if len(tokens) < 2:
                raise ParseError(path, number, "expected '<utt_id> v1 ... vE'")
            try:
                vector: np.ndarray = np.array([float(v) for v in tokens[1:]])
            except ValueError as e:
                raise ParseError(path, number, f"non-numeric value ({e})")
            if dim is not None and vector.size != dim:
                raise ParseError(path, number, f"expected {dim} values, found {vector.size}")
            dim = vector.size
            embeddings[tokens[0]] = vector
    return embeddings
