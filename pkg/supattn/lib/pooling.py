# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Temporal aggregation: average pooling and self-attentive pooling.

SAP scores each frame by the similarity of its projection to the context
vector and returns the softmax-weighted sum of the raw frames.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from supattn.lib.errors import ValidationError
from supattn.lib.network import ContextVector, ProjectionParams, project_gphi
from supattn.lib.numerics import softmax


@dataclass
class AttentionOutput:
    hidden: np.ndarray
    scores: np.ndarray
    weights: np.ndarray
    embedding: np.ndarray

    @property
    def argmax(self) -> int:
        # np.argmax returns the lowest index on ties
        return int(np.argmax(self.weights))


@dataclass
class SapGrads:
    frames: np.ndarray
    weight: np.ndarray
    bias: np.ndarray
    mu: np.ndarray


def _check_frames(frames: np.ndarray, name: str) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValidationError(f"{name}: expected T×D frames with T ≥ 1, got {frames.shape}")
    return frames


def tap(frames: np.ndarray) -> np.ndarray:
    frames = _check_frames(frames, "tap")
    return frames.mean(axis=0)


def tap_backward(frames: np.ndarray, d_embedding: np.ndarray) -> np.ndarray:
    num_frames: int = np.shape(frames)[0]
    return np.tile(d_embedding / num_frames, (num_frames, 1))


def sap(frames: np.ndarray, proj: ProjectionParams, mu: ContextVector) -> AttentionOutput:
    frames = _check_frames(frames, "sap")
    if mu.mu.shape != (proj.dim,):
        raise ValidationError(
            f"sap: context vector has shape {mu.mu.shape}, expected ({proj.dim},)"
        )
    hidden: np.ndarray = project_gphi(frames, proj)
    scores: np.ndarray = hidden @ mu.mu
    weights: np.ndarray = softmax(scores)
    if not np.any(mu.mu):
        # Zero context: uniform weights, same summation as tap
        embedding: np.ndarray = frames.mean(axis=0)
    else:
        embedding = weights @ frames
    return AttentionOutput(hidden=hidden, scores=scores, weights=weights, embedding=embedding)


def sap_backward(
    frames: np.ndarray,
    out: AttentionOutput,
    proj: ProjectionParams,
    mu: ContextVector,
    d_embedding: np.ndarray,
) -> SapGrads:
    """Chain rule through the weighted sum, the softmax and the projection"""

    frames = np.asarray(frames, dtype=np.float64)
    w: np.ndarray = out.weights
    d_frames: np.ndarray = np.outer(w, d_embedding)

    d_w: np.ndarray = frames @ d_embedding
    d_scores: np.ndarray = w * (d_w - np.dot(w, d_w))

    d_hidden: np.ndarray = np.outer(d_scores, mu.mu)
    d_mu: np.ndarray = d_scores @ out.hidden

    d_pre: np.ndarray = d_hidden * (1.0 - out.hidden**2)
    d_weight: np.ndarray = d_pre.T @ frames
    d_bias: np.ndarray = d_pre.sum(axis=0)
    d_frames += d_pre @ proj.weight

    return SapGrads(frames=d_frames, weight=d_weight, bias=d_bias, mu=d_mu)


# ------ DIAGNOSTICS ------ #


def attention_dump(out: AttentionOutput, path: str, mask: np.ndarray | None = None) -> None:
    """Per-frame CSV: frame_index, score, weight, informative_mask"""

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_index", "score", "weight", "informative_mask"])
        for t, (score, weight) in enumerate(zip(out.scores, out.weights)):
            flag: str = "" if mask is None else str(int(bool(mask[t])))
            writer.writerow([t, repr(float(score)), repr(float(weight)), flag])


@dataclass
class AttentionStatistics:
    informative_mean: float
    distractor_mean: float
    utterances: int
    informative_wins: int

    @property
    def win_rate(self) -> float:
        return self.informative_wins / self.utterances if self.utterances else 0.0


def attention_statistics(
    weights: list[np.ndarray], masks: list[np.ndarray]
) -> AttentionStatistics:
    """
    Mean attention weight on informative vs distractor frames. An utterance
    counts as a win when its informative frames get the larger mean weight.
    """

    informative: list[np.ndarray] = []
    distractor: list[np.ndarray] = []
    wins: int = 0
    counted: int = 0
    for w, mask in zip(weights, masks):
        mask = np.asarray(mask, dtype=bool)
        if mask.all() or not mask.any():
            continue
        informative.append(w[mask])
        distractor.append(w[~mask])
        counted += 1
        if w[mask].mean() > w[~mask].mean():
            wins += 1

    return AttentionStatistics(
        informative_mean=float(np.concatenate(informative).mean()) if informative else 0.0,
        distractor_mean=float(np.concatenate(distractor).mean()) if distractor else 0.0,
        utterances=counted,
        informative_wins=wins,
    )
