# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Composition of the network layers for whole utterances and batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from supattn.lib.data import FrameSequence
from supattn.lib.network import (
    ModelParams,
    embed_head,
    extractor_backward,
    extractor_forward,
)
from supattn.lib.pooling import AttentionOutput, sap, sap_backward, tap, tap_backward


@dataclass
class SequenceCache:
    activations: list[np.ndarray]
    attention: AttentionOutput | None
    pooled: np.ndarray

    @property
    def frames(self) -> np.ndarray:
        return self.activations[-1]


def forward_sequence(params: ModelParams, features: np.ndarray, attentive: bool) -> SequenceCache:
    frames, activations = extractor_forward(features, params.extractor)
    if attentive:
        attention: AttentionOutput | None = sap(frames, params.proj, params.context)
        pooled: np.ndarray = attention.embedding
    else:
        attention = None
        pooled = tap(frames)
    return SequenceCache(activations=activations, attention=attention, pooled=pooled)


def forward_batch(
    params: ModelParams, sequences: list[FrameSequence], attentive: bool
) -> tuple[list[SequenceCache], np.ndarray, np.ndarray]:
    """Returns (caches, pooled B×D, embeddings B×E)"""

    caches: list[SequenceCache] = [
        forward_sequence(params, s.features, attentive) for s in sequences
    ]
    pooled: np.ndarray = np.stack([c.pooled for c in caches])
    return caches, pooled, embed_head(pooled, params.head)


def backward_batch(
    params: ModelParams,
    caches: list[SequenceCache],
    d_pooled: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate pooling and extractor gradients into grads"""

    for cache, d_e in zip(caches, d_pooled):
        if cache.attention is not None:
            sap_grads = sap_backward(
                cache.frames, cache.attention, params.proj, params.context, d_e
            )
            grads["proj.weight"] += sap_grads.weight
            grads["proj.bias"] += sap_grads.bias
            grads["mu"] += sap_grads.mu
            d_frames: np.ndarray = sap_grads.frames
        else:
            d_frames = tap_backward(cache.frames, d_e)
        layer_grads, _ = extractor_backward(cache.activations, params.extractor, d_frames)
        for i, (d_w, d_b) in enumerate(zip(layer_grads.weights, layer_grads.biases)):
            grads[f"extractor.{i}.weight"] += d_w
            grads[f"extractor.{i}.bias"] += d_b


def embed(params: ModelParams, frames: FrameSequence, attentive: bool) -> np.ndarray:
    """d-vector of one utterance: the embedding head output"""

    cache: SequenceCache = forward_sequence(params, frames.features, attentive)
    return embed_head(cache.pooled, params.head)
