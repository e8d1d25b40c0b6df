# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Trainable parts of the embedding network.

Frames flow extractor (per-frame tanh MLP) -> pooling -> embedding head ->
classifier. The projection g_phi and the context vector mu belong to the
pooling layer, and g_phi is shared with the context losses.

Weights of the extractor and the head are stored (in, out) and applied as
x @ W + b. The projection follows h = tanh(W x + b), so rows use x @ W.T.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from supattn.lib.errors import ParseError, ValidationError
from supattn.lib.logging import Log
from supattn.lib.numerics import Rng

CHECKPOINT_MAGIC: str = "supattn-checkpoint"
CHECKPOINT_VERSION: int = 1


@dataclass
class ExtractorParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]


@dataclass
class ProjectionParams:
    weight: np.ndarray
    bias: np.ndarray

    @property
    def dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class ContextVector:
    mu: np.ndarray


@dataclass
class EmbedHeadParams:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class ClassifierParams:
    weight: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]


@dataclass
class ModelShape:
    feature_dim: int = 40
    hidden: tuple[int, ...] = (64,)
    frame_dim: int = 32
    embed_dim: int = 256
    num_classes: int = 20

    @property
    def layer_sizes(self) -> list[int]:
        return [self.feature_dim, *self.hidden, self.frame_dim]

    def validate(self) -> None:
        if min(self.layer_sizes) < 1 or self.embed_dim < 1:
            raise ValidationError(f"ModelShape: all sizes must be ≥ 1, got {self}")
        if self.num_classes < 2:
            raise ValidationError("ModelShape: classifier needs at least 2 classes")


@dataclass
class ModelParams:
    extractor: ExtractorParams
    proj: ProjectionParams
    context: ContextVector
    head: EmbedHeadParams
    classifier: ClassifierParams

    def named(self) -> dict[str, np.ndarray]:
        """Name -> array, in a fixed order. Arrays are the live parameters"""

        params: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.extractor.weights, self.extractor.biases)):
            params[f"extractor.{i}.weight"] = w
            params[f"extractor.{i}.bias"] = b
        params["proj.weight"] = self.proj.weight
        params["proj.bias"] = self.proj.bias
        params["mu"] = self.context.mu
        params["head.weight"] = self.head.weight
        params["head.bias"] = self.head.bias
        params["classifier.weight"] = self.classifier.weight
        return params

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.named().items())

    def copy(self) -> ModelParams:
        return ModelParams.from_named({k: v.copy() for k, v in self})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self}

    @staticmethod
    def from_named(named: dict[str, np.ndarray]) -> ModelParams:
        layers: int = 0
        while f"extractor.{layers}.weight" in named:
            layers += 1
        try:
            return ModelParams(
                extractor=ExtractorParams(
                    weights=[named[f"extractor.{i}.weight"] for i in range(layers)],
                    biases=[named[f"extractor.{i}.bias"] for i in range(layers)],
                ),
                proj=ProjectionParams(named["proj.weight"], named["proj.bias"]),
                context=ContextVector(named["mu"]),
                head=EmbedHeadParams(named["head.weight"], named["head.bias"]),
                classifier=ClassifierParams(named["classifier.weight"]),
            )
        except KeyError as e:
            raise ValidationError(f"Network: missing parameter {e}")


# ------ LAYERS ------ #


def _check_dim(actual: int, expected: int, what: str) -> None:
    if actual != expected:
        raise ValidationError(f"{what}: dimension mismatch, got {actual}, expected {expected}")


def extractor_forward(
    features: np.ndarray, params: ExtractorParams
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Apply the per-frame MLP. Returns (T×D output, cache for the backward pass)"""

    features = np.asarray(features, dtype=np.float64)
    _check_dim(features.shape[-1], params.in_dim, "extractor_forward")
    activations: list[np.ndarray] = [features]
    x: np.ndarray = features
    for w, b in zip(params.weights, params.biases):
        x = np.tanh(x @ w + b)
        activations.append(x)
    return x, activations


def extractor_backward(
    cache: list[np.ndarray], params: ExtractorParams, d_out: np.ndarray
) -> tuple[ExtractorParams, np.ndarray]:
    """Gradients for every layer and for the input frames"""

    d_weights: list[np.ndarray] = [np.empty(0)] * len(params.weights)
    d_biases: list[np.ndarray] = [np.empty(0)] * len(params.biases)
    grad: np.ndarray = d_out
    for i in reversed(range(len(params.weights))):
        out: np.ndarray = cache[i + 1]
        d_pre: np.ndarray = grad * (1.0 - out * out)
        d_weights[i] = cache[i].T @ d_pre
        d_biases[i] = d_pre.sum(axis=0)
        grad = d_pre @ params.weights[i].T
    return ExtractorParams(d_weights, d_biases), grad


def project_gphi(x: np.ndarray, params: ProjectionParams) -> np.ndarray:
    """h = tanh(W x + b) for a vector, or row-wise for a T×D matrix"""

    x = np.asarray(x, dtype=np.float64)
    _check_dim(x.shape[-1], params.dim, "project_gphi")
    return np.tanh(x @ params.weight.T + params.bias)


def project_gphi_backward(
    x: np.ndarray, h: np.ndarray, params: ProjectionParams, d_h: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dW, db, dx) for row-wise inputs"""

    x2: np.ndarray = np.atleast_2d(x)
    d_pre: np.ndarray = np.atleast_2d(d_h) * (1.0 - np.atleast_2d(h) ** 2)
    d_weight: np.ndarray = d_pre.T @ x2
    d_bias: np.ndarray = d_pre.sum(axis=0)
    d_x: np.ndarray = (d_pre @ params.weight).reshape(np.shape(x))
    return d_weight, d_bias, d_x


def embed_head(e: np.ndarray, params: EmbedHeadParams) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    _check_dim(e.shape[-1], params.weight.shape[0], "embed_head")
    return e @ params.weight + params.bias


def embed_head_backward(
    e: np.ndarray, params: EmbedHeadParams, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dW, db, de) for a vector or a batch of rows"""

    e2: np.ndarray = np.atleast_2d(e)
    d2: np.ndarray = np.atleast_2d(d_out)
    d_e: np.ndarray = (d2 @ params.weight.T).reshape(np.shape(e))
    return e2.T @ d2, d2.sum(axis=0), d_e


# ------ INITIALIZATION ------ #


def glorot_uniform(fan_in: int, fan_out: int, shape: tuple[int, ...], rng: Rng) -> np.ndarray:
    limit: float = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def init_params(shape: ModelShape, rng: Rng) -> ModelParams:
    """Glorot-uniform weights, zero biases, zero context vector (SAP starts as TAP)"""

    shape.validate()
    sizes: list[int] = shape.layer_sizes
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(glorot_uniform(fan_in, fan_out, (fan_in, fan_out), rng))
        biases.append(np.zeros(fan_out))

    dim: int = shape.frame_dim
    params = ModelParams(
        extractor=ExtractorParams(weights, biases),
        proj=ProjectionParams(glorot_uniform(dim, dim, (dim, dim), rng), np.zeros(dim)),
        context=ContextVector(np.zeros(dim)),
        head=EmbedHeadParams(
            glorot_uniform(dim, shape.embed_dim, (dim, shape.embed_dim), rng),
            np.zeros(shape.embed_dim),
        ),
        classifier=ClassifierParams(
            glorot_uniform(
                shape.embed_dim,
                shape.num_classes,
                (shape.num_classes, shape.embed_dim),
                rng,
            )
        ),
    )
    Log.debug(f"Network: Initialized {sum(v.size for _, v in params)} parameters")
    return params


def model_shape_of(params: ModelParams) -> ModelShape:
    sizes: list[int] = [params.extractor.in_dim] + [w.shape[1] for w in params.extractor.weights]
    return ModelShape(
        feature_dim=sizes[0],
        hidden=tuple(sizes[1:-1]),
        frame_dim=sizes[-1],
        embed_dim=params.head.weight.shape[1],
        num_classes=params.classifier.num_classes,
    )


# ------ CHECKPOINTS ------ #


def save_checkpoint(params: ModelParams, path: str, pooling: str) -> None:
    """Text checkpoint: header, then 'name rows cols' and row-major rows"""

    lines: list[str] = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {pooling}"]
    for name, value in params:
        matrix: np.ndarray = np.atleast_2d(value)
        lines.append(f"{name} {matrix.shape[0]} {matrix.shape[1]}")
        for row in matrix:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    Log.debug(f"Network: Saved checkpoint '{path}'")


def load_checkpoint(path: str) -> tuple[ModelParams, str]:
    """Returns (params, pooling)"""

    with open(path, "r") as f:
        lines: list[str] = f.read().splitlines()
    if not lines:
        raise ParseError(path, 1, "empty checkpoint")
    header: list[str] = lines[0].split()
    if len(header) != 3 or header[0] != CHECKPOINT_MAGIC:
        raise ParseError(path, 1, f"expected '{CHECKPOINT_MAGIC} <version> <pooling>'")
    if header[1] != str(CHECKPOINT_VERSION):
        raise ParseError(path, 1, f"unsupported checkpoint version {header[1]}")
    pooling: str = header[2]

    named: dict[str, np.ndarray] = {}
    i: int = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        tokens: list[str] = lines[i].split()
        if len(tokens) != 3:
            raise ParseError(path, i + 1, "expected 'name rows cols'")
        name: str = tokens[0]
        try:
            rows, cols = int(tokens[1]), int(tokens[2])
            values: np.ndarray = np.array(
                [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
            )
        except (ValueError, IndexError) as e:
            raise ParseError(path, i + 1, f"bad tensor '{name}': {e}")
        if values.shape != (rows, cols):
            raise ParseError(path, i + 1, f"tensor '{name}' is not {rows}×{cols}")
        is_vector: bool = name.endswith(".bias") or name == "mu"
        named[name] = values[0].copy() if is_vector else values
        i += 1 + rows

    Log.debug(f"Network: Loaded checkpoint '{path}'")
    return ModelParams.from_named(named), pooling
