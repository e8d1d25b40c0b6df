# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Training losses with hand-written gradients.

Classification losses act on head embeddings (dimension E). Context losses
act on pooled embeddings e (dimension D), pass them through the shared
projection g_phi and compare the result with the context vector mu.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from supattn.lib.errors import ValidationError
from supattn.lib.logging import Log
from supattn.lib.network import (
    ClassifierParams,
    ContextVector,
    ProjectionParams,
    project_gphi,
    project_gphi_backward,
)
from supattn.lib.numerics import log_softmax_rows, normalize_rows, normalize_rows_backward

# Below this norm the context vector counts as zero
MU_EPS: float = 1e-12


class Variant(str, Enum):
    TAP = "TAP"
    SAP = "SAP"
    APF = "APF"
    ANF = "ANF"
    ADF = "ADF"

    @property
    def attentive(self) -> bool:
        return self is not Variant.TAP

    @property
    def has_context_loss(self) -> bool:
        return self in (Variant.APF, Variant.ANF, Variant.ADF)


class Objective(str, Enum):
    SOFTMAX = "softmax"
    AM_SOFTMAX = "am_softmax"
    PL_SOFTMAX = "pl_softmax"

    @property
    def episodic(self) -> bool:
        return self is Objective.PL_SOFTMAX


@dataclass
class AmSoftmaxConfig:
    s: float = 40.0
    m: float = 0.1

    def validate(self) -> None:
        if self.s <= 0 or self.m < 0:
            raise ValidationError(f"AmSoftmaxConfig: need s > 0 and m ≥ 0, got {self}")


@dataclass
class Feedback:
    correct: np.ndarray

    @property
    def cor(self) -> np.ndarray:
        """Indices of correctly classified samples (D_cor)"""
        return np.flatnonzero(self.correct)

    @property
    def mis(self) -> np.ndarray:
        """Indices of misclassified samples (D_mis, also written D_in)"""
        return np.flatnonzero(~self.correct)

    @property
    def accuracy(self) -> float:
        return float(self.correct.mean()) if self.correct.size else 0.0


@dataclass
class Episode:
    """Support and query embeddings with labels in 0..N-1"""

    support: np.ndarray
    support_labels: np.ndarray
    query: np.ndarray
    query_labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.support_labels = np.asarray(self.support_labels, dtype=np.int64)
        self.query_labels = np.asarray(self.query_labels, dtype=np.int64)
        for labels in (self.support_labels, self.query_labels):
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ValidationError(f"Episode: labels must be in 0..{self.num_classes - 1}")


@dataclass
class ClassifierLoss:
    """Value and gradients of a loss over (embeddings, classifier weights)"""

    value: float
    predictions: np.ndarray
    d_embeddings: np.ndarray
    d_weight: np.ndarray


@dataclass
class PrototypicalLoss:
    value: float
    d_query: np.ndarray
    d_support: np.ndarray


@dataclass
class ContextLoss:
    """
    Value of L_mu and its gradients wrt pooled embeddings, W, b and mu.
    samples counts the embeddings the value was computed over, 0 when skipped.
    """

    value: float
    d_embeddings: np.ndarray
    d_weight: np.ndarray
    d_bias: np.ndarray
    d_mu: np.ndarray
    samples: int = 0

    @staticmethod
    def zero(embeddings: np.ndarray, proj: ProjectionParams) -> ContextLoss:
        return ContextLoss(
            value=0.0,
            d_embeddings=np.zeros_like(embeddings, dtype=np.float64),
            d_weight=np.zeros_like(proj.weight),
            d_bias=np.zeros_like(proj.bias),
            d_mu=np.zeros(proj.dim),
        )


@dataclass
class LossParts:
    l_s: float | None = None
    l_pl: float | None = None
    l_am: float | None = None
    l_mu: float | None = None


@dataclass
class LossBundle:
    total: float
    l_s: float = 0.0
    l_pl: float = 0.0
    l_am: float = 0.0
    l_mu: float = 0.0
    grads: dict[str, np.ndarray] = field(default_factory=dict)


# ------ DISTANCE ------ #


def scaled_cosine_distance(a1: np.ndarray, a2: np.ndarray) -> float:
    """a1ᵀa2 / ‖a2‖ = ‖a1‖ cos(a1, a2)"""

    norm: float = float(np.linalg.norm(a2))
    if norm < 1e-12:
        raise ValidationError("scaled_cosine_distance: a2 has zero norm")
    return float(np.dot(a1, a2) / norm)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient wrt the logits"""

    batch: int = logits.shape[0]
    log_p: np.ndarray = log_softmax_rows(logits)
    rows: np.ndarray = np.arange(batch)
    value: float = float(-log_p[rows, labels].mean())
    d_logits: np.ndarray = np.exp(log_p)
    d_logits[rows, labels] -= 1.0
    return value, d_logits / batch


def _check_batch(embeddings: np.ndarray, labels: np.ndarray, classes: int) -> tuple:
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if embeddings.shape[0] == 0 or labels.shape != (embeddings.shape[0],):
        raise ValidationError("loss: need one label per embedding and a nonempty batch")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValidationError(f"loss: labels must be < {classes}")
    return embeddings, labels


# ------ CLASSIFICATION ------ #


def softmax_loss(
    embeddings: np.ndarray, labels: np.ndarray, classifier: ClassifierParams
) -> ClassifierLoss:
    """Softmax cross-entropy over scaled-cosine logits d(x_i, w_j)"""

    x, labels = _check_batch(embeddings, labels, classifier.num_classes)
    w_unit, w_norms = normalize_rows(classifier.weight, "softmax_loss: classifier weight")
    logits: np.ndarray = x @ w_unit.T
    value, d_logits = _cross_entropy(logits, labels)
    d_w_unit: np.ndarray = d_logits.T @ x
    return ClassifierLoss(
        value=value,
        predictions=np.argmax(logits, axis=1),
        d_embeddings=d_logits @ w_unit,
        d_weight=normalize_rows_backward(d_w_unit, w_unit, w_norms),
    )


def am_softmax_loss(
    embeddings: np.ndarray,
    labels: np.ndarray,
    classifier: ClassifierParams,
    cfg: AmSoftmaxConfig | None = None,
) -> ClassifierLoss:
    """Additive-margin softmax over cosines of normalized embeddings and weights"""

    cfg = cfg or AmSoftmaxConfig()
    cfg.validate()
    x, labels = _check_batch(embeddings, labels, classifier.num_classes)
    x_unit, x_norms = normalize_rows(x, "am_softmax_loss: embedding")
    w_unit, w_norms = normalize_rows(classifier.weight, "am_softmax_loss: classifier weight")

    cosines: np.ndarray = x_unit @ w_unit.T
    rows: np.ndarray = np.arange(x.shape[0])
    logits: np.ndarray = cfg.s * cosines
    logits[rows, labels] -= cfg.s * cfg.m
    value, d_logits = _cross_entropy(logits, labels)

    d_cos: np.ndarray = cfg.s * d_logits
    return ClassifierLoss(
        value=value,
        predictions=np.argmax(cosines, axis=1),
        d_embeddings=normalize_rows_backward(d_cos @ w_unit, x_unit, x_norms),
        d_weight=normalize_rows_backward(d_cos.T @ x_unit, w_unit, w_norms),
    )


# ------ EPISODIC ------ #


def prototypes(episode: Episode) -> np.ndarray:
    """Class means of the support embeddings, N×E"""

    support: np.ndarray = np.atleast_2d(np.asarray(episode.support, dtype=np.float64))
    protos: np.ndarray = np.zeros((episode.num_classes, support.shape[1]))
    for c in range(episode.num_classes):
        members: np.ndarray = support[episode.support_labels == c]
        if members.shape[0] == 0:
            raise ValidationError(f"prototypes: class {c} has no support examples")
        protos[c] = members.mean(axis=0)
    return protos


def prototypical_loss(episode: Episode, protos: np.ndarray | None = None) -> PrototypicalLoss:
    """Cross-entropy of the query over scaled-cosine distances to the prototypes"""

    if protos is None:
        protos = prototypes(episode)
    query, labels = _check_batch(episode.query, episode.query_labels, episode.num_classes)
    p_unit, p_norms = normalize_rows(protos, "prototypical_loss: prototype")

    logits: np.ndarray = query @ p_unit.T
    value, d_logits = _cross_entropy(logits, labels)
    d_protos: np.ndarray = normalize_rows_backward(d_logits.T @ query, p_unit, p_norms)

    counts: np.ndarray = np.bincount(episode.support_labels, minlength=episode.num_classes)
    d_support: np.ndarray = d_protos[episode.support_labels] / counts[
        episode.support_labels, None
    ]
    return PrototypicalLoss(value=value, d_query=d_logits @ p_unit, d_support=d_support)


def feedback_partition(predictions: np.ndarray, labels: np.ndarray) -> Feedback:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValidationError("feedback_partition: predictions and labels differ in length")
    return Feedback(correct=predictions == labels)


# ------ CONTEXT LOSSES ------ #


def _cosine_to_mu(
    embeddings: np.ndarray, proj: ProjectionParams, mu: ContextVector, sign: float
) -> ContextLoss:
    """L = sign · mean_i cos(g_phi(e_i), mu) with all gradients"""

    e: np.ndarray = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    count: int = e.shape[0]
    u: np.ndarray = project_gphi(e, proj)
    u_unit, u_norms = normalize_rows(u, "context loss: projected embedding")
    mu_norm: float = float(np.linalg.norm(mu.mu))
    mu_unit: np.ndarray = mu.mu / mu_norm

    cosines: np.ndarray = u_unit @ mu_unit
    value: float = sign * float(cosines.mean())

    # d cos / d u = (mu_unit - cos · u_unit) / ‖u‖
    coeff: float = sign / count
    d_u: np.ndarray = coeff * (mu_unit[None, :] - cosines[:, None] * u_unit) / u_norms
    d_mu: np.ndarray = coeff * (u_unit.sum(axis=0) - cosines.sum() * mu_unit) / mu_norm

    d_weight, d_bias, d_e = project_gphi_backward(e, u, proj, d_u)
    return ContextLoss(
        value=value, d_embeddings=d_e, d_weight=d_weight, d_bias=d_bias, d_mu=d_mu, samples=count
    )


def _cosine_feedback(
    embeddings: np.ndarray, proj: ProjectionParams, mu: ContextVector, sign: float, name: str
) -> ContextLoss:
    """Cosine loss over the rows whose cosine with mu is defined"""

    e: np.ndarray = np.asarray(embeddings, dtype=np.float64).reshape(-1, proj.dim)
    if e.shape[0] == 0:
        return ContextLoss.zero(e, proj)
    if np.linalg.norm(mu.mu) < MU_EPS:
        Log.warning(f"Objectives: {name} with zero context vector, loss set to 0")
        return ContextLoss.zero(e, proj)

    keep: np.ndarray = np.linalg.norm(project_gphi(e, proj), axis=1) >= MU_EPS
    if keep.all():
        return _cosine_to_mu(e, proj, mu, sign)
    Log.warning(f"Objectives: {name} skips {int((~keep).sum())} sample(s) with zero projection")
    if not keep.any():
        return ContextLoss.zero(e, proj)
    part: ContextLoss = _cosine_to_mu(e[keep], proj, mu, sign)
    d_embeddings: np.ndarray = np.zeros_like(e)
    d_embeddings[keep] = part.d_embeddings
    part.d_embeddings = d_embeddings
    return part


def apf_loss(embeddings: np.ndarray, proj: ProjectionParams, mu: ContextVector) -> ContextLoss:
    """Positive feedback: -mean cos(g_phi(e), mu) over correctly classified e"""

    return _cosine_feedback(embeddings, proj, mu, -1.0, "APF")


def anf_loss(embeddings: np.ndarray, proj: ProjectionParams, mu: ContextVector) -> ContextLoss:
    """Negative feedback: +mean cos(g_phi(e), mu) over misclassified e"""

    return _cosine_feedback(embeddings, proj, mu, 1.0, "ANF")


def adf_probability(
    embeddings: np.ndarray, proj: ProjectionParams, mu: ContextVector
) -> np.ndarray:
    """p(cor | e) under the two-way classifier with weights mu and -mu"""

    logit: np.ndarray = project_gphi(np.atleast_2d(embeddings), proj) @ mu.mu
    # exp(r) / (exp(r) + exp(-r)) in a stable form
    return np.exp(-np.logaddexp(0.0, -2.0 * logit))


def adf_loss(
    embeddings: np.ndarray, feedback: Feedback, proj: ProjectionParams, mu: ContextVector
) -> ContextLoss:
    """Dual feedback: cross-entropy of the ±mu classifier against the feedback labels"""

    e: np.ndarray = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    count: int = e.shape[0]
    if count == 0 or feedback.correct.shape != (count,):
        raise ValidationError("adf_loss: need a nonempty batch with one feedback flag each")

    u: np.ndarray = project_gphi(e, proj)
    r: np.ndarray = u @ mu.mu
    z: np.ndarray = np.where(feedback.correct, 1.0, -1.0)
    margin: np.ndarray = 2.0 * z * r
    value: float = float(np.logaddexp(0.0, -margin).mean())

    # d/dr softplus(-2zr) = -2z · sigmoid(-2zr)
    d_r: np.ndarray = -2.0 * z * np.exp(-np.logaddexp(0.0, margin)) / count
    d_u: np.ndarray = np.outer(d_r, mu.mu)
    d_mu: np.ndarray = d_r @ u

    d_weight, d_bias, d_e = project_gphi_backward(e, u, proj, d_u)
    return ContextLoss(
        value=value, d_embeddings=d_e, d_weight=d_weight, d_bias=d_bias, d_mu=d_mu, samples=count
    )


def context_loss(
    variant: Variant,
    embeddings: np.ndarray,
    feedback: Feedback,
    proj: ProjectionParams,
    mu: ContextVector,
) -> ContextLoss:
    """Dispatch to the variant's L_mu. Gradients come back batch-shaped"""

    e: np.ndarray = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if variant is Variant.ADF:
        return adf_loss(e, feedback, proj, mu)

    indices: np.ndarray = feedback.cor if variant is Variant.APF else feedback.mis
    if variant is Variant.APF:
        part: ContextLoss = apf_loss(e[indices], proj, mu)
    elif variant is Variant.ANF:
        part = anf_loss(e[indices], proj, mu)
    else:
        raise ValidationError(f"context_loss: {variant.value} has no context loss")

    d_embeddings: np.ndarray = np.zeros_like(e)
    d_embeddings[indices] = part.d_embeddings
    part.d_embeddings = d_embeddings
    return part


# ------ TOTAL ------ #


def total_objective(
    parts: LossParts,
    variant: Variant,
    objective: Objective,
    lambda_mu: float = 1.0,
    grads: dict[str, np.ndarray] | None = None,
) -> LossBundle:
    """Weighted sum of the components required by (variant, objective)"""

    if variant.has_context_loss != (parts.l_mu is not None):
        raise ValidationError(
            f"total_objective: variant {variant.value} "
            f"{'needs' if variant.has_context_loss else 'has no'} a context loss"
        )

    if objective.episodic:
        if parts.l_pl is None or parts.l_s is None:
            raise ValidationError("total_objective: pl_softmax needs L_PL and L_s")
        base: float = parts.l_pl + parts.l_s
    elif objective is Objective.SOFTMAX:
        if parts.l_s is None or parts.l_am is not None or parts.l_pl is not None:
            raise ValidationError("total_objective: softmax objective takes L_s only")
        base = parts.l_s
    else:
        if parts.l_am is None or parts.l_s is not None or parts.l_pl is not None:
            raise ValidationError("total_objective: am_softmax objective takes L_AM only")
        base = parts.l_am

    total: float = base
    if parts.l_mu is not None:
        total = base + lambda_mu * parts.l_mu

    return LossBundle(
        total=total,
        l_s=parts.l_s or 0.0,
        l_pl=parts.l_pl or 0.0,
        l_am=parts.l_am or 0.0,
        l_mu=parts.l_mu or 0.0,
        grads=grads or {},
    )
