# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Finite-difference checks of every hand-written backward pass.

Each check draws small random inputs from its own seeded stream, reduces
the operation's output to a scalar with a fixed random direction and
compares analytic against central-difference gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from supattn.lib.errors import ValidationError
from supattn.lib.logging import Log
from supattn.lib.network import (
    ClassifierParams,
    ContextVector,
    EmbedHeadParams,
    ExtractorParams,
    ProjectionParams,
    embed_head,
    embed_head_backward,
    extractor_backward,
    extractor_forward,
    project_gphi,
    project_gphi_backward,
)
from supattn.lib.numerics import GradCheckReport, Matrix, Rng, grad_check, seeded_rng
from supattn.lib.objectives import (
    AmSoftmaxConfig,
    Episode,
    Feedback,
    adf_loss,
    am_softmax_loss,
    anf_loss,
    apf_loss,
    prototypical_loss,
    softmax_loss,
)
from supattn.lib.pooling import sap, sap_backward

# Small enough that the suite over 10 seeds runs in seconds
FEATURES: int = 4
HIDDEN: int = 4
DIM: int = 3
EMBED: int = 4
CLASSES: int = 3
FRAMES: int = 5
BATCH: int = 4

# A moderate scale keeps the AM-Softmax probabilities away from 0 and 1
AM_CHECK: AmSoftmaxConfig = AmSoftmaxConfig(s=3.0, m=0.2)

Check = Callable[[Rng, float, float], GradCheckReport]


@dataclass
class GradSuiteResult:
    operation: str
    seed: int
    report: GradCheckReport


def _check_extractor(rng: Rng, eps: float, tol: float) -> GradCheckReport:
    r: Matrix = rng.standard_normal((FRAMES, DIM))

    def fn(p: list[Matrix]):
        ext = ExtractorParams([p[0], p[2]], [p[1], p[3]])
        out, cache = extractor_forward(p[4], ext)
        d_params, d_input = extractor_backward(cache, ext, r)
        grads = [d_params.weights[0], d_params.biases[0], d_params.weights[1], d_params.biases[1]]
        return float(np.sum(r * out)), [*grads, d_input]

    params: list[Matrix] = [
        rng.standard_normal((FEATURES, HIDDEN)) * 0.5,
        rng.standard_normal(HIDDEN) * 0.1,
        rng.standard_normal((HIDDEN, DIM)) * 0.5,
        rng.standard_normal(DIM) * 0.1,
        rng.standard_normal((FRAMES, FEATURES)),
    ]
    return grad_check(fn, params, eps, tol, ["w0", "b0", "w1", "b1", "features"])


def _check_gphi(rng: Rng, eps: float, tol: float) -> GradCheckReport:
    r: Matrix = rng.standard_normal((BATCH, DIM))

    def fn(p: list[Matrix]):
        proj = ProjectionParams(p[0], p[1])
        h: Matrix = project_gphi(p[2], proj)
        return float(np.sum(r * h)), list(project_gphi_backward(p[2], h, proj, r))

    params: list[Matrix] = [
        rng.standard_normal((DIM, DIM)) * 0.5,
        rng.standard_normal(DIM) * 0.1,
        rng.standard_normal((BATCH, DIM)),
    ]
    return grad_check(fn, params, eps, tol, ["weight", "bias", "x"])


def _check_head(rng: Rng, eps: float, tol: float) -> GradCheckReport:
    r: Matrix = rng.standard_normal((BATCH, EMBED))

    def fn(p: list[Matrix]):
        head = EmbedHeadParams(p[0], p[1])
        out: Matrix = embed_head(p[2], head)
        return float(np.sum(r * out)), list(embed_head_backward(p[2], head, r))

    params: list[Matrix] = [
        rng.standard_normal((DIM, EMBED)),
        rng.standard_normal(EMBED),
        rng.standard_normal((BATCH, DIM)),
    ]
    return grad_check(fn, params, eps, tol, ["weight", "bias", "e"])


def _check_sap(rng: Rng, eps: float, tol: float) -> GradCheckReport:
    r: Matrix = rng.standard_normal(DIM)

    def fn(p: list[Matrix]):
        proj = ProjectionParams(p[1], p[2])
        mu = ContextVector(p[3])
        out = sap(p[0], proj, mu)
        g = sap_backward(p[0], out, proj, mu, r)
        return float(r @ out.embedding), [g.frames, g.weight, g.bias, g.mu]

    params: list[Matrix] = [
        rng.standard_normal((FRAMES, DIM)),
        rng.standard_normal((DIM, DIM)) * 0.5,
        rng.standard_normal(DIM) * 0.1,
        rng.standard_normal(DIM),
    ]
    return grad_check(fn, params, eps, tol, ["frames", "weight", "bias", "mu"])


def _labels(rng: Rng) -> np.ndarray:
    return rng.integers(0, CLASSES, size=BATCH)


def _check_softmax(rng: Rng, eps: float, tol: float) -> GradCheckReport:
    labels: np.ndarray = _labels(rng)

    def fn(p: list[Matrix]):
        loss = softmax_loss(p[0], labels, ClassifierParams(p[1]))
        return loss.value, [loss.d_embeddings, loss.d_weight]

    params: list[Matrix] = [
        rng.standard_normal((BATCH, EMBED)),
        rng.standard_normal((CLASSES, EMBED)),
    ]
    return grad_check(fn, params, eps, tol, ["embeddings", "classifier"])


def _check_am_softmax(rng: Rng, eps: float, tol: float) -> GradCheckReport:
    labels: np.ndarray = _labels(rng)

    def fn(p: list[Matrix]):
        loss = am_softmax_loss(p[0], labels, ClassifierParams(p[1]), AM_CHECK)
        return loss.value, [loss.d_embeddings, loss.d_weight]

    params: list[Matrix] = [
        rng.standard_normal((BATCH, EMBED)),
        rng.standard_normal((CLASSES, EMBED)),
    ]
    return grad_check(fn, params, eps, tol, ["embeddings", "classifier"])


def _check_prototypical(rng: Rng, eps: float, tol: float) -> GradCheckReport:
    support_labels: np.ndarray = np.repeat(np.arange(CLASSES), 2)
    query_labels: np.ndarray = np.repeat(np.arange(CLASSES), 2)

    def fn(p: list[Matrix]):
        loss = prototypical_loss(Episode(p[0], support_labels, p[1], query_labels, CLASSES))
        return loss.value, [loss.d_support, loss.d_query]

    params: list[Matrix] = [
        rng.standard_normal((support_labels.size, EMBED)),
        rng.standard_normal((query_labels.size, EMBED)),
    ]
    return grad_check(fn, params, eps, tol, ["support", "query"])


def _context_params(rng: Rng) -> list[Matrix]:
    return [
        rng.standard_normal((BATCH, DIM)),
        rng.standard_normal((DIM, DIM)) * 0.5,
        rng.standard_normal(DIM) * 0.1,
        rng.standard_normal(DIM),
    ]


def _check_cosine_loss(loss_fn) -> Check:
    def check(rng: Rng, eps: float, tol: float) -> GradCheckReport:
        def fn(p: list[Matrix]):
            loss = loss_fn(p[0], ProjectionParams(p[1], p[2]), ContextVector(p[3]))
            return loss.value, [loss.d_embeddings, loss.d_weight, loss.d_bias, loss.d_mu]

        return grad_check(fn, _context_params(rng), eps, tol, ["e", "weight", "bias", "mu"])

    return check


def _check_adf(rng: Rng, eps: float, tol: float) -> GradCheckReport:
    feedback = Feedback(correct=rng.random(BATCH) < 0.5)

    def fn(p: list[Matrix]):
        loss = adf_loss(p[0], feedback, ProjectionParams(p[1], p[2]), ContextVector(p[3]))
        return loss.value, [loss.d_embeddings, loss.d_weight, loss.d_bias, loss.d_mu]

    return grad_check(fn, _context_params(rng), eps, tol, ["e", "weight", "bias", "mu"])


GRAD_SUITE: dict[str, Check] = {
    "extractor": _check_extractor,
    "g_phi": _check_gphi,
    "embed_head": _check_head,
    "sap": _check_sap,
    "softmax_loss": _check_softmax,
    "am_softmax_loss": _check_am_softmax,
    "prototypical_loss": _check_prototypical,
    "apf_loss": _check_cosine_loss(apf_loss),
    "anf_loss": _check_cosine_loss(anf_loss),
    "adf_loss": _check_adf,
}


def run_grad_suite(
    seeds: int = 10,
    eps: float = 1e-6,
    tol: float = 1e-4,
    operations: list[str] | None = None,
) -> list[GradSuiteResult]:
    names: list[str] = operations or list(GRAD_SUITE)
    unknown: list[str] = [n for n in names if n not in GRAD_SUITE]
    if unknown:
        raise ValidationError(f"GradCheck: unknown operations {unknown}")
    results: list[GradSuiteResult] = []
    for name in names:
        check: Check = GRAD_SUITE[name]
        for seed in range(seeds):
            report: GradCheckReport = check(seeded_rng(seed), eps, tol)
            results.append(GradSuiteResult(name, seed, report))
            if not report.passed:
                Log.warning(f"GradCheck: {name} seed {seed} {report.summary()}")
    return results


def summarize(results: list[GradSuiteResult]) -> list[tuple[str, int, float, bool]]:
    """Per operation: (name, seeds checked, worst relative error, all passed)"""

    rows: dict[str, tuple[str, int, float, bool]] = {}
    for r in results:
        name, count, worst, passed = rows.get(r.operation, (r.operation, 0, 0.0, True))
        rows[r.operation] = (
            name,
            count + 1,
            max(worst, r.report.worst),
            passed and r.report.passed,
        )
    return list(rows.values())
