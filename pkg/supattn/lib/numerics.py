# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Dense primitives shared by every other module.

All arrays are float64. Gradients in this package are written by hand, and
grad_check is the oracle that keeps them honest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from supattn.lib.errors import NumericalError, ValidationError

Matrix = np.ndarray
Rng = np.random.Generator

# Floor of the relative-error denominator in grad_check
REL_ERR_FLOOR: float = 1e-8


def seeded_rng(seed: int) -> Rng:
    """PCG64 stream. Same seed gives the same draws on every platform"""

    if seed < 0 or seed >= 2**64:
        raise ValidationError(f"Seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn(rng: Rng) -> Rng:
    """Independent child stream, so that no Rng is ever shared between owners"""

    return np.random.Generator(np.random.PCG64(rng.integers(0, 2**63, dtype=np.int64)))


def softmax(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValidationError("softmax: empty input")
    if np.any(np.isnan(scores)):
        raise ValidationError("softmax: NaN input")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("softmax: infinite input")
    shifted: np.ndarray = scores - np.max(scores)
    exp: np.ndarray = np.exp(shifted)
    return exp / np.sum(exp)


def log_softmax_rows(scores: Matrix) -> Matrix:
    """Row-wise log-softmax of a B×C score matrix"""

    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] == 0:
        raise ValidationError(f"log_softmax_rows: expected B×C scores, got {scores.shape}")
    shifted: Matrix = scores - np.max(scores, axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def normalize_rows(matrix: Matrix, name: str, min_norm: float = 1e-12) -> tuple[Matrix, Matrix]:
    """Return (rows / ‖rows‖, ‖rows‖ as a column). Zero rows are rejected"""

    norms: Matrix = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms < min_norm):
        bad: int = int(np.argmin(norms[:, 0]))
        raise ValidationError(f"{name}: row {bad} has zero norm")
    return matrix / norms, norms


def normalize_rows_backward(d_unit: Matrix, unit: Matrix, norms: Matrix) -> Matrix:
    """Gradient through x -> x/‖x‖ applied row-wise"""

    radial: Matrix = np.sum(d_unit * unit, axis=1, keepdims=True)
    return (d_unit - radial * unit) / norms


@dataclass
class GradCheckReport:
    """Entrywise comparison of analytic and central-difference gradients"""

    tol: float
    eps: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    analytic: dict[str, Matrix] = field(default_factory=dict)
    numeric: dict[str, Matrix] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol

    def summary(self) -> str:
        parts: list[str] = [
            f"{name}={err:.2e}" for name, err in self.max_rel_error.items()
        ]
        status: str = "ok" if self.passed else "FAIL"
        return f"{status} (tol {self.tol:.0e}) " + " ".join(parts)


def relative_error(analytic: Matrix, numeric: Matrix) -> Matrix:
    denom: Matrix = np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), REL_ERR_FLOOR
    )
    return np.abs(analytic - numeric) / denom


def grad_check(
    fn: Callable[[list[Matrix]], tuple[float, Sequence[Matrix]]],
    params: Sequence[Matrix],
    eps: float = 1e-6,
    tol: float = 1e-4,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """
    Compare the analytic gradient returned by fn against central differences.

    fn takes the list of parameter arrays and returns (value, gradients), one
    gradient per parameter with the parameter's shape.
    """

    if not 0.0 < eps <= 1e-3:
        raise ValidationError(f"grad_check: eps must be in (0, 1e-3], got {eps}")
    params = [np.array(p, dtype=np.float64, copy=True) for p in params]
    if names is None:
        names = [f"p{i}" for i in range(len(params))]
    if len(names) != len(params):
        raise ValidationError("grad_check: names and params differ in length")

    def value_at(current: list[Matrix]) -> float:
        value: float = float(fn(current)[0])
        if not np.isfinite(value):
            raise NumericalError("grad_check: function value is not finite")
        return value

    value_at(params)
    grads: Sequence[Matrix] = fn(params)[1]
    if len(grads) != len(params):
        raise ValidationError("grad_check: fn returned the wrong number of gradients")

    report = GradCheckReport(tol=tol, eps=eps)
    for name, param, grad in zip(names, params, grads):
        analytic: Matrix = np.asarray(grad, dtype=np.float64).reshape(param.shape)
        numeric: Matrix = np.zeros_like(param)
        flat: Matrix = param.reshape(-1)
        for i in range(flat.size):
            original: float = flat[i]
            flat[i] = original + eps
            f_plus: float = value_at(params)
            flat[i] = original - eps
            f_minus: float = value_at(params)
            flat[i] = original
            numeric.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * eps)
        errors: Matrix = relative_error(analytic, numeric)
        report.max_rel_error[name] = float(np.max(errors)) if errors.size else 0.0
        report.analytic[name] = analytic
        report.numeric[name] = numeric

    return report
