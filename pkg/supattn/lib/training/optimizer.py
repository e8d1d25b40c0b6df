# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Nesterov SGD with coupled weight decay, and the plateau LR schedule.

    g' = g + wd · p
    v  = β · v + g'
    p  = p − lr · (g' + β · v)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from supattn.lib.config import OptimizerSettings
from supattn.lib.errors import NumericalError, ValidationError
from supattn.lib.logging import Log


@dataclass
class SgdState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    @staticmethod
    def from_settings(settings: OptimizerSettings) -> SgdState:
        return SgdState(
            lr=settings.lr, momentum=settings.momentum, weight_decay=settings.weight_decay
        )


def sgd_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: SgdState
) -> dict[str, np.ndarray]:
    """Update params in place and return them. Nothing changes on a bad gradient"""

    for name, p in params.items():
        g: np.ndarray | None = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ValidationError(
                f"sgd_step: gradient for '{name}' has shape "
                f"{None if g is None else g.shape}, expected {p.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"sgd_step: non-finite gradient for '{name}' at step {state.steps}")

    beta: float = state.momentum
    for name, p in params.items():
        g_decayed: np.ndarray = grads[name] + state.weight_decay * p
        v: np.ndarray | None = state.velocity.get(name)
        v = g_decayed.copy() if v is None else beta * v + g_decayed
        state.velocity[name] = v
        p -= state.lr * (g_decayed + beta * v)
    state.steps += 1
    return params


@dataclass
class LrScheduler:
    """
    Divide the LR by `factor` when the smoothed loss has not improved by more
    than min_improvement for `patience` steps. After max_decays the next
    plateau sets `stop`.
    """

    lr: float = 0.1
    factor: float = 10.0
    patience: int = 50
    max_decays: int = 3
    min_improvement: float = 1e-4
    smoothing: float = 0.9
    decays: int = 0
    stop: bool = False
    _ema: float | None = None
    _best: float = float("inf")
    _since_best: int = 0

    @staticmethod
    def from_settings(settings: OptimizerSettings) -> LrScheduler:
        return LrScheduler(
            lr=settings.lr,
            factor=settings.lr_decay_factor,
            patience=settings.decay_patience,
            max_decays=settings.max_decays,
            min_improvement=settings.min_improvement,
        )

    def update(self, loss: float) -> float:
        if self._ema is None:
            self._ema = loss
        else:
            self._ema = self.smoothing * self._ema + (1.0 - self.smoothing) * loss

        if self._ema < self._best - self.min_improvement:
            self._best = self._ema
            self._since_best = 0
            return self.lr

        self._since_best += 1
        if self._since_best >= self.patience:
            if self.decays < self.max_decays:
                self.lr /= self.factor
                self.decays += 1
                Log.info(f"Optimizer: Plateau, lr decayed to {self.lr:g}")
            else:
                self.stop = True
            self._best = self._ema
            self._since_best = 0
        return self.lr
