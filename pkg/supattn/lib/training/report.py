# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

from __future__ import annotations

from dataclasses import dataclass, field

from supattn.lib.evaluation import DetPoint
from supattn.lib.pooling import AttentionStatistics
from supattn.lib.utils import format_table
from supattn.state import State

TRACE_COLUMNS: tuple[str, ...] = (
    "total",
    "l_s",
    "l_pl",
    "l_am",
    "l_mu",
    "mu_samples",
    "accuracy",
    "lr",
)
# Columns holding counts, kept as int in the trace
COUNT_COLUMNS: tuple[str, ...] = ("mu_samples",)


@dataclass
class MetricsRow:
    duration: str
    trials: int
    eer: float
    eer_threshold: float
    min_dcf: float
    dcf_threshold: float
    det: list[DetPoint] = field(default_factory=list, repr=False)


def metrics_table(rows: list[MetricsRow]) -> str:
    return format_table(
        ["duration", "trials", "eer", "eer_threshold", "min_dcf", "dcf_threshold"],
        [
            [r.duration, r.trials, r.eer, r.eer_threshold, r.min_dcf, r.dcf_threshold]
            for r in rows
        ],
    )


@dataclass
class RunReport:
    config_text: str
    seed: int
    trace: dict[str, list[float | int]] = field(
        default_factory=lambda: {name: [] for name in TRACE_COLUMNS}
    )
    metrics: list[MetricsRow] = field(default_factory=list)
    attention: AttentionStatistics | None = None
    attention_p_value: float | None = None
    stopped_early: bool = False
    wall_time: float = 0.0

    # ------ PROPERTIES ------ #

    @property
    def steps_run(self) -> int:
        return len(self.trace["total"])

    @property
    def train_accuracy(self) -> float:
        """Mean accuracy over the last tenth of the run"""

        accuracy: list[float] = self.trace["accuracy"]
        if not accuracy:
            return 0.0
        window: list[float] = accuracy[-max(1, len(accuracy) // 10) :]
        return sum(window) / len(window)

    @property
    def context_steps(self) -> int:
        """Steps where L_mu was computed over a nonempty sample set"""

        return sum(1 for n in self.trace["mu_samples"] if n > 0)

    # ------ PUBLIC METHODS ------ #

    def record(self, **values: float) -> None:
        for name in TRACE_COLUMNS:
            value: float = values[name]
            self.trace[name].append(int(value) if name in COUNT_COLUMNS else float(value))

    def computed_l_mu(self) -> list[float]:
        """L_mu of the steps that computed it, skipped steps left out"""

        return [v for v, n in zip(self.trace["l_mu"], self.trace["mu_samples"]) if n > 0]

    def metric(self, duration: str) -> MetricsRow:
        for row in self.metrics:
            if row.duration == duration:
                return row
        raise KeyError(duration)

    def to_text(self, include_wall_time: bool = True) -> str:
        lines: list[str] = [
            f"# {State.APP_ID} {State.VERSION} run report",
            f"seed={self.seed}",
            f"steps_run={self.steps_run}",
            f"l_mu_steps={self.context_steps}",
            f"stopped_early={'true' if self.stopped_early else 'false'}",
            f"train_accuracy={self.train_accuracy:.6f}",
            "",
            "[config]",
            self.config_text.rstrip("\n"),
            "",
            "[metrics]",
            metrics_table(self.metrics),
        ]
        if self.attention is not None:
            lines += [
                "",
                "[attention]",
                f"informative_mean={self.attention.informative_mean:.9f}",
                f"distractor_mean={self.attention.distractor_mean:.9f}",
                f"utterances={self.attention.utterances}",
                f"informative_wins={self.attention.informative_wins}",
                f"win_rate={self.attention.win_rate:.6f}",
            ]
            if self.attention_p_value is not None:
                lines.append(f"sign_test_p={self.attention_p_value:.6g}")
        lines += [
            "",
            "[trace]",
            format_table(
                ["step", *TRACE_COLUMNS],
                [
                    [step + 1, *(self.trace[name][step] for name in TRACE_COLUMNS)]
                    for step in range(self.steps_run)
                ],
            ),
        ]
        if include_wall_time:
            lines += ["", f"wall_time={self.wall_time:.3f}"]
        return "\n".join(lines) + "\n"
