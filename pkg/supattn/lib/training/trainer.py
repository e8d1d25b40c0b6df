# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Training loop and held-out evaluation.

A step embeds the sampled sequences, computes the objective's losses, takes
feedback from the full-class classifier, adds the variant's context loss,
backpropagates by hand and applies one Nesterov SGD update.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from supattn.lib.config import ExperimentConfig
from supattn.lib.data import Dataset, load_dataset, normalize_time_axis, synth_dataset
from supattn.lib.errors import NumericalError, ValidationError
from supattn.lib.evaluation import (
    DcfConfig,
    ScoredTrialSet,
    Trial,
    build_trials,
    compute_eer,
    compute_min_dcf,
    det_curve,
    duration_protocol,
    sign_test,
    write_det_csv,
)
from supattn.lib.logging import Log
from supattn.lib.network import (
    ModelParams,
    embed_head_backward,
    extractor_forward,
    init_params,
    save_checkpoint,
)
from supattn.lib.numerics import Rng, seeded_rng, spawn
from supattn.lib.objectives import (
    AmSoftmaxConfig,
    ClassifierLoss,
    ContextLoss,
    Episode,
    Feedback,
    LossBundle,
    LossParts,
    Objective,
    Variant,
    am_softmax_loss,
    context_loss,
    feedback_partition,
    prototypical_loss,
    softmax_loss,
    total_objective,
)
from supattn.lib.pooling import attention_statistics, sap
from supattn.lib.training.episodes import FrameBatch, sample_batch, sample_episode
from supattn.lib.training.model import backward_batch, embed, forward_batch
from supattn.lib.training.optimizer import LrScheduler, SgdState, sgd_step
from supattn.lib.training.report import MetricsRow, RunReport, metrics_table
from supattn.lib.utils import threaded_map, timeit

CHECKPOINT_FILE: str = "checkpoint.txt"
REPORT_FILE: str = "report.txt"


@dataclass
class StepResult:
    bundle: LossBundle
    feedback: Feedback
    # Samples L_mu was computed over, 0 when the variant has none or it was skipped
    mu_samples: int = 0


def pooling_name(variant: Variant) -> str:
    return "sap" if variant.attentive else "tap"


def compute_step(
    params: ModelParams,
    batch: FrameBatch,
    variant: Variant,
    objective: Objective,
    lambda_mu: float = 1.0,
    mu_only: bool = False,
    am: AmSoftmaxConfig | None = None,
) -> StepResult:
    """Loss components and gradients for every parameter of the model"""

    if objective.episodic != batch.episodic:
        raise ValidationError(
            f"compute_step: objective {objective.value} does not match the sampled batch"
        )
    attentive: bool = variant.attentive
    grads: dict[str, np.ndarray] = params.zeros_like()
    parts = LossParts()

    q_caches, q_pooled, q_emb = forward_batch(params, batch.query, attentive)
    if objective is Objective.AM_SOFTMAX:
        cls: ClassifierLoss = am_softmax_loss(q_emb, batch.speakers, params.classifier, am)
        parts.l_am = cls.value
    else:
        cls = softmax_loss(q_emb, batch.speakers, params.classifier)
        parts.l_s = cls.value
    grads["classifier.weight"] += cls.d_weight
    d_q_emb: np.ndarray = cls.d_embeddings

    if objective.episodic:
        s_caches, s_pooled, s_emb = forward_batch(params, batch.support, attentive)
        episode = Episode(
            support=s_emb,
            support_labels=batch.support_labels,
            query=q_emb,
            query_labels=batch.query_labels,
            num_classes=batch.num_classes,
        )
        pl = prototypical_loss(episode)
        parts.l_pl = pl.value
        d_q_emb = d_q_emb + pl.d_query

    feedback: Feedback = feedback_partition(cls.predictions, batch.speakers)
    ctx: ContextLoss | None = None
    if variant.has_context_loss:
        ctx = context_loss(variant, q_pooled, feedback, params.proj, params.context)
        parts.l_mu = ctx.value
    bundle: LossBundle = total_objective(parts, variant, objective, lambda_mu)

    d_w, d_b, d_q_pooled = embed_head_backward(q_pooled, params.head, d_q_emb)
    grads["head.weight"] += d_w
    grads["head.bias"] += d_b
    if ctx is not None:
        grads["mu"] += lambda_mu * ctx.d_mu
        if not mu_only:
            d_q_pooled = d_q_pooled + lambda_mu * ctx.d_embeddings
            grads["proj.weight"] += lambda_mu * ctx.d_weight
            grads["proj.bias"] += lambda_mu * ctx.d_bias
    backward_batch(params, q_caches, d_q_pooled, grads)

    if objective.episodic:
        d_w, d_b, d_s_pooled = embed_head_backward(s_pooled, params.head, pl.d_support)
        grads["head.weight"] += d_w
        grads["head.bias"] += d_b
        backward_batch(params, s_caches, d_s_pooled, grads)

    bundle.grads = grads
    return StepResult(bundle=bundle, feedback=feedback, mu_samples=ctx.samples if ctx else 0)


# ------ DATA ------ #


def load_experiment_source(config: ExperimentConfig) -> Dataset:
    """The configured data source before any split"""

    if config.data_dir:
        dataset: Dataset = load_dataset(config.data_dir)
    else:
        dataset = synth_dataset(config.synth)
    if config.cmvn:
        dataset = dataset.map(normalize_time_axis)
    return dataset


def load_experiment_data(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, held-out) split: whole speakers when holdout_speakers > 0, else utterances"""

    dataset: Dataset = load_experiment_source(config)
    if config.holdout_speakers:
        return dataset.split_speakers(config.holdout_speakers)
    return dataset.split(config.holdout_per_speaker)


# ------ EVALUATION ------ #


def duration_label(seconds: float | None) -> str:
    return "full" if seconds is None else f"{seconds:g}s"


def evaluate(
    params: ModelParams,
    attentive: bool,
    dataset: Dataset,
    durations: list[float | None],
    trials: list[Trial],
    rng: Rng,
    dcf: DcfConfig | None = None,
) -> list[MetricsRow]:
    """One metrics row per test duration. The full-utterance row is always there"""

    if None not in durations:
        durations = [*durations, None]
    rows: list[MetricsRow] = []
    for seconds in durations:
        scored: ScoredTrialSet = duration_protocol(
            dataset, trials, lambda f: embed(params, f, attentive), seconds, spawn(rng)
        )
        eer, eer_threshold = compute_eer(scored)
        min_dcf, dcf_threshold = compute_min_dcf(scored, dcf)
        rows.append(
            MetricsRow(
                duration=duration_label(seconds),
                trials=len(scored),
                eer=eer,
                eer_threshold=eer_threshold,
                min_dcf=min_dcf,
                dcf_threshold=dcf_threshold,
                det=det_curve(scored),
            )
        )
        Log.debug(f"Eval: {rows[-1].duration} EER {eer:.4f} minDCF {min_dcf:.4f}")
    return rows


def write_det_files(rows: list[MetricsRow], out_dir: str) -> None:
    for row in rows:
        write_det_csv(row.det, os.path.join(out_dir, f"det_{row.duration}.csv"))


# ------ TRAINER ------ #


class Trainer:
    """Owns the parameters and the optimizer state of one run"""

    def __init__(self, config: ExperimentConfig, out_dir: str | None = None) -> None:
        config.validate()
        self.config: ExperimentConfig = config
        self.out_dir: str | None = out_dir
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

        rng: Rng = seeded_rng(config.seed)
        self.init_rng: Rng = spawn(rng)
        self.sample_rng: Rng = spawn(rng)
        self.eval_rng: Rng = spawn(rng)

        self.train_data, self.heldout = load_experiment_data(config)
        shape = config.model.to_shape(self.train_data.feature_dim, self.train_data.num_speakers)
        self.params: ModelParams = init_params(shape, self.init_rng)
        self.sgd: SgdState = SgdState.from_settings(config.optimizer)
        self.scheduler: LrScheduler = LrScheduler.from_settings(config.optimizer)
        self.report = RunReport(config_text=config.to_text(), seed=config.seed)

    # ------ PROPERTIES ------ #

    @property
    def variant(self) -> Variant:
        return self.config.variant

    @property
    def pooling(self) -> str:
        return pooling_name(self.variant)

    # ------ PUBLIC METHODS ------ #

    def sample(self) -> FrameBatch:
        if self.config.objective.episodic:
            return sample_episode(self.train_data, self.config.episode, self.sample_rng)
        return sample_batch(
            self.train_data, self.config.batch_size, self.config.crop_seconds, self.sample_rng
        )

    def step(self) -> StepResult:
        """One update. Parameters stay untouched when the loss or a gradient is not finite"""

        cfg: ExperimentConfig = self.config
        result: StepResult = compute_step(
            self.params,
            self.sample(),
            cfg.variant,
            cfg.objective,
            cfg.lambda_mu,
            cfg.mu_only,
            cfg.am,
        )
        bundle: LossBundle = result.bundle
        if not np.isfinite(bundle.total):
            raise NumericalError(
                f"Train: non-finite total loss at step {self.report.steps_run + 1}"
            )
        sgd_step(self.params.named(), bundle.grads, self.sgd)
        self.report.record(
            total=bundle.total,
            l_s=bundle.l_s,
            l_pl=bundle.l_pl,
            l_am=bundle.l_am,
            l_mu=bundle.l_mu,
            mu_samples=result.mu_samples,
            accuracy=result.feedback.accuracy,
            lr=self.sgd.lr,
        )
        return result

    def save(self, name: str = CHECKPOINT_FILE) -> None:
        if self.out_dir:
            save_checkpoint(self.params, os.path.join(self.out_dir, name), self.pooling)

    @timeit
    def fit(self) -> None:
        cfg: ExperimentConfig = self.config
        Log.info(
            f"Train: {cfg.variant.value} / {cfg.objective.value}, {cfg.steps} steps, seed {cfg.seed}"
        )
        for step in range(1, cfg.steps + 1):
            try:
                result: StepResult = self.step()
            except NumericalError:
                Log.error("Train: Aborting, saving last good checkpoint")
                self.save()
                raise

            decays: int = self.scheduler.decays
            self.sgd.lr = self.scheduler.update(result.bundle.total)
            if self.scheduler.decays > decays:
                self.save(f"checkpoint_decay{self.scheduler.decays}.txt")

            if step % cfg.log_every == 0 or step == cfg.steps:
                b: LossBundle = result.bundle
                l_mu: str = f"{b.l_mu:.4f}"
                if cfg.variant.has_context_loss and not result.mu_samples:
                    l_mu = "skipped"
                Log.info(
                    f"Train: step {step} loss {b.total:.4f} (L_s {b.l_s:.4f} L_PL {b.l_pl:.4f} "
                    f"L_AM {b.l_am:.4f} L_mu {l_mu}) acc {result.feedback.accuracy:.3f}"
                )
            if self.scheduler.stop:
                Log.info(f"Train: Converged after {step} steps")
                self.report.stopped_early = True
                break
        self.save()

    def evaluate_heldout(self, trials: list[Trial] | None = None) -> list[MetricsRow]:
        if trials is None:
            trials = build_trials(self.heldout, self.config.pairs_per_speaker, self.eval_rng)
        rows: list[MetricsRow] = evaluate(
            self.params,
            self.variant.attentive,
            self.heldout,
            self.config.test_durations(),
            trials,
            self.eval_rng,
        )
        self.report.metrics = rows
        if self.out_dir:
            write_det_files(rows, self.out_dir)
        return rows

    def attention_heldout(self) -> None:
        """Attention statistics over full held-out utterances that carry a mask"""

        if not self.variant.attentive:
            return
        weights: list[np.ndarray] = []
        masks: list[np.ndarray] = []
        for utt in self.heldout.utterances:
            if utt.informative_mask is None:
                continue
            frames: np.ndarray = extract_frames(self.params, utt.features)
            weights.append(sap(frames, self.params.proj, self.params.context).weights)
            masks.append(utt.informative_mask)
        if not weights:
            return
        stats = attention_statistics(weights, masks)
        self.report.attention = stats
        if stats.utterances:
            self.report.attention_p_value = sign_test(stats.informative_wins, stats.utterances)

    def run(self) -> RunReport:
        start: float = time.perf_counter()
        self.fit()
        self.evaluate_heldout()
        self.attention_heldout()
        self.report.wall_time = time.perf_counter() - start
        Log.info("Eval:\n" + metrics_table(self.report.metrics))
        if self.out_dir:
            with open(os.path.join(self.out_dir, REPORT_FILE), "w") as f:
                f.write(self.report.to_text())
        return self.report


def extract_frames(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return extractor_forward(features, params.extractor)[0]


def train(config: ExperimentConfig, out_dir: str | None = None) -> RunReport:
    return Trainer(config, out_dir).run()


# ------ SWEEP ------ #


@dataclass
class SweepCell:
    objective: Objective
    variant: Variant
    report: RunReport


def sweep(
    config: ExperimentConfig,
    objectives: list[Objective] | None = None,
    variants: list[Variant] | None = None,
    out_dir: str | None = None,
    max_workers: int | None = None,
) -> list[SweepCell]:
    """Train every (objective, variant) cell with the same seed, concurrently"""

    objectives = objectives or list(Objective)
    variants = variants or list(Variant)
    cells: list[tuple[Objective, Variant]] = [(o, v) for o in objectives for v in variants]

    def run_cell(cell: tuple[Objective, Variant]) -> SweepCell:
        objective, variant = cell
        cell_config: ExperimentConfig = config.copy(objective=objective, variant=variant)
        cell_dir: str | None = (
            os.path.join(out_dir, f"{objective.value}-{variant.value}") if out_dir else None
        )
        return SweepCell(objective, variant, train(cell_config, cell_dir))

    Log.info(f"Sweep: {len(cells)} runs")
    return threaded_map(run_cell, cells, max_workers)
