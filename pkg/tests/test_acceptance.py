# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

"""Full-size synthetic runs. Deselect with -m "not slow"."""

import numpy as np
import pytest

from supattn.lib.config import ExperimentConfig
from supattn.lib.network import ContextVector, ProjectionParams
from supattn.lib.numerics import seeded_rng
from supattn.lib.objectives import Objective, Variant
from supattn.lib.pooling import sap, tap
from supattn.lib.training.gradsuite import run_grad_suite, summarize
from supattn.lib.training.report import RunReport
from supattn.lib.training.trainer import Trainer, train

pytestmark = pytest.mark.slow


def reference_config(variant: Variant) -> ExperimentConfig:
    config = ExperimentConfig.preset("default")
    config.variant = variant
    config.objective = Objective.PL_SOFTMAX
    # 100 held-out utterances for the attention sign test
    config.holdout_per_speaker = 5
    return config


@pytest.fixture(scope="module")
def reports() -> dict[Variant, RunReport]:
    return {variant: train(reference_config(variant)) for variant in Variant}


def test_gradient_suite():
    for name, count, worst, passed in summarize(run_grad_suite(seeds=10)):
        assert count == 10
        assert passed, f"{name}: {worst:.2e}"


def test_zero_context_equals_average():
    rng = seeded_rng(0)
    proj = ProjectionParams(rng.standard_normal((16, 16)), rng.standard_normal(16))
    for _ in range(100):
        frames = rng.standard_normal((int(rng.integers(1, 300)), 16))
        out = sap(frames, proj, ContextVector(np.zeros(16)))
        np.testing.assert_allclose(out.embedding, tap(frames), atol=1e-12)


@pytest.mark.parametrize("variant", [Variant.APF, Variant.ANF, Variant.ADF])
def test_zero_lambda_trajectory(variant):
    reference = Trainer(reference_config(Variant.SAP).copy(lambda_mu=0.0))
    other = Trainer(reference_config(variant).copy(lambda_mu=0.0))
    for _ in range(100):
        reference.step()
        other.step()
    for (name, a), (_, b) in zip(reference.params, other.params):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12, err_msg=name)


@pytest.mark.parametrize("variant", list(Variant))
def test_end_to_end(reports, variant):
    report = reports[variant]
    assert all(np.isfinite(report.trace["total"]))
    assert report.train_accuracy >= 0.9
    assert report.metric("full").eer <= 0.15


@pytest.mark.parametrize("variant", [Variant.SAP, Variant.ANF])
def test_attention_prefers_informative_frames(reports, variant):
    report = reports[variant]
    stats = report.attention
    assert stats is not None and stats.utterances >= 100
    assert stats.informative_mean > stats.distractor_mean
    assert report.attention_p_value < 0.01


def test_anf_context_loss_decreases(reports):
    # Steps with an empty misclassified set or a zero context vector carry no L_mu
    values = np.array(reports[Variant.ANF].computed_l_mu())
    assert values.size >= 2
    tenth = max(1, values.size // 10)
    assert values[-tenth:].mean() < values[:tenth].mean()


def test_longer_tests_are_easier(reports):
    report = reports[Variant.SAP]
    assert report.metric("5s").eer <= report.metric("1s").eer
    assert [row.duration for row in report.metrics] == ["1s", "2s", "5s", "full"]


def test_identical_reports():
    config = ExperimentConfig.preset("fast")
    config.variant = Variant.ADF
    a = train(config).to_text(include_wall_time=False)
    b = train(config).to_text(include_wall_time=False)
    assert a == b
