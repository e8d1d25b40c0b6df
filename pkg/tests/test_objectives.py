# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

import math

import numpy as np
import pytest

from supattn.lib.errors import ValidationError
from supattn.lib.network import ClassifierParams, ContextVector, ProjectionParams
from supattn.lib.objectives import (
    AmSoftmaxConfig,
    Episode,
    Feedback,
    LossParts,
    Objective,
    Variant,
    adf_loss,
    adf_probability,
    am_softmax_loss,
    anf_loss,
    apf_loss,
    context_loss,
    feedback_partition,
    prototypes,
    prototypical_loss,
    scaled_cosine_distance,
    softmax_loss,
    total_objective,
)

IDENTITY_2 = ProjectionParams(np.eye(2), np.zeros(2))


class TestScaledCosineDistance:
    def test_self_distance_is_norm(self):
        a = np.array([3.0, 4.0])
        assert scaled_cosine_distance(a, a) == pytest.approx(5.0, abs=1e-12)

    def test_orthogonal(self):
        assert scaled_cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_second_argument_scale(self, rng):
        a1, a2 = rng.standard_normal(5), rng.standard_normal(5)
        assert scaled_cosine_distance(a1, 7 * a2) == pytest.approx(
            scaled_cosine_distance(a1, a2), abs=1e-12
        )

    def test_zero_second_argument(self):
        with pytest.raises(ValidationError):
            scaled_cosine_distance(np.ones(2), np.zeros(2))


class TestSoftmaxLoss:
    def test_two_classes(self):
        loss = softmax_loss(np.array([[1.0, 0.0]]), np.array([0]), ClassifierParams(np.eye(2)))
        assert loss.value == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
        assert loss.value == pytest.approx(0.3133, abs=1e-4)
        assert list(loss.predictions) == [0]

    def test_orthogonal_embedding(self):
        classifier = ClassifierParams(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
        loss = softmax_loss(np.array([[0.0, 0.0, 2.0]]), np.array([1]), classifier)
        assert loss.value == pytest.approx(math.log(2), abs=1e-12)

    def test_zero_weight(self):
        with pytest.raises(ValidationError, match="zero norm"):
            softmax_loss(np.ones((1, 2)), np.array([0]), ClassifierParams(np.zeros((2, 2))))

    def test_label_out_of_range(self):
        with pytest.raises(ValidationError):
            softmax_loss(np.ones((1, 2)), np.array([2]), ClassifierParams(np.eye(2)))

    def test_weight_scale_invariance(self, rng):
        x, w = rng.standard_normal((6, 4)), rng.standard_normal((3, 4))
        labels = rng.integers(0, 3, 6)
        a = softmax_loss(x, labels, ClassifierParams(w))
        b = softmax_loss(x, labels, ClassifierParams(w * np.array([[2.0], [0.1], [9.0]])))
        assert a.value == pytest.approx(b.value, abs=1e-9)


class TestAmSoftmaxLoss:
    def test_two_classes(self):
        loss = am_softmax_loss(
            np.array([[1.0, 0.0]]),
            np.array([0]),
            ClassifierParams(np.array([[1.0, 0.0], [-1.0, 0.0]])),
            AmSoftmaxConfig(s=1.0, m=0.0),
        )
        assert loss.value == pytest.approx(math.log(1 + math.exp(-2)), abs=1e-12)
        assert loss.value == pytest.approx(0.1269, abs=1e-4)

    def test_collapses_to_softmax_on_unit_embeddings(self, rng):
        x = rng.standard_normal((5, 3))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        classifier = ClassifierParams(rng.standard_normal((4, 3)))
        labels = rng.integers(0, 4, 5)
        am = am_softmax_loss(x, labels, classifier, AmSoftmaxConfig(s=1.0, m=0.0))
        assert am.value == pytest.approx(softmax_loss(x, labels, classifier).value, abs=1e-12)

    def test_margin_monotone(self, rng):
        x = rng.standard_normal((8, 4))
        classifier = ClassifierParams(rng.standard_normal((3, 4)))
        labels = rng.integers(0, 3, 8)
        values = [
            am_softmax_loss(x, labels, classifier, AmSoftmaxConfig(m=m)).value
            for m in (0.0, 0.05, 0.1, 0.2)
        ]
        assert values == sorted(values)

    def test_defaults(self):
        assert (AmSoftmaxConfig().s, AmSoftmaxConfig().m) == (40.0, 0.1)

    def test_zero_embedding(self):
        with pytest.raises(ValidationError):
            am_softmax_loss(np.zeros((1, 2)), np.array([0]), ClassifierParams(np.eye(2)))


class TestPrototypes:
    def test_mean(self):
        episode = Episode(np.array([[0.0, 0.0], [2.0, 2.0]]), [0, 0], np.ones((1, 2)), [0], 1)
        np.testing.assert_array_equal(prototypes(episode), [[1.0, 1.0]])

    def test_single_support(self, rng):
        support = rng.standard_normal((3, 4))
        episode = Episode(support, [0, 1, 2], support, [0, 1, 2], 3)
        np.testing.assert_array_equal(prototypes(episode), support)

    def test_empty_class(self):
        with pytest.raises(ValidationError, match="class 1"):
            prototypes(Episode(np.ones((2, 2)), [0, 0], np.ones((1, 2)), [0], 2))

    def test_label_range(self):
        with pytest.raises(ValidationError):
            Episode(np.ones((1, 2)), [3], np.ones((1, 2)), [0], 2)


class TestPrototypicalLoss:
    def test_two_prototypes(self):
        protos = np.eye(2)
        episode = Episode(protos, [0, 1], np.array([[1.0, 0.0]]), [0], 2)
        assert prototypical_loss(episode).value == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)

    def test_orthogonal_query(self):
        protos = np.eye(4)[:3]
        episode = Episode(protos, [0, 1, 2], np.array([[0.0, 0.0, 0.0, 5.0]]), [2], 3)
        assert prototypical_loss(episode).value == pytest.approx(math.log(3), abs=1e-12)

    def test_prototype_scale_invariance(self, rng):
        support, query = rng.standard_normal((3, 4)), rng.standard_normal((6, 4))
        episode = Episode(support, [0, 1, 2], query, [0, 0, 1, 1, 2, 2], 3)
        a = prototypical_loss(episode)
        b = prototypical_loss(episode, prototypes(episode) * 4.5)
        assert a.value == pytest.approx(b.value, abs=1e-9)
        assert a.value >= 0.0


class TestFeedback:
    def test_partition(self):
        feedback = feedback_partition(np.array([1, 2]), np.array([1, 0]))
        assert list(feedback.cor) == [0]
        assert list(feedback.mis) == [1]
        assert feedback.accuracy == 0.5

    def test_all_correct(self):
        assert feedback_partition(np.arange(3), np.arange(3)).mis.size == 0

    def test_all_wrong(self):
        assert feedback_partition(np.zeros(3), np.ones(3)).cor.size == 0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            feedback_partition(np.zeros(3), np.zeros(2))


class TestCosineContextLosses:
    e = np.array([[0.5, 0.3]])

    def test_apf_parallel(self):
        mu = ContextVector(2.0 * np.tanh(self.e[0]))
        assert apf_loss(self.e, IDENTITY_2, mu).value == pytest.approx(-1.0, abs=1e-12)

    def test_apf_orthogonal(self):
        u = np.tanh(self.e[0])
        mu = ContextVector(np.array([-u[1], u[0]]))
        assert apf_loss(self.e, IDENTITY_2, mu).value == pytest.approx(0.0, abs=1e-12)

    def test_anf_parallel(self):
        mu = ContextVector(np.tanh(self.e[0]))
        assert anf_loss(self.e, IDENTITY_2, mu).value == pytest.approx(1.0, abs=1e-12)

    def test_empty_set(self):
        empty = np.zeros((0, 2))
        assert apf_loss(empty, IDENTITY_2, ContextVector(np.ones(2))).value == 0.0
        assert anf_loss(empty, IDENTITY_2, ContextVector(np.ones(2))).value == 0.0

    def test_zero_context(self, rng):
        loss = apf_loss(rng.standard_normal((3, 2)), IDENTITY_2, ContextVector(np.zeros(2)))
        assert loss.value == 0.0
        assert loss.samples == 0
        assert not np.any(loss.d_mu)

    def test_sample_count(self, rng):
        loss = anf_loss(rng.standard_normal((3, 2)), IDENTITY_2, ContextVector(np.ones(2)))
        assert loss.samples == 3
        assert apf_loss(np.zeros((0, 2)), IDENTITY_2, ContextVector(np.ones(2))).samples == 0

    def test_zero_projection_row_is_skipped(self):
        e = np.array([[0.0, 0.0], [1.0, 0.5]])
        loss = apf_loss(e, IDENTITY_2, ContextVector(np.array([1.0, 0.0])))
        u = np.tanh(e[1])
        assert loss.value == pytest.approx(-u[0] / np.linalg.norm(u), abs=1e-12)
        assert loss.samples == 1
        assert loss.d_embeddings.shape == (2, 2)
        assert not np.any(loss.d_embeddings[0])
        assert np.any(loss.d_embeddings[1])

    def test_only_zero_projections(self):
        loss = anf_loss(np.zeros((2, 2)), IDENTITY_2, ContextVector(np.ones(2)))
        assert (loss.value, loss.samples) == (0.0, 0)
        assert not np.any(loss.d_mu)

    def test_bounds(self, rng):
        for _ in range(20):
            e = rng.standard_normal((5, 3))
            proj = ProjectionParams(rng.standard_normal((3, 3)), rng.standard_normal(3))
            mu = ContextVector(rng.standard_normal(3))
            assert -1.0 <= apf_loss(e, proj, mu).value <= 1.0
            assert -1.0 <= anf_loss(e, proj, mu).value <= 1.0

    def test_anf_descent_on_context(self, rng):
        e = rng.standard_normal((4, 3))
        proj = ProjectionParams(rng.standard_normal((3, 3)), np.zeros(3))
        mu = ContextVector(rng.standard_normal(3))
        before = anf_loss(e, proj, mu)
        after = anf_loss(e, proj, ContextVector(mu.mu - 0.01 * before.d_mu))
        assert after.value < before.value

    def test_context_loss_scatters_gradients(self, rng):
        e = rng.standard_normal((4, 2))
        feedback = Feedback(correct=np.array([True, False, True, False]))
        loss = context_loss(Variant.APF, e, feedback, IDENTITY_2, ContextVector(np.ones(2)))
        assert loss.d_embeddings.shape == (4, 2)
        assert not np.any(loss.d_embeddings[[1, 3]])
        assert np.any(loss.d_embeddings[[0, 2]])

    def test_context_loss_without_context_variant(self, rng):
        with pytest.raises(ValidationError):
            context_loss(
                Variant.SAP,
                rng.standard_normal((2, 2)),
                Feedback(correct=np.array([True, False])),
                IDENTITY_2,
                ContextVector(np.ones(2)),
            )


class TestAdfLoss:
    def test_zero_context_is_ln2(self, rng):
        feedback = Feedback(correct=np.array([True, False, True]))
        loss = adf_loss(rng.standard_normal((3, 2)), feedback, IDENTITY_2, ContextVector(np.zeros(2)))
        assert loss.value == pytest.approx(math.log(2), abs=1e-12)

    def test_logistic_identity(self, rng):
        e = rng.standard_normal((10, 2))
        mu = ContextVector(rng.standard_normal(2) * 3)
        r = np.tanh(e) @ mu.mu
        p_cor = adf_probability(e, IDENTITY_2, mu)
        np.testing.assert_allclose(p_cor, 1.0 / (1.0 + np.exp(-2.0 * r)), atol=1e-12)
        p_mis = adf_probability(e, IDENTITY_2, ContextVector(-mu.mu))
        np.testing.assert_allclose(p_cor + p_mis, 1.0, atol=1e-12)

    def test_negation_invariance(self, rng):
        e = rng.standard_normal((6, 2))
        correct = rng.random(6) < 0.5
        mu = ContextVector(rng.standard_normal(2))
        a = adf_loss(e, Feedback(correct), IDENTITY_2, mu)
        b = adf_loss(e, Feedback(~correct), IDENTITY_2, ContextVector(-mu.mu))
        assert a.value == pytest.approx(b.value, abs=1e-12)
        assert a.value >= 0.0

    def test_feedback_length(self):
        with pytest.raises(ValidationError):
            adf_loss(np.ones((2, 2)), Feedback(np.array([True])), IDENTITY_2, ContextVector(np.ones(2)))


class TestTotalObjective:
    def test_sap_episodic(self):
        bundle = total_objective(LossParts(l_s=0.5, l_pl=0.7), Variant.SAP, Objective.PL_SOFTMAX)
        assert bundle.total == 0.5 + 0.7

    def test_adf_lambda_zero_matches_sap(self):
        sap = total_objective(LossParts(l_s=0.5, l_pl=0.7), Variant.SAP, Objective.PL_SOFTMAX)
        adf = total_objective(
            LossParts(l_s=0.5, l_pl=0.7, l_mu=0.69), Variant.ADF, Objective.PL_SOFTMAX, 0.0
        )
        assert adf.total == sap.total

    def test_anf_sum(self):
        bundle = total_objective(LossParts(l_am=1.3, l_mu=-0.2), Variant.ANF, Objective.AM_SOFTMAX)
        assert bundle.total == pytest.approx(1.3 - 0.2, abs=1e-12)
        assert bundle.l_mu == -0.2

    def test_classification(self):
        assert total_objective(LossParts(l_s=2.0), Variant.TAP, Objective.SOFTMAX).total == 2.0

    @pytest.mark.parametrize(
        "parts,variant,objective",
        [
            (LossParts(l_s=1.0, l_pl=1.0, l_mu=0.1), Variant.SAP, Objective.PL_SOFTMAX),
            (LossParts(l_s=1.0, l_pl=1.0), Variant.ADF, Objective.PL_SOFTMAX),
            (LossParts(l_s=1.0), Variant.SAP, Objective.PL_SOFTMAX),
            (LossParts(l_am=1.0), Variant.TAP, Objective.SOFTMAX),
            (LossParts(l_s=1.0), Variant.TAP, Objective.AM_SOFTMAX),
        ],
    )
    def test_mismatch(self, parts, variant, objective):
        with pytest.raises(ValidationError):
            total_objective(parts, variant, objective)
