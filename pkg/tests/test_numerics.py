# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

import numpy as np
import pytest

from supattn.lib.errors import NumericalError, ValidationError
from supattn.lib.numerics import (
    grad_check,
    log_softmax_rows,
    normalize_rows,
    normalize_rows_backward,
    relative_error,
    seeded_rng,
    softmax,
    spawn,
)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-15)

    def test_ln3(self):
        np.testing.assert_allclose(softmax([0.0, np.log(3.0)]), [0.25, 0.75], atol=1e-15)

    def test_singleton(self):
        assert softmax([5.0]).tolist() == [1.0]

    def test_large_scores_are_stable(self):
        p = softmax([1000.0, 1000.0 + np.log(3.0)])
        np.testing.assert_allclose(p, [0.25, 0.75], atol=1e-12)

    @pytest.mark.parametrize("shift", [-50.0, 3.5, 1000.0])
    def test_shift_invariance(self, rng, shift):
        scores = rng.standard_normal(8)
        np.testing.assert_allclose(softmax(scores + shift), softmax(scores), rtol=0, atol=1e-12)

    def test_magnitude_1e4(self):
        p = softmax([1e4, 0.0, -1e4])
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p, [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(softmax([1e4, 1e4 + np.log(3.0)]), [0.25, 0.75], atol=1e-12)

    def test_sums_to_one(self, rng):
        p = softmax(rng.normal(0, 50, 100))
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) < 1e-12

    @pytest.mark.parametrize("scores", [[], [0.0, np.nan], [np.inf, 0.0]])
    def test_rejects_bad_input(self, scores):
        with pytest.raises(ValidationError):
            softmax(scores)

    def test_log_softmax_rows_matches_softmax(self, rng):
        scores = rng.standard_normal((3, 5))
        expected = np.log(np.stack([softmax(row) for row in scores]))
        np.testing.assert_allclose(log_softmax_rows(scores), expected, atol=1e-12)


class TestRng:
    def test_same_seed_same_stream(self):
        a = seeded_rng(7).random(100)
        b = seeded_rng(7).random(100)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(seeded_rng(7).random(100), seeded_rng(8).random(100))

    def test_uniform_bounds(self):
        draws = seeded_rng(7).random(10000)
        assert draws.min() >= 0.0 and draws.max() < 1.0

    def test_negative_seed_rejected(self):
        with pytest.raises(ValidationError):
            seeded_rng(-1)

    def test_spawn_is_deterministic_and_independent(self):
        parent_a, parent_b = seeded_rng(5), seeded_rng(5)
        child_a, child_b = spawn(parent_a), spawn(parent_b)
        assert np.array_equal(child_a.random(10), child_b.random(10))
        assert not np.array_equal(spawn(seeded_rng(5)).random(10), seeded_rng(5).random(10))


class TestNormalizeRows:
    def test_unit_rows(self, rng):
        unit, norms = normalize_rows(rng.standard_normal((4, 3)), "x")
        np.testing.assert_allclose(np.linalg.norm(unit, axis=1), 1.0, atol=1e-14)
        assert norms.shape == (4, 1)

    def test_zero_row_rejected(self):
        with pytest.raises(ValidationError, match="row 1"):
            normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]), "x")

    def test_backward_matches_finite_differences(self, rng):
        r = rng.standard_normal((3, 4))

        def fn(p):
            unit, norms = normalize_rows(p[0], "x")
            return float(np.sum(r * unit)), [normalize_rows_backward(r, unit, norms)]

        report = grad_check(fn, [rng.standard_normal((3, 4))])
        assert report.passed, report.summary()


class TestGradCheck:
    def test_square(self):
        report = grad_check(lambda p: (float(p[0][0] ** 2), [2 * p[0]]), [np.array([3.0])])
        assert report.max_rel_error["p0"] < 1e-8

    def test_tanh_sum(self, rng):
        def fn(p):
            return float(np.sum(np.tanh(p[0]))), [1.0 - np.tanh(p[0]) ** 2]

        report = grad_check(fn, [rng.standard_normal((4, 3))], tol=1e-5)
        assert report.passed

    def test_doubled_gradient_fails(self, rng):
        def fn(p):
            return float(np.sum(np.tanh(p[0]))), [2.0 * (1.0 - np.tanh(p[0]) ** 2)]

        report = grad_check(fn, [rng.standard_normal((4, 3))])
        assert not report.passed
        assert "FAIL" in report.summary()

    def test_params_are_not_modified(self):
        x = np.array([1.0, 2.0])
        grad_check(lambda p: (float(np.sum(p[0] ** 2)), [2 * p[0]]), [x])
        assert x.tolist() == [1.0, 2.0]

    def test_names_in_report(self):
        report = grad_check(
            lambda p: (float(p[0][0] * p[1][0]), [p[1], p[0]]),
            [np.array([2.0]), np.array([3.0])],
            names=["a", "b"],
        )
        assert set(report.max_rel_error) == {"a", "b"}

    def test_non_finite_value_raises(self):
        with pytest.raises(NumericalError):
            grad_check(lambda p: (float("nan"), [p[0]]), [np.array([1.0])])

    @pytest.mark.parametrize("eps", [0.0, 1e-2])
    def test_eps_range(self, eps):
        with pytest.raises(ValidationError):
            grad_check(lambda p: (0.0, [p[0]]), [np.array([1.0])], eps=eps)

    def test_relative_error_floor(self):
        assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0
        assert relative_error(np.array([1e-9]), np.array([0.0]))[0] == pytest.approx(0.1)
