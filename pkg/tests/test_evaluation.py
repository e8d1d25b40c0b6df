# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

import math

import numpy as np
import pytest

from supattn.lib.data import Dataset, FrameSequence, SynthConfig, synth_dataset
from supattn.lib.errors import ParseError, ValidationError
from supattn.lib.evaluation import (
    DcfConfig,
    ScoredTrialSet,
    Trial,
    build_trials,
    compute_eer,
    compute_min_dcf,
    cosine_score,
    det_curve,
    duration_protocol,
    read_embeddings,
    read_trials,
    score_trials,
    sign_test,
    write_embeddings,
    write_scores,
    write_trials,
)
from supattn.lib.numerics import seeded_rng

TARGETS = [0.9, 0.8, 0.7, 0.4]
NONTARGETS = [0.5, 0.3, 0.2, 0.1]


def oracle(scores: ScoredTrialSet, cfg: DcfConfig) -> tuple[float, float]:
    """Exhaustive sweep over midpoints of the sorted distinct scores plus ±inf"""

    distinct = np.unique(scores.scores)
    thresholds = np.concatenate([[-np.inf], (distinct[:-1] + distinct[1:]) / 2, [np.inf]])
    targets, nontargets = scores.target_scores, scores.nontarget_scores
    p_miss = np.array([(targets < t).mean() for t in thresholds])
    p_fa = np.array([(nontargets >= t).mean() for t in thresholds])

    diff = p_miss - p_fa
    k = int(np.argmax(diff >= 0))
    if k == 0 or diff[k] == 0:
        eer = p_miss[k]
    else:
        w = -diff[k - 1] / (diff[k] - diff[k - 1])
        eer = p_miss[k - 1] + w * (p_miss[k] - p_miss[k - 1])

    costs = cfg.c_miss * cfg.p_target * p_miss + cfg.c_fa * (1 - cfg.p_target) * p_fa
    norm = min(cfg.c_miss * cfg.p_target, cfg.c_fa * (1 - cfg.p_target))
    return float(eer), float(costs.min() / norm)


def random_trials(seed: int, count: int = 1000) -> ScoredTrialSet:
    rng = seeded_rng(seed)
    labels = rng.random(count) < 0.3
    labels[:2] = [True, False]
    scores = rng.normal(0.0, 1.0, count) + 1.5 * labels
    # Rounding introduces ties
    scores = np.round(scores, 2)
    return ScoredTrialSet.from_scores(scores[labels], scores[~labels])


class TestCosineScore:
    def test_identical(self):
        assert cosine_score([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert cosine_score([1.0, 0.0], [0.0, 3.0]) == 0.0

    def test_antiparallel(self):
        assert cosine_score([1.0, 2.0], [-2.0, -4.0]) == pytest.approx(-1.0, abs=1e-15)

    def test_zero(self):
        with pytest.raises(ValidationError):
            cosine_score([0.0, 0.0], [1.0, 0.0])


class TestEer:
    def test_perfect_separation(self):
        eer, _ = compute_eer(ScoredTrialSet.from_scores([0.9, 0.8], [0.3, 0.1]))
        assert eer == 0.0

    def test_fixture(self):
        eer, threshold = compute_eer(ScoredTrialSet.from_scores(TARGETS, NONTARGETS))
        assert eer == pytest.approx(0.25, abs=1e-12)
        assert threshold == pytest.approx(0.5)

    def test_swapped_labels(self):
        eer, _ = compute_eer(ScoredTrialSet.from_scores(NONTARGETS, TARGETS))
        assert eer >= 0.5

    def test_missing_class(self):
        with pytest.raises(ValidationError):
            compute_eer(ScoredTrialSet.from_scores([0.1, 0.2], []))

    def test_chance_scores(self):
        rng = seeded_rng(0)
        eer, _ = compute_eer(ScoredTrialSet.from_scores(rng.random(4000), rng.random(4000)))
        assert eer == pytest.approx(0.5, abs=0.03)


class TestMinDcf:
    def test_perfect_separation(self):
        value, _ = compute_min_dcf(ScoredTrialSet.from_scores([0.9, 0.8], [0.3, 0.1]))
        assert value == 0.0

    def test_fixture(self):
        value, threshold = compute_min_dcf(ScoredTrialSet.from_scores(TARGETS, NONTARGETS))
        assert value == pytest.approx(0.25, abs=1e-12)
        assert threshold == pytest.approx(0.7)

    def test_unnormalized(self):
        cfg = DcfConfig(normalize=False)
        value, _ = compute_min_dcf(ScoredTrialSet.from_scores(TARGETS, NONTARGETS), cfg)
        assert value == pytest.approx(0.0025, abs=1e-12)

    def test_bad_config(self):
        with pytest.raises(ValidationError):
            compute_min_dcf(ScoredTrialSet.from_scores(TARGETS, NONTARGETS), DcfConfig(p_target=0.0))


class TestOracle:
    @pytest.mark.parametrize("seed", range(20))
    def test_agrees_with_sweep(self, seed):
        scores = random_trials(seed)
        cfg = DcfConfig()
        eer, min_dcf = oracle(scores, cfg)
        assert compute_eer(scores)[0] == pytest.approx(eer, abs=1e-9)
        assert compute_min_dcf(scores, cfg)[0] == pytest.approx(min_dcf, abs=1e-9)
        assert 0.0 <= eer <= 1.0 and 0.0 <= min_dcf <= 1.0

    @pytest.mark.parametrize("transform", [lambda s: 5 * s + 2, np.exp, lambda s: s**3])
    def test_monotone_transform(self, transform):
        scores = random_trials(3)
        moved = ScoredTrialSet(scores.trials, transform(scores.scores))
        assert compute_eer(moved)[0] == pytest.approx(compute_eer(scores)[0], abs=1e-9)
        assert compute_min_dcf(moved)[0] == pytest.approx(compute_min_dcf(scores)[0], abs=1e-9)


class TestDetCurve:
    def test_end_points(self):
        points = det_curve(ScoredTrialSet.from_scores(TARGETS, NONTARGETS))
        assert len(points) <= 9
        assert (points[0].p_miss, points[0].p_fa) == (0.0, 1.0)
        assert (points[-1].p_miss, points[-1].p_fa) == (1.0, 0.0)

    def test_monotone(self):
        points = det_curve(random_trials(5))
        for a, b in zip(points, points[1:]):
            assert a.threshold < b.threshold
            assert a.p_miss <= b.p_miss
            assert a.p_fa >= b.p_fa

    def test_eer_between_points(self):
        scores = random_trials(7)
        eer, _ = compute_eer(scores)
        points = det_curve(scores)
        assert any(
            a.p_miss <= eer <= b.p_miss and b.p_fa <= eer <= a.p_fa
            for a, b in zip(points, points[1:])
        )


class TestBuildTrials:
    def test_counts(self):
        dataset = synth_dataset(
            SynthConfig(num_speakers=20, utterances_per_speaker=3, feature_dim=2, frames_per_utterance=5)
        )
        trials = build_trials(dataset, 100, seeded_rng(0))
        assert len(trials) == 4000
        assert sum(t.target for t in trials) == 2000
        assert all(t.enroll_utterance_id != t.test_utterance_id for t in trials)

    def test_minimal(self):
        utterances = [
            FrameSequence(np.ones((2, 2)), f"s{s}u{u}", s) for s in range(2) for u in range(2)
        ]
        trials = build_trials(Dataset(utterances, 2), 1, seeded_rng(0))
        assert len(trials) == 4
        assert sum(t.target for t in trials) == 2

    def test_every_distinct_pair_before_repeats(self):
        dataset = synth_dataset(
            SynthConfig(num_speakers=3, utterances_per_speaker=3, feature_dim=2, frames_per_utterance=5)
        )
        for seed in range(20):
            trials = build_trials(dataset, 5, seeded_rng(seed))
            for speaker in range(3):
                own = [t for t in trials if dataset.get(t.enroll_utterance_id).speaker == speaker]
                targets = {frozenset((t.enroll_utterance_id, t.test_utterance_id)) for t in own if t.target}
                nontargets = {(t.enroll_utterance_id, t.test_utterance_id) for t in own if not t.target}
                assert len(targets) == 3
                assert len(nontargets) == 5

    def test_targets_share_speaker(self, small_synth):
        dataset = synth_dataset(small_synth)
        for t in build_trials(dataset, 5, seeded_rng(1)):
            same = dataset.get(t.enroll_utterance_id).speaker == dataset.get(t.test_utterance_id).speaker
            assert same == t.target

    def test_deterministic(self, small_synth):
        dataset = synth_dataset(small_synth)
        assert build_trials(dataset, 5, seeded_rng(4)) == build_trials(dataset, 5, seeded_rng(4))

    def test_single_utterance_speaker(self):
        utterances = [
            FrameSequence(np.ones((2, 2)), "a", 0),
            FrameSequence(np.ones((2, 2)), "b", 0),
            FrameSequence(np.ones((2, 2)), "c", 1),
        ]
        with pytest.raises(ValidationError, match="speaker 1"):
            build_trials(Dataset(utterances, 2), 1, seeded_rng(0))


class TestDurationProtocol:
    @staticmethod
    def mean_embedding(frames: FrameSequence) -> np.ndarray:
        return frames.features.mean(axis=0)

    def test_full_and_long_crops_match(self, small_synth):
        dataset = synth_dataset(small_synth)
        trials = build_trials(dataset, 3, seeded_rng(0))
        full = duration_protocol(dataset, trials, self.mean_embedding, None, seeded_rng(1))
        long = duration_protocol(dataset, trials, self.mean_embedding, 100.0, seeded_rng(1))
        reference = score_trials(
            trials, {u.utterance_id: self.mean_embedding(u) for u in dataset.utterances}
        )
        np.testing.assert_array_equal(full.scores, reference.scores)
        np.testing.assert_array_equal(long.scores, reference.scores)

    def test_short_crops_change_scores(self, small_synth):
        dataset = synth_dataset(small_synth)
        trials = build_trials(dataset, 3, seeded_rng(0))
        full = duration_protocol(dataset, trials, self.mean_embedding, None, seeded_rng(1))
        short = duration_protocol(dataset, trials, self.mean_embedding, 0.1, seeded_rng(1))
        assert not np.array_equal(full.scores, short.scores)

    def test_deterministic(self, small_synth):
        dataset = synth_dataset(small_synth)
        trials = build_trials(dataset, 3, seeded_rng(0))
        a = duration_protocol(dataset, trials, self.mean_embedding, 0.2, seeded_rng(9))
        b = duration_protocol(dataset, trials, self.mean_embedding, 0.2, seeded_rng(9))
        np.testing.assert_array_equal(a.scores, b.scores)


class TestFiles:
    def test_trials_round_trip(self, tmp_path):
        trials = [Trial("a", "b", True), Trial("a", "c", False)]
        path = str(tmp_path / "trials.txt")
        write_trials(trials, path)
        assert read_trials(path) == trials

    def test_bad_trial_line(self, tmp_path):
        path = tmp_path / "trials.txt"
        path.write_text("1 a b\n2 a c\n")
        with pytest.raises(ParseError, match=":2:"):
            read_trials(str(path))

    def test_scores_file(self, tmp_path):
        scored = ScoredTrialSet([Trial("a", "b", True)], [0.25])
        path = tmp_path / "scores.txt"
        write_scores(scored, str(path))
        assert path.read_text() == "0.25 a b\n"

    def test_embeddings_round_trip(self, tmp_path, rng):
        embeddings = {"x": rng.standard_normal(3), "y": rng.standard_normal(3)}
        path = str(tmp_path / "emb.txt")
        write_embeddings(embeddings, path)
        back = read_embeddings(path)
        assert sorted(back) == ["x", "y"]
        np.testing.assert_array_equal(back["x"], embeddings["x"])

    def test_embedding_dimension(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("x 1 2\ny 1 2 3\n")
        with pytest.raises(ParseError, match=":2:"):
            read_embeddings(str(path))

    def test_unknown_utterance(self):
        with pytest.raises(ValidationError):
            score_trials([Trial("a", "b", True)], {"a": np.ones(2)})


class TestSignTest:
    def test_all_wins(self):
        assert sign_test(10, 10) == pytest.approx(1 / 1024)

    def test_no_wins(self):
        assert sign_test(0, 10) == 1.0

    def test_half(self):
        tail = sum(math.comb(10, i) for i in range(5, 11))
        assert sign_test(5, 10) == pytest.approx(tail / 1024)

    def test_bad_counts(self):
        with pytest.raises(ValidationError):
            sign_test(4, 3)
