# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

import numpy as np
import pytest

from supattn.lib.config import ExperimentConfig
from supattn.lib.data import SynthConfig
from supattn.lib.logging import Log
from supattn.lib.network import ModelShape
from supattn.lib.numerics import seeded_rng


@pytest.fixture(autouse=True)
def quiet_log(tmp_path):
    """Every test logs into its own file with the console silenced"""

    Log.init(log_file=str(tmp_path / "log.txt"), quiet=True)
    yield
    Log.quiet = False


@pytest.fixture
def rng():
    return seeded_rng(1234)


@pytest.fixture
def small_synth() -> SynthConfig:
    return SynthConfig(
        num_speakers=4,
        utterances_per_speaker=5,
        feature_dim=6,
        frames_per_utterance=60,
        seed=3,
    )


@pytest.fixture
def small_shape() -> ModelShape:
    return ModelShape(feature_dim=6, hidden=(5,), frame_dim=4, embed_dim=5, num_classes=4)


@pytest.fixture
def fast_config() -> ExperimentConfig:
    config = ExperimentConfig.preset("fast")
    config.steps = 8
    return config
