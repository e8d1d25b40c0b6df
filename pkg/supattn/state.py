# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

import os


class State:
    """Process-wide constants shared by the CLI, the logger and the reports"""

    # Constants
    APP_ID: str = "supattn"
    VERSION: str = "0.3.0"
    PROFILE: str = os.environ.get("SUPATTN_PROFILE", "release")

    # Features are sampled with a 10 ms hop
    FRAME_RATE: int = 100

    @classmethod
    def is_development(cls) -> bool:
        return cls.PROFILE == "development"
