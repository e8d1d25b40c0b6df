# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

import os
import signal
import sys


def setup_state() -> None:
    from supattn.state import State

    State.PROFILE = os.environ.get("SUPATTN_PROFILE", State.PROFILE)


def main() -> None:
    signal.signal(signal.SIGINT, signal.SIG_DFL)
    setup_state()
    from supattn.application import SupAttnApplication

    sys.exit(SupAttnApplication().run(sys.argv))


if __name__ == "__main__":
    main()
