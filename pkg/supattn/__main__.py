# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

from supattn.supattn import main

main()
