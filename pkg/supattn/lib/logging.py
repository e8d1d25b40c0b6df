# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

import datetime
import os
import sys

from supattn.state import State


def _default_data_dir() -> str:
    if os.environ.get("SUPATTN_DATA_DIR"):
        return os.environ["SUPATTN_DATA_DIR"]
    base: str = os.environ.get("XDG_DATA_HOME") or os.path.join(
        os.path.expanduser("~"), ".local", "share"
    )
    return os.path.join(base, State.APP_ID)


class Log:
    """Logging class"""

    data_dir: str = _default_data_dir()
    log_file: str = os.path.join(data_dir, "log.txt")
    quiet: bool = False
    _file_failed: bool = False

    @classmethod
    def init(cls, log_file: str | None = None, quiet: bool = False) -> None:
        cls.quiet = quiet
        cls._file_failed = False
        if log_file:
            cls.log_file = log_file
        # Create data dir
        log_dir: str = os.path.dirname(cls.log_file)
        if log_dir and not os.path.exists(log_dir):
            try:
                os.makedirs(log_dir, exist_ok=True)
            except OSError:
                pass
        # Start new log
        cls.empty(
            f"""
-------------------------------------------------
Starting supattn {State.VERSION} at "{datetime.datetime.now().strftime("%Y %d %B %H:%M:%S")}"
-------------------------------------------------
"""
        )

    @classmethod
    def debug(cls, msg: str) -> None:
        if State.is_development():
            cls._print(f"\033[33;1m[DEBUG]\033[0m {msg}")
        cls._log(f"[DEBUG] {msg}")

    @classmethod
    def error(cls, msg: str) -> None:
        cls._print(f"\033[31;1m[ERROR]\033[0m {msg}", err=True)
        cls._log(f"[ERROR] {msg}")

    @classmethod
    def info(cls, msg: str) -> None:
        cls._print(f"\033[32;1m[INFO]\033[0m {msg}")
        cls._log(f"[INFO] {msg}")

    @classmethod
    def warning(cls, msg: str) -> None:
        cls._print(f"\033[35;1m[WARNING]\033[0m {msg}", err=True)
        cls._log(f"[WARNING] {msg}")

    @classmethod
    def empty(cls, msg: str) -> None:
        cls._print(msg)
        cls._log(msg)

    @classmethod
    def _print(cls, msg: str, err: bool = False) -> None:
        if cls.quiet:
            return
        print(msg, file=sys.stderr if err else sys.stdout)

    @classmethod
    def _log(cls, msg: str) -> None:
        if cls._file_failed:
            return
        try:
            with open(cls.log_file, "a") as f:
                f.write(msg + "\n")
        except OSError:
            # Report once, keep running without the file
            cls._file_failed = True
            cls._print("\033[31;1m[ERROR]\033[0m Can't write to the log file", err=True)
