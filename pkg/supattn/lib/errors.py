# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

EXIT_OK: int = 0
EXIT_VALIDATION: int = 1
EXIT_NUMERICAL: int = 2


class SupAttnError(Exception):
    """Base class for every error raised by supattn"""

    exit_code: int = EXIT_VALIDATION


class ValidationError(SupAttnError, ValueError):
    """Bad input: shapes, preconditions, configuration"""

    exit_code: int = EXIT_VALIDATION


class ParseError(ValidationError):
    """Malformed file. Message names the path and 1-based line number"""

    def __init__(self, path: str, line: int, msg: str) -> None:
        self.path: str = str(path)
        self.line: int = line
        super().__init__(f"{self.path}:{line}: {msg}")


class NumericalError(SupAttnError, ArithmeticError):
    """Non-finite loss or gradient, failed gradient check"""

    exit_code: int = EXIT_NUMERICAL
