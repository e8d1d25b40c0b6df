# Copyright 2024 The supattn authors
# SPDX-License-Identifier: MIT

import time
from concurrent.futures import ThreadPoolExecutor
from functools import wraps
from typing import Any, Callable, Iterable, Sequence

from supattn.lib.logging import Log


def threaded_map(
    function: Callable, items: Iterable[Any], max_workers: int | None = None
) -> list[Any]:
    """
    Run function over items in a thread pool and return results in input order.
    Callers must give every item its own state (no shared Rng or params).
    """

    items = list(items)
    if max_workers == 1 or len(items) <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(function, items))


def timeit(func):
    @wraps(func)
    def timeit_wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        end_time = time.perf_counter()
        total_time = end_time - start_time
        Log.debug(f"Timing: {func.__name__} took {total_time:.4f} s")
        return result

    return timeit_wrapper


def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Render rows as a whitespace-aligned text table"""

    def cell(value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.6f}"
        return str(value)

    text_rows: list[list[str]] = [[cell(v) for v in row] for row in rows]
    widths: list[int] = [len(h) for h in headers]
    for row in text_rows:
        for i, value in enumerate(row):
            widths[i] = max(widths[i], len(value))

    lines: list[str] = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip()
    ]
    for row in text_rows:
        lines.append("  ".join(v.ljust(widths[i]) for i, v in enumerate(row)).rstrip())
    return "\n".join(lines)
