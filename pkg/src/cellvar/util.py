"""Shared small helpers: limit proxies, deterministic output writers, worker pool."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np


def tail_sup(values: Sequence[float], window: int = 3) -> float:
    """Upper-limit proxy: max over the last `window` entries of a finite schedule."""
    if len(values) == 0:
        raise ValueError("empty sequence has no tail")
    w = max(1, min(window, len(values)))
    return float(max(values[-w:]))


def tail_inf(values: Sequence[float], window: int = 3) -> float:
    """Lower-limit proxy: min over the last `window` entries of a finite schedule."""
    if len(values) == 0:
        raise ValueError("empty sequence has no tail")
    w = max(1, min(window, len(values)))
    return float(min(values[-w:]))


def monotone_correct(values: Sequence[float], direction: str) -> list[float]:
    """Enforce known monotonicity on a sampled stage sequence.

    direction="increasing": running max (stage truths can only grow);
    direction="decreasing": running min.
    """
    out: list[float] = []
    for v in values:
        if not out:
            out.append(float(v))
        elif direction == "increasing":
            out.append(max(out[-1], float(v)))
        elif direction == "decreasing":
            out.append(min(out[-1], float(v)))
        else:
            raise ValueError(f"unknown direction {direction!r}")
    return out


def check_strictly_monotone(values: Sequence[float], direction: str, name: str) -> None:
    arr = list(values)
    if not arr:
        raise ValueError(f"{name}: empty schedule")
    pairs = zip(arr, arr[1:])
    if direction == "decreasing":
        ok = all(a > b for a, b in pairs)
    elif direction == "increasing":
        ok = all(a < b for a, b in pairs)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    if not ok:
        raise ValueError(f"{name}: schedule must be strictly {direction}, got {arr}")


def fmt(x) -> str:
    """Canonical scalar formatting for CSV cells (shortest round-trip repr)."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv_atomic(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a CSV via temp-file-then-rename so partial outputs never appear."""
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(header))
            for row in rows:
                writer.writerow([fmt(c) for c in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dat_atomic(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Gnuplot-style companion table: space-separated columns, '#' header."""
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write("# " + " ".join(str(h) for h in header) + "\n")
            for row in rows:
                fh.write(" ".join(fmt(c) if c != "" else "nan" for c in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path: str | os.PathLike, payload) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2, default=_json_default)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Apply `fn` over `items`, preserving input order.

    Tasks must be pure; collected in input order, so results do not depend
    on the worker count.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def relative_gap(a: float, b: float, floor: float = 1e-12) -> float:
    """|a-b| over max(|a|,|b|,floor); floor keeps near-zero functionals comparable."""
    return abs(a - b) / max(abs(a), abs(b), floor)
