"""Synthetic insertion-only streams and the text stream format.

A stream file starts with a header line ``n=<int> m=<int>`` followed by one
item index per line.
"""
from __future__ import annotations

import math
from itertools import islice
from pathlib import Path
from typing import Iterator

import numpy as np


def zipf_stream(n: int, m: int, s: float, rng: np.random.Generator) -> np.ndarray:
    """m draws from a Zipf(s) law truncated to [0, n); item 0 is the most frequent."""
    weights = np.arange(1, n + 1, dtype=np.float64) ** -s
    return rng.choice(n, size=m, p=weights / weights.sum())


def uniform_stream(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, n, size=m)


def planted_stream(n: int, m: int, rng: np.random.Generator, heavy_frac: float = 0.5,
                   mid_count: int = 0, mid_freq: int = 0) -> np.ndarray:
    """Three bands: item 0 gets ceil(heavy_frac * m) updates, items 1..mid_count get
    mid_freq each, and the rest of the budget is spread uniformly over the other items."""
    heavy = math.ceil(heavy_frac * m)
    mid_total = mid_count * mid_freq
    rest = m - heavy - mid_total
    if not 0 <= heavy_frac <= 1 or rest < 0 or 1 + mid_count > n:
        raise ValueError("planted bands do not fit in the stream")
    parts = [np.zeros(heavy, dtype=np.int64), np.repeat(np.arange(1, mid_count + 1), mid_freq)]
    tail_lo = 1 + mid_count
    if rest:
        if tail_lo >= n:
            raise ValueError("no room left for the low band")
        parts.append(rng.integers(tail_lo, n, size=rest))
    items = np.concatenate(parts).astype(np.int64)
    rng.shuffle(items)
    return items


def parse_dist(spec: str):
    """``zipf:<s>``, ``uniform`` or ``planted:<heavy_frac>[,<mid_count>,<mid_freq>]``."""
    name, _, arg = spec.partition(":")
    if name == "zipf":
        s = float(arg or 1.1)
        return lambda n, m, rng: zipf_stream(n, m, s, rng)
    if name == "uniform":
        return uniform_stream
    if name == "planted":
        fields = [f for f in arg.split(",") if f] if arg else []
        if len(fields) not in (0, 1, 3):
            raise ValueError(f"malformed band spec {spec!r}")
        heavy = float(fields[0]) if fields else 0.5
        mid_count, mid_freq = (int(fields[1]), int(fields[2])) if len(fields) == 3 else (0, 0)
        return lambda n, m, rng: planted_stream(n, m, rng, heavy, mid_count, mid_freq)
    raise ValueError(f"unknown distribution {spec!r}")


def write_stream(path, n: int, m: int, items) -> None:
    items = np.asarray(items, dtype=np.int64)
    if items.size > m or (items.size and (items.min() < 0 or items.max() >= n)):
        raise ValueError("stream does not fit its header")
    with open(path, "w") as fh:
        fh.write(f"n={n} m={m}\n")
        if items.size:
            fh.write("\n".join(map(str, items.tolist())))
            fh.write("\n")


def parse_header(line: str) -> tuple[int, int]:
    fields = dict(part.split("=", 1) for part in line.split())
    try:
        return int(fields["n"]), int(fields["m"])
    except (KeyError, ValueError):
        raise ValueError(f"bad stream header {line.strip()!r}; expected 'n=<int> m=<int>'") from None


class StreamReader:
    """Reads a stream file once, in chunks of item indices."""

    def __init__(self, path, chunk: int = 1 << 16):
        self.path = Path(path)
        self.chunk = chunk
        self._fh = open(self.path)
        self.n, self.m = parse_header(self._fh.readline())
        self._consumed = False

    def __iter__(self) -> Iterator[np.ndarray]:
        if self._consumed:
            raise RuntimeError("stream already consumed")
        self._consumed = True
        with self._fh:
            while True:
                lines = list(islice(self._fh, self.chunk))
                if not lines:
                    return
                yield np.array([int(x) for x in lines if x.strip()], dtype=np.int64)


def read_stream(path) -> tuple[int, int, np.ndarray]:
    reader = StreamReader(path)
    chunks = list(reader)
    items = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    return reader.n, reader.m, items
