"""CountSketch and the AMS second-moment sketch.

Both are linear in the frequency vector, so a stream can be ingested in
chunks of (item, count) pairs without changing the final state.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .hashing import KWiseHash

BLOB_MAGIC = b"CSK1"
BLOB_VERSION = 1
_HEADER = struct.Struct("<4sHIIQQHHQ")


def median_lower(values, axis: int = 0) -> np.ndarray:
    """Median along ``axis``; for even length the lower middle element."""
    a = np.asarray(values)
    size = a.shape[axis]
    if size == 0:
        raise ValueError("median of an empty set")
    mid = (size - 1) // 2
    return np.take(np.partition(a, mid, axis=axis), mid, axis=axis)


def _aggregate(items, counts=None):
    items = np.asarray(items, dtype=np.int64).ravel()
    if counts is None:
        return np.unique(items, return_counts=True)
    counts = np.asarray(counts, dtype=np.int64).ravel()
    if counts.shape != items.shape:
        raise ValueError("items and counts must have the same length")
    return items, counts


class CountSketch:
    """r x b table of signed counters with 2-wise buckets and 4-wise signs."""

    def __init__(self, n: int, rows: int, width: int, rng: np.random.Generator | None = None,
                 bucket_hash: KWiseHash | None = None, sign_hash: KWiseHash | None = None):
        if rows < 1 or width < 1:
            raise ValueError("rows and width must be positive")
        self.n = n
        self.rows = rows
        self.width = width
        if bucket_hash is None or sign_hash is None:
            if rng is None:
                raise ValueError("need either an rng or explicit hashes")
            bucket_hash = KWiseHash.random(2, width, rng, n, rows=rows)
            sign_hash = KWiseHash.random(4, 2, rng, n, rows=rows)
        self.bucket_hash = bucket_hash
        self.sign_hash = sign_hash
        self.table = np.zeros((rows, width), dtype=np.int64)
        self.updates = 0

    def _locate(self, items):
        buckets = self.bucket_hash(items)
        signs = 1 - 2 * self.sign_hash(items)
        return buckets, signs

    def update(self, item: int, count: int = 1) -> None:
        self.update_many([item], [count])

    def update_many(self, items, counts=None) -> None:
        keys, weights = _aggregate(items, counts)
        if keys.size == 0:
            return
        if keys.min() < 0 or keys.max() >= self.n:
            raise ValueError("item outside the universe")
        buckets, signs = self._locate(keys)
        flat = (np.arange(self.rows)[:, None] * self.width + buckets).ravel()
        delta = (signs * weights[None, :]).ravel()
        np.add.at(self.table.reshape(-1), flat, delta)
        self.updates += int(weights.sum())

    def row_values(self, ks) -> np.ndarray:
        """Sign-corrected counter for each row, shape (rows, len(ks))."""
        ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
        buckets, signs = self._locate(ks)
        return signs * np.take_along_axis(self.table, buckets, axis=1)

    def estimate(self, ks) -> np.ndarray | int:
        scalar = np.ndim(ks) == 0
        est = median_lower(self.row_values(ks), axis=0)
        return int(est[0]) if scalar else est

    def estimate_all(self, chunk: int = 1 << 16) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        for start in range(0, self.n, chunk):
            ks = np.arange(start, min(start + chunk, self.n))
            out[start : start + ks.size] = self.estimate(ks)
        return out

    def compatible(self, other: "CountSketch") -> bool:
        return (
            self.table.shape == other.table.shape
            and self.n == other.n
            and np.array_equal(self.bucket_hash.coefficients, other.bucket_hash.coefficients)
            and np.array_equal(self.sign_hash.coefficients, other.sign_hash.coefficients)
        )

    def merge(self, other: "CountSketch") -> "CountSketch":
        if not self.compatible(other):
            raise ValueError("can only merge sketches built with identical hashes")
        out = self.copy()
        out.table += other.table
        out.updates += other.updates
        return out

    def copy(self) -> "CountSketch":
        out = CountSketch(self.n, self.rows, self.width,
                          bucket_hash=self.bucket_hash, sign_hash=self.sign_hash)
        out.table = self.table.copy()
        out.updates = self.updates
        return out

    def to_bytes(self) -> bytes:
        """Versioned little-endian blob: header, hash coefficients, row-major counters."""
        header = _HEADER.pack(BLOB_MAGIC, BLOB_VERSION, self.rows, self.width, self.n,
                              self.bucket_hash.p, self.bucket_hash.k, self.sign_hash.k,
                              self.updates)
        coeffs = np.concatenate([self.bucket_hash.coefficients.ravel(),
                                 self.sign_hash.coefficients.ravel()]).astype("<u8")
        return header + coeffs.tobytes() + self.table.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CountSketch":
        magic, version, rows, width, n, p, kb, ks, updates = _HEADER.unpack_from(blob)
        if magic != BLOB_MAGIC:
            raise ValueError("not a CountSketch blob")
        if version != BLOB_VERSION:
            raise ValueError(f"unsupported blob version {version}")
        off = _HEADER.size
        ncoef = rows * (kb + ks)
        coeffs = np.frombuffer(blob, dtype="<u8", count=ncoef, offset=off)
        off += 8 * ncoef
        table = np.frombuffer(blob, dtype="<i8", count=rows * width, offset=off)
        if off + 8 * rows * width != len(blob):
            raise ValueError("truncated or oversized CountSketch blob")
        bh = KWiseHash(kb, p, coeffs[: rows * kb].reshape(rows, kb), width)
        sh = KWiseHash(ks, p, coeffs[rows * kb :].reshape(rows, ks), 2)
        out = cls(n, rows, width, bucket_hash=bh, sign_hash=sh)
        out.table = table.reshape(rows, width).astype(np.int64)
        out.updates = updates
        return out


class AmsSketch:
    """B independent +-1 projections; Z^2 is the mean of the squared projections."""

    def __init__(self, n: int, reps: int, rng: np.random.Generator | None = None,
                 sign_hash: KWiseHash | None = None):
        if reps < 1:
            raise ValueError("need at least one repetition")
        self.n = n
        self.reps = reps
        self.sign_hash = sign_hash if sign_hash is not None else KWiseHash.random(4, 2, rng, n, rows=reps)
        self.acc = np.zeros(reps, dtype=np.int64)

    def update_many(self, items, counts=None) -> None:
        keys, weights = _aggregate(items, counts)
        if keys.size == 0:
            return
        signs = 1 - 2 * self.sign_hash(keys)
        self.acc += signs @ weights

    def update(self, item: int, count: int = 1) -> None:
        self.update_many([item], [count])

    def estimate(self) -> float:
        a = self.acc.astype(np.float64)
        return math.sqrt(float(np.mean(a * a)))


@dataclass
class HeavyHitterReport:
    items: list[tuple[int, float]]
    threshold: float
    eta: float
    nu: float
    tag: str = ""
    noise_scale: float = 0.0

    @property
    def indices(self) -> list[int]:
        return [k for k, _ in self.items]

    def as_dict(self) -> dict[int, float]:
        return dict(self.items)


def hh_threshold(l2_estimate: float, eta: float, nu: float, exclusion: float = 0.5) -> float:
    """Midpoint between the lowest estimate of a must-report coordinate and the
    highest estimate of a must-exclude coordinate."""
    lo_included = (1 - nu) * eta * l2_estimate
    hi_excluded = (1 + nu) * exclusion * eta / 2 * l2_estimate
    return (lo_included + hi_excluded) / 2


def hh_capacity(eta: float, c: float = 4.0) -> int:
    return math.ceil(c / eta**2)


def top_by_value(keys: np.ndarray, values: np.ndarray, cap: int) -> list[tuple[int, float]]:
    """(key, value) pairs for the ``cap`` largest values, largest first, ties by key."""
    if keys.size == 0 or cap <= 0:
        return []
    order = np.lexsort((keys, -values))[:cap]
    return [(int(keys[i]), values[i].item()) for i in order]


def heavy_hitters(cs: CountSketch, f2_threshold: float, eta: float, nu: float,
                  exclusion: float = 0.5) -> HeavyHitterReport:
    """Coordinates whose CountSketch estimate clears the heavy-hitter threshold.

    ``f2_threshold`` is an estimate of the L2 norm of the stream.
    """
    if not (0 < eta < 1 and 0 < nu < 1):
        raise ValueError("eta and nu must lie in (0, 1)")
    thr = hh_threshold(f2_threshold, eta, nu, exclusion)
    est = cs.estimate_all()
    keys = np.flatnonzero(est >= max(thr, 1e-12))
    items = top_by_value(keys, est[keys].astype(np.float64), hh_capacity(eta))
    return HeavyHitterReport(items, thr, eta, nu)
