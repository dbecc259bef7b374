"""Exact reference computations on the full frequency vector."""
from __future__ import annotations

from dataclasses import dataclass

import mpmath
import numpy as np

from .levels import LevelVector, detect_case, is_contributing, is_important

MAX_ORACLE_N = 10**6


class FrequencyVector:
    """Dense nonnegative counts over [0, n)."""

    def __init__(self, n: int):
        if not 1 <= n <= MAX_ORACLE_N:
            raise ValueError(f"oracle universe must be in [1, {MAX_ORACLE_N}]")
        self.n = n
        self.x = np.zeros(n, dtype=np.int64)

    @classmethod
    def from_items(cls, n: int, items) -> "FrequencyVector":
        v = cls(n)
        v.ingest_many(items)
        return v

    @property
    def updates(self) -> int:
        return int(self.x.sum())

    def ingest(self, item: int) -> "FrequencyVector":
        if not 0 <= item < self.n:
            raise ValueError(f"item {item} outside [0, {self.n})")
        self.x[item] += 1
        return self

    def ingest_many(self, items) -> "FrequencyVector":
        items = np.asarray(items, dtype=np.int64).ravel()
        if items.size and (items.min() < 0 or items.max() >= self.n):
            raise ValueError("item outside the universe")
        self.x += np.bincount(items, minlength=self.n)
        return self

    @property
    def f2(self) -> int:
        return int(sum(int(v) * int(v) for v in self.x[self.x > 0]))


def oracle_ingest(v: FrequencyVector, item: int) -> FrequencyVector:
    return v.ingest(item)


def oracle_norm(v: FrequencyVector | np.ndarray, norm, dps: int = 50) -> float:
    """Norm of the exact frequency vector in extended precision."""
    x = v.x if isinstance(v, FrequencyVector) else np.asarray(v)
    vals = sorted((abs(int(a)) for a in x if a != 0), reverse=True)
    if norm.family == "topk":
        return float(sum(vals[: int(norm.param)]))
    if norm.family == "lp":
        with mpmath.workdps(dps):
            p = mpmath.mpf(norm.param)
            total = mpmath.fsum(mpmath.mpf(a) ** p for a in vals)
            return float(total ** (1 / p)) if vals else 0.0
    return float(norm(np.asarray(x, dtype=np.float64)))


def oracle_levels(v: FrequencyVector | np.ndarray, xi: float, gamma: float = 1.0) -> LevelVector:
    x = v.x if isinstance(v, FrequencyVector) else np.asarray(v)
    return LevelVector.from_values(x, xi, gamma)


@dataclass(frozen=True)
class LevelClass:
    level: int
    size: float
    important: bool
    contributing: bool
    case: str
    witness: int


def oracle_classify(v, xi: float, gamma: float, beta: float, norm, thresholds=None) -> list[LevelClass]:
    """Exact predicates for every nonempty level.  Case labels need ``thresholds``."""
    x = v.x if isinstance(v, FrequencyVector) else np.asarray(v)
    if len(x) > 10**5:
        raise ValueError("oracle_classify is limited to n <= 1e5")
    V = LevelVector.from_values(x, xi, gamma)
    f2 = float(np.sum(np.asarray(x, dtype=np.float64) ** 2))
    out = []
    for i, b in V.entries:
        case, j = ("", -1)
        if thresholds is not None and f2 > 0:
            case, j = detect_case(i, V, f2, thresholds)
        out.append(LevelClass(i, b, is_important(V, i, beta), is_contributing(norm, V, i, beta), case, j))
    return out
