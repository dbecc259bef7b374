"""Geometric level sets, importance/contribution predicates and case detection.

A value v > 0 lives in level i when gamma * xi^(i-1) <= v < gamma * xi^i.
Values below gamma go to level 0.  Level i is represented by the weight
gamma * xi^i, the upper end of its window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np


def level_of(value: float, xi: float, gamma: float = 1.0) -> int:
    if not value > 0:
        raise ValueError(f"level_of needs a positive value, got {value}")
    if not xi > 1:
        raise ValueError("xi must exceed 1")
    i = math.floor(math.log(value / gamma) / math.log(xi)) + 1
    # the logarithm can land one off at a boundary; settle it with direct comparisons
    while i > 0 and value < gamma * xi ** (i - 1):
        i -= 1
    while value >= gamma * xi**i:
        i += 1
    return max(i, 0)


def levels_of(values, xi: float, gamma: float = 1.0) -> np.ndarray:
    """Vectorised level_of for an array of positive values."""
    v = np.asarray(values, dtype=np.float64)
    if v.size and not np.all(v > 0):
        raise ValueError("levels_of needs positive values")
    i = np.floor(np.log(v / gamma) / math.log(xi)).astype(np.int64) + 1
    i = np.maximum(i, 0)
    lower = gamma * np.power(xi, (i - 1).astype(np.float64))
    i = np.where((i > 0) & (v < lower), i - 1, i)
    upper = gamma * np.power(xi, i.astype(np.float64))
    i = np.where(v >= upper, i + 1, i)
    return i


@dataclass(frozen=True)
class LevelVector:
    """Sparse level sizes; levels not listed have size zero."""

    xi: float
    gamma: float
    entries: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.xi > 1:
            raise ValueError("xi must exceed 1")
        if not 0.5 < self.gamma <= 1:
            raise ValueError("gamma must lie in (1/2, 1]")
        idx = [i for i, _ in self.entries]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("level indices must be strictly increasing")

    @classmethod
    def from_sizes(cls, xi: float, gamma: float, sizes: Mapping[int, float] | Iterable[tuple[int, float]]):
        """Build from level -> size; negative sizes clamp to zero and zeros are dropped."""
        items = sizes.items() if isinstance(sizes, Mapping) else sizes
        acc: dict[int, float] = {}
        for i, b in items:
            acc[int(i)] = acc.get(int(i), 0.0) + float(b)
        entries = tuple(sorted((i, b) for i, b in acc.items() if b > 0))
        return cls(xi, gamma, entries)

    @classmethod
    def from_values(cls, values, xi: float, gamma: float = 1.0) -> "LevelVector":
        v = np.asarray(values, dtype=np.float64)
        v = np.abs(v[v != 0])
        if v.size == 0:
            return cls(xi, gamma, ())
        lv, counts = np.unique(levels_of(v, xi, gamma), return_counts=True)
        return cls(xi, gamma, tuple((int(i), float(c)) for i, c in zip(lv, counts)))

    def size(self, i: int) -> float:
        return dict(self.entries).get(i, 0.0)

    @property
    def levels(self) -> list[int]:
        return [i for i, _ in self.entries]

    @property
    def total(self) -> float:
        return sum(b for _, b in self.entries)

    def weight(self, i: int) -> float:
        return self.gamma * self.xi**i

    def log_weight(self, i: int) -> float:
        return math.log(self.gamma) + i * math.log(self.xi)

    def single(self, i: int) -> "LevelVector":
        b = self.size(i)
        return LevelVector(self.xi, self.gamma, ((i, b),) if b > 0 else ())

    def restrict(self, keep: Iterable[int]) -> "LevelVector":
        keep = set(keep)
        return LevelVector(self.xi, self.gamma, tuple((i, b) for i, b in self.entries if i in keep))

    def multiset(self) -> np.ndarray:
        """Weights with sizes rounded to whole copies, nonincreasing."""
        parts = [np.full(int(round(b)), self.weight(i)) for i, b in reversed(self.entries)]
        return np.concatenate(parts) if parts else np.zeros(0)


def is_important(V: LevelVector, i: int, beta: float) -> bool:
    b_i = V.size(i)
    above = sum(b for j, b in V.entries if j > i)
    if not b_i > beta * above:
        return False
    # b_i xi^{2i} >= beta * sum_{j<=i} b_j xi^{2j}, divided through by xi^{2i}
    below = sum(b * V.xi ** (2 * (j - i)) for j, b in V.entries if j <= i)
    return b_i >= beta * below


def is_contributing(norm, V: LevelVector, i: int, beta: float) -> bool:
    b_i = V.size(i)
    if b_i <= 0:
        return False
    return norm.on_levels(V.single(i)) >= beta * norm.on_levels(V)


def prune_non_contributing(norm, V: LevelVector, beta: float) -> LevelVector:
    """Drop every level that is not beta-contributing with respect to V."""
    full = norm.on_levels(V)
    keep = [i for i, b in V.entries if b > 0 and norm.on_levels(V.single(i)) >= beta * full]
    return V.restrict(keep)


def implied_beta(beta: float, mmc: float, n: int, xi: float, lam: float = 1.0) -> float:
    """Importance parameter implied by beta-contribution."""
    logn = max(math.log2(n), 1.0)
    return lam * beta**2 / (mmc**2 * logn**2 * max(math.log(n) / math.log(xi), 1.0))


@dataclass(frozen=True)
class CaseThresholds:
    t2: float
    tau_high: float
    tau_win: float
    s: int

    @classmethod
    def from_derived(cls, d) -> "CaseThresholds":
        return cls(d.t2, d.tau_high, d.tau_win, d.s)


def witness_j(weight: float, f2: float, th: CaseThresholds) -> int:
    """Smallest j in [0, s] whose substream makes a coordinate of this weight heavy."""
    ratio = th.tau_win * f2 / weight**2
    if ratio <= 1:
        return 0
    return min(max(math.ceil(math.log2(ratio)), 0), th.s)


def detect_case(i: int, V: LevelVector | None, f2: float, params, xi: float | None = None,
                gamma: float | None = None) -> tuple[str, int]:
    """Label a level high, medium or low and name the substream that witnesses it.

    ``params`` is a CaseThresholds or anything with t2/tau_high/tau_win/s.
    """
    if not f2 > 0:
        raise ValueError("f2 must be positive")
    th = params if isinstance(params, CaseThresholds) else CaseThresholds.from_derived(params)
    xi = V.xi if xi is None else xi
    gamma = V.gamma if gamma is None else gamma
    w = gamma * xi**i
    if w <= th.t2:
        return "low", witness_j(w, f2, th)
    if w * w >= th.tau_high * f2:
        return "high", 0
    return "medium", witness_j(w, f2, th)


def case_table(ell: int, f2: float, params, xi: float, gamma: float) -> list[tuple[str, int]]:
    return [detect_case(i, None, f2, params, xi=xi, gamma=gamma) for i in range(ell + 1)]
