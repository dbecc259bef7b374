"""Symmetric norm evaluators and the query engine over a release set."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .levels import LevelVector, levels_of, prune_non_contributing
from .params import mmc_bound
from .sketch import median_lower


class CalibrationError(ValueError):
    """The release was built for a smaller mmc bound than this norm needs."""


@dataclass(frozen=True)
class NormSpec:
    """A symmetric norm: ``lp`` (param p), ``topk`` (param k) or ``custom``.

    Custom evaluators receive a 1-d array and must declare an mmc bound.
    """

    family: str
    param: float | int | None = None
    evaluator: Callable[[np.ndarray], float] | None = field(default=None, compare=False)
    mmc: float | None = None
    name: str | None = None

    def __post_init__(self):
        if self.family == "lp":
            if self.param is None or not float(self.param) > 0:
                raise ValueError("L_p needs p > 0")
        elif self.family == "topk":
            if self.param is None or int(self.param) != self.param or self.param < 1:
                raise ValueError("top-k needs an integer k >= 1")
        elif self.family == "custom":
            if self.evaluator is None:
                raise ValueError("custom norms need an evaluator")
        else:
            raise ValueError(f"unknown norm family {self.family!r}")

    @classmethod
    def parse(cls, text: str) -> "NormSpec":
        """``lp:<p>`` or ``topk:<k>``."""
        family, _, arg = text.partition(":")
        family = family.strip().lower()
        if family == "lp":
            return cls("lp", float(arg))
        if family == "topk":
            return cls("topk", int(arg))
        raise ValueError(f"cannot parse norm {text!r}; expected lp:<p> or topk:<k>")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.family == "lp":
            return f"lp:{self.param:g}"
        if self.family == "topk":
            return f"topk:{int(self.param)}"
        return "custom"

    def mmc_for(self, n: int, c: float = 1.0) -> float:
        if self.mmc is not None:
            return float(self.mmc)
        return mmc_bound(self, n, c)

    def __call__(self, x) -> float:
        a = np.asarray(x, dtype=np.float64).ravel()
        if self.family == "custom":
            return float(self.evaluator(a))
        # sorting magnitudes first makes permutation and sign invariance exact
        a = np.sort(np.abs(a))[::-1]
        if self.family == "topk":
            return math.fsum(a[: int(self.param)])
        if a.size == 0 or a[0] == 0:
            return 0.0
        p = float(self.param)
        top = a[0]
        return float(top * math.fsum((a / top) ** p) ** (1.0 / p))

    def on_levels(self, V: LevelVector) -> float:
        return eval_on_levels(self, V)


def eval_on_levels(norm: NormSpec, V: LevelVector) -> float:
    """Norm of the vector holding b_i copies of each level's representative weight."""
    entries = [(i, b) for i, b in V.entries if b > 0]
    if not entries:
        return 0.0
    if norm.family == "lp":
        p = float(norm.param)
        logs = np.array([math.log(b) + p * V.log_weight(i) for i, b in entries])
        top = logs.max()
        return math.exp((top + math.log(np.exp(logs - top).sum())) / p)
    if norm.family == "topk":
        remaining = float(norm.param)
        total = 0.0
        for i, b in reversed(entries):
            take = min(remaining, b)
            total += take * V.weight(i)
            remaining -= take
            if remaining <= 0:
                break
        return total
    return float(norm.evaluator(V.multiset()))


def instance_level_vector(inst: dict, xi: float) -> LevelVector:
    """Assemble one instance's level vector from its released statistics."""
    gamma = inst["gamma"]
    labels = {i: lab for i, lab, _ in inst["levels"]}
    sizes: dict[int, float] = {}
    freqs = np.array([f for _, f in inst["high"] if f > 0], dtype=np.float64)
    if freqs.size:
        for i in levels_of(freqs, xi, gamma):
            if labels.get(int(i)) == "high":
                sizes[int(i)] = sizes.get(int(i), 0.0) + 1.0
    for band in ("medium", "low"):
        for i, b, _ in inst[band]:
            if labels.get(int(i)) == band:
                sizes[int(i)] = sizes.get(int(i), 0.0) + max(float(b), 0.0)
    return LevelVector.from_sizes(xi, gamma, sizes)


def query(C, norm: NormSpec, prune: bool = True) -> float:
    """Estimate norm(x) from a release set by post-processing alone."""
    pub = C.public
    c_mmc = C.constants.get("c_mmc", 1.0)
    if norm.mmc_for(pub["n"], c_mmc) > pub["M"] * (1 + 1e-12):
        raise CalibrationError("release not calibrated for this norm")
    beta = C.derived["beta"]
    xi = C.derived["xi"]
    values = []
    for inst in C.instances:
        V = instance_level_vector(inst, xi)
        if prune:
            V = prune_non_contributing(norm, V, beta)
        values.append(eval_on_levels(norm, V))
    return float(median_lower(np.array(values)))


@dataclass
class PropertyReport:
    norm: str
    trials: int
    passed: dict[str, bool]
    counterexamples: dict[str, tuple]

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def property_check(norm: NormSpec, dim: int, trials: int, rng: np.random.Generator | None = None,
                   tol: float = 1e-9) -> PropertyReport:
    """Spot-check permutation/sign invariance, homogeneity and the triangle inequality."""
    rng = np.random.default_rng(0) if rng is None else rng
    checks = ("permutation", "sign", "homogeneity", "triangle")
    passed = dict.fromkeys(checks, True)
    found: dict[str, tuple] = {}

    def fail(name, *witness):
        if passed[name]:
            passed[name] = False
            found[name] = witness

    for _ in range(trials):
        d = int(rng.integers(1, dim + 1))
        x = rng.standard_normal(d) * rng.exponential(10.0)
        y = rng.standard_normal(d) * rng.exponential(10.0)
        c = float(rng.standard_normal() * 10)
        lx, ly = norm(x), norm(y)
        perm = rng.permutation(d)
        if norm(x[perm]) != lx:
            fail("permutation", x, perm)
        flips = rng.choice([-1.0, 1.0], size=d)
        if norm(x * flips) != lx:
            fail("sign", x, flips)
        if abs(norm(c * x) - abs(c) * lx) > tol * max(abs(c) * lx, 1e-300):
            fail("homogeneity", x, c)
        if norm(x + y) > (lx + ly) * (1 + tol):
            fail("triangle", x, y)
    return PropertyReport(norm.label, trials, passed, found)
