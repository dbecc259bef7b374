"""Laplace noise, private CountSketch releases and budget accounting.

Noise is plain floating point Laplace; the known floating-point side channel
of this sampler is out of scope for this research code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .sketch import CountSketch, HeavyHitterReport, hh_threshold, top_by_value

COMPONENT_IDS = {"f2": 1, "partition": 2, "high": 3, "medium": 4, "low": 5, "audit": 99}

_U53 = float(1 << 53)


def noise_rng(seed: int, instance: int, component: str, sub: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, instance, component, sub)."""
    key = (instance, COMPONENT_IDS[component], sub)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


class LaplaceNoise:
    """Laplace(0, scale) via the inverse CDF.  ``pinned`` makes every draw 0."""

    def __init__(self, scale: float, rng: np.random.Generator | None = None, pinned: bool = False):
        if not scale > 0:
            raise ValueError(f"Laplace scale must be positive, got {scale}")
        if rng is None and not pinned:
            rng = np.random.default_rng()
        self.scale = float(scale)
        self.rng = rng
        self.pinned = pinned

    @classmethod
    def keyed(cls, scale, seed, instance, component, sub=0, pinned=False):
        return cls(scale, noise_rng(seed, instance, component, sub), pinned)

    @staticmethod
    def transform(u, scale: float):
        """Map u in (-1/2, 1/2) to a Laplace draw."""
        u = np.asarray(u, dtype=np.float64)
        return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))

    def sample(self, size=None):
        if self.pinned:
            return 0.0 if size is None else np.zeros(size)
        u = self.rng.integers(1, 1 << 53, size=size) / _U53 - 0.5
        x = self.transform(u, self.scale)
        return float(x) if size is None else x


def laplace_sample(src: LaplaceNoise) -> float:
    return src.sample()


def _check_floor(scale: float, sensitivity: float, epsilon: float) -> None:
    if scale < sensitivity / epsilon * (1 - 1e-12):
        raise ValueError(
            f"noise scale {scale} below the floor {sensitivity}/{epsilon} for this budget"
        )


def priv_estimate(cs: CountSketch, k: int, scale: float, src: LaplaceNoise, epsilon: float) -> float:
    """CountSketch estimate of one coordinate plus Laplace noise (sensitivity 2)."""
    _check_floor(scale, 2.0, epsilon)
    if src.scale != scale:
        raise ValueError("noise source scale does not match the requested scale")
    return float(cs.estimate(k)) + src.sample()


def noisy_estimates(cs: CountSketch, candidates: np.ndarray, src: LaplaceNoise) -> np.ndarray:
    est = cs.estimate(candidates).astype(np.float64) if candidates.size else np.zeros(0)
    return est + src.sample(candidates.size)


def priv_threshold_release(cs: CountSketch, ams_Z: float, eta: float, nu: float, scale: float,
                           src: LaplaceNoise, capacity: int | None = None, exclusion: float = 0.5,
                           candidates: np.ndarray | None = None, tag: str = "high") -> HeavyHitterReport:
    """Release every candidate whose noisy estimate clears a noisy heavy-hitter threshold.

    The threshold is the heavy-hitter cut for the (already private) L2 estimate
    ``ams_Z``, raised by scale * ln(20 * candidates), plus one Laplace draw.
    At most ``capacity`` coordinates, those with the largest noisy estimates,
    are released.
    """
    if candidates is None:
        candidates = np.arange(cs.n)
    # data-independent margin so that pure noise rarely clears the threshold
    margin = src.scale * math.log(20 * max(len(candidates), 1))
    threshold = hh_threshold(ams_Z, eta, nu, exclusion) + margin + src.sample()
    noisy = noisy_estimates(cs, candidates, src)
    keep = noisy >= threshold
    cap = len(candidates) if capacity is None else capacity
    items = top_by_value(candidates[keep], noisy[keep], cap)
    return HeavyHitterReport(items, threshold, eta, nu, tag=tag, noise_scale=src.scale)


def priv_top_k_release(cs: CountSketch, K: int, eta: float, epsilon_frac: float, src: LaplaceNoise,
                       capacity_const: float = 1.0, candidates: np.ndarray | None = None) -> HeavyHitterReport:
    """The K largest noisy CountSketch estimates, noise scale 2/(eta * epsilon_frac)."""
    capacity = math.ceil(capacity_const / eta**2 - 1e-9)
    if K > capacity:
        raise ValueError(f"K={K} exceeds the candidate capacity {capacity}")
    scale = 2.0 / (eta * epsilon_frac)
    if not math.isclose(src.scale, scale, rel_tol=1e-12):
        raise ValueError("noise source scale does not match 2/(eta*epsilon_frac)")
    if candidates is None:
        candidates = np.arange(cs.n)
    noisy = noisy_estimates(cs, candidates, src)
    items = top_by_value(candidates, noisy, K)
    return HeavyHitterReport(items, -math.inf, eta, 0.0, tag="partition", noise_scale=scale)


@dataclass(frozen=True)
class BudgetRow:
    component: str
    instance: int
    sensitivity: float
    scale: float
    eps_share: Fraction
    delta_share: Fraction


@dataclass
class BudgetLedger:
    epsilon: float
    delta: float
    rows: list[BudgetRow] = field(default_factory=list)

    def add(self, component, instance, sensitivity, scale, eps_share, delta_share=None):
        eps_share = Fraction(eps_share)
        self.rows.append(BudgetRow(component, instance, float(sensitivity), float(scale), eps_share,
                                   eps_share if delta_share is None else Fraction(delta_share)))

    def totals(self) -> tuple[Fraction, Fraction]:
        return (sum((r.eps_share for r in self.rows), Fraction(0)),
                sum((r.delta_share for r in self.rows), Fraction(0)))

    def audit(self) -> None:
        """Shares must compose to exactly (epsilon, delta), and every scale must
        respect its sensitivity floor."""
        eps_total, delta_total = self.totals()
        if eps_total != 1 or delta_total != 1:
            raise AssertionError(f"budget shares sum to ({eps_total}, {delta_total}), expected (1, 1)")
        for r in self.rows:
            _check_floor(r.scale, r.sensitivity, self.epsilon * float(r.eps_share))

    def to_rows(self) -> list[list]:
        return [[r.component, r.instance, r.sensitivity, r.scale,
                 [r.eps_share.numerator, r.eps_share.denominator],
                 [r.delta_share.numerator, r.delta_share.denominator]] for r in self.rows]

    @classmethod
    def from_rows(cls, epsilon, delta, rows) -> "BudgetLedger":
        led = cls(epsilon, delta)
        for comp, inst, sens, scale, (en, ed), (dn, dd) in rows:
            led.add(comp, inst, sens, scale, Fraction(en, ed), Fraction(dn, dd))
        return led

    def to_tsv(self) -> str:
        lines = ["component\tinstance\tsensitivity\tscale\teps_share\tdelta_share"]
        for r in self.rows:
            lines.append(f"{r.component}\t{r.instance}\t{r.sensitivity:g}\t{r.scale:.6g}\t"
                         f"{float(r.eps_share) * self.epsilon:.6g}\t{float(r.delta_share) * self.delta:.6g}")
        eps_total, delta_total = self.totals()
        lines.append(f"total\t-\t-\t-\t{float(eps_total) * self.epsilon:.6g}\t{float(delta_total) * self.delta:.6g}")
        return "\n".join(lines)


@dataclass
class HistogramAudit:
    epsilon: float
    edges: np.ndarray
    counts_a: np.ndarray
    counts_b: np.ndarray
    ratios: np.ndarray
    bounds: np.ndarray
    checked: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.ratios[self.checked] <= self.bounds[self.checked]))

    @property
    def worst(self) -> float:
        if not self.checked.any():
            return 0.0
        return float(np.max(self.ratios[self.checked] / self.bounds[self.checked]))


def histogram_audit(samples_a, samples_b, epsilon: float, bins: int = 50,
                    min_count: int = 100) -> HistogramAudit:
    """Two-run histogram ratio test for epsilon-indistinguishability.

    A bin is checked when both runs put at least ``min_count`` samples in it;
    the allowed ratio is e^epsilon * (1 + 3 / sqrt(count)).
    """
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    edges = np.linspace(lo, hi, bins + 1)
    ca, _ = np.histogram(a, edges)
    cb, _ = np.histogram(b, edges)
    low = np.minimum(ca, cb)
    checked = low >= min_count
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(checked, np.maximum(ca, cb) / np.maximum(low, 1), 0.0)
        bounds = math.exp(epsilon) * (1 + 3 * np.sqrt(1 / np.maximum(low, 1)))
    return HistogramAudit(epsilon, edges, ca, cb, ratios, bounds, checked)


def scalar_release_audit(epsilon: float = 1.0, sensitivity: float = 2.0, scale: float | None = None,
                         runs: int = 10_000, seed: int = 0, value: float = 100.0) -> HistogramAudit:
    """Audit a noisy count against its neighbour shifted by the full sensitivity."""
    if scale is None:
        scale = 8.0 / epsilon
    src_a = LaplaceNoise.keyed(scale, seed, 0, "audit", 0)
    src_b = LaplaceNoise.keyed(scale, seed, 0, "audit", 1)
    a = value + src_a.sample(runs)
    b = value + sensitivity + src_b.sample(runs)
    return histogram_audit(a, b, epsilon)
