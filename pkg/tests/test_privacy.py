import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpsymnorm.privacy import (
    BudgetLedger,
    LaplaceNoise,
    histogram_audit,
    laplace_sample,
    noise_rng,
    priv_estimate,
    priv_threshold_release,
    priv_top_k_release,
    scalar_release_audit,
)
from dpsymnorm.sketch import CountSketch


def sketch_of(items, n=50, width=500, seed=0):
    cs = CountSketch(n, 7, width, np.random.default_rng(seed))
    cs.update_many(np.asarray(items, dtype=int))
    return cs


def test_transform_median_is_zero():
    assert LaplaceNoise.transform(0.0, 3.0) == 0
    assert abs(LaplaceNoise.transform(1e-12, 1.0)) < 1e-11


def test_transform_matches_quantile_function():
    # quantile of Laplace(0, s) at q > 1/2 is -s ln(2(1-q))
    for q in (0.6, 0.9, 0.99):
        assert LaplaceNoise.transform(q - 0.5, 2.0) == pytest.approx(-2.0 * math.log(2 * (1 - q)))
        assert LaplaceNoise.transform(0.5 - q, 2.0) == pytest.approx(2.0 * math.log(2 * (1 - q)))


def test_sampler_moments():
    x = LaplaceNoise.keyed(1.0, 123, 0, "audit").sample(10**6)
    assert abs(x.mean()) <= 0.01
    assert abs(x.var() - 2) <= 0.05
    assert abs(np.mean(np.abs(x) > math.log(100)) - 0.01) <= 0.003


def test_keyed_sources_are_reproducible_and_distinct():
    a = LaplaceNoise.keyed(1.0, 5, 0, "high").sample(10)
    b = LaplaceNoise.keyed(1.0, 5, 0, "high").sample(10)
    c = LaplaceNoise.keyed(1.0, 5, 1, "high").sample(10)
    d = LaplaceNoise.keyed(1.0, 5, 0, "low").sample(10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_pinned_source_emits_zero():
    src = LaplaceNoise(4.0, pinned=True)
    assert laplace_sample(src) == 0.0
    assert np.all(src.sample(5) == 0)


def test_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        LaplaceNoise(0.0, np.random.default_rng(0))


def test_priv_estimate_pinned_equals_sketch():
    cs = sketch_of([3] * 40 + [4] * 7)
    assert priv_estimate(cs, 3, 2.0, LaplaceNoise(2.0, pinned=True), epsilon=1.0) == cs.estimate(3)


def test_priv_estimate_rejects_small_scale():
    cs = sketch_of([1])
    with pytest.raises(ValueError, match="floor"):
        priv_estimate(cs, 1, 1.0, LaplaceNoise(1.0, pinned=True), epsilon=1.0)


def test_priv_estimate_dominant_coordinate():
    m = 10**5
    cs = sketch_of(np.full(m, 1))
    src = LaplaceNoise.keyed(8.0, 1, 0, "high")
    est = priv_estimate(cs, 1, 8.0, src, epsilon=1.0)
    assert abs(est - m) <= 0.3**2 * m


def test_priv_estimate_neighbour_audit():
    a = sketch_of([2] * 30)
    b = sketch_of([2] * 29 + [5])
    eps = 1.0
    xa = [priv_estimate(a, 2, 2 / eps, LaplaceNoise.keyed(2 / eps, 1, t, "audit"), eps) for t in range(10**4)]
    xb = [priv_estimate(b, 2, 2 / eps, LaplaceNoise.keyed(2 / eps, 2, t, "audit"), eps) for t in range(10**4)]
    assert histogram_audit(xa, xb, eps).passed


def test_threshold_release_empty_stream():
    cs = sketch_of([])
    rep = priv_threshold_release(cs, 0.0, 0.5, 0.1, 4.0, LaplaceNoise.keyed(4.0, 0, 0, "high"))
    assert rep.items == []


def test_threshold_release_dominant_coordinate():
    m = 10**4
    cs = sketch_of(np.full(m, 1))
    rep = priv_threshold_release(cs, float(m), 0.5, 0.1, 4.0, LaplaceNoise.keyed(4.0, 0, 0, "high"))
    assert rep.indices == [1]


def test_threshold_release_planted_heavy():
    # heavy count h with h^2 = 0.36 (h^2 + 1e4) over 1e4 distinct singletons: h = 75
    hits, n = 0, 20000
    for t in range(50):
        rng = np.random.default_rng([7, t])
        singles = rng.choice(np.arange(1, n), size=10**4, replace=False)
        items = np.concatenate([np.zeros(75, dtype=int), singles])
        cs = CountSketch(n, 9, 4000, rng)
        cs.update_many(items)
        rep = priv_threshold_release(cs, 125.0, 0.5, 0.1, 2.0, LaplaceNoise.keyed(2.0, t, 0, "high"), capacity=16)
        est = rep.as_dict().get(0)
        hits += est is not None and abs(est - 75) <= 0.1 * 75 + 3 * 2.0
    assert hits >= 45


def test_top_k_pinned_known_vector():
    cs = sketch_of([0] * 50 + [1] * 40 + [2] * 30 + [3] * 20 + [4] * 10)
    rep = priv_top_k_release(cs, 3, 0.5, 1.0, LaplaceNoise(4.0, pinned=True))
    assert rep.indices == [0, 1, 2]


def test_top_k_single_dominant():
    cs = sketch_of(np.full(1000, 1))
    rep = priv_top_k_release(cs, 1, 0.5, 1.0, LaplaceNoise.keyed(4.0, 0, 0, "partition"))
    assert rep.indices == [1]


def test_top_k_rejects_capacity():
    cs = sketch_of([1])
    with pytest.raises(ValueError, match="capacity"):
        priv_top_k_release(cs, 5, 0.5, 1.0, LaplaceNoise(4.0, pinned=True))
    with pytest.raises(ValueError, match="scale"):
        priv_top_k_release(cs, 2, 0.5, 1.0, LaplaceNoise(1.0, pinned=True))


def test_top_k_ties_split_evenly():
    cs = sketch_of([0] * 20 + [1] * 20)
    firsts = 0
    for t in range(1000):
        rep = priv_top_k_release(cs, 1, 0.5, 1.0, LaplaceNoise.keyed(4.0, t, 0, "partition"),
                                 candidates=np.array([0, 1]))
        firsts += rep.indices == [0]
    assert abs(firsts / 1000 - 0.5) <= 0.05


def test_ledger_audit():
    led = BudgetLedger(1.0, 1e-6)
    for c in ("partition", "high", "medium", "low"):
        led.add(c, 0, 2.0, 8.0, Fraction(1, 4))
    led.audit()
    assert led.totals() == (1, 1)
    assert led.to_tsv().splitlines()[-1].split("\t")[-2:] == ["1", "1e-06"]
    short = BudgetLedger(1.0, 1e-6)
    short.add("high", 0, 2.0, 8.0, Fraction(1, 2))
    with pytest.raises(AssertionError):
        short.audit()
    weak = BudgetLedger(1.0, 1e-6)
    weak.add("high", 0, 2.0, 1.0, Fraction(1))
    with pytest.raises(ValueError):
        weak.audit()


def test_ledger_rows_roundtrip():
    led = BudgetLedger(2.0, 1e-5)
    led.add("low", 3, 4.0, 16.0, Fraction(1, 3), Fraction(2, 3))
    assert BudgetLedger.from_rows(2.0, 1e-5, led.to_rows()).rows == led.rows


def test_scalar_audit_passes():
    audit = scalar_release_audit(1.0, 2.0, 8.0, 10**4, seed=3)
    assert audit.passed and audit.checked.sum() > 5


def test_histogram_audit_catches_leak():
    rng = np.random.default_rng(0)
    a = rng.laplace(0, 0.5, 10**4)
    b = rng.laplace(1.5, 0.5, 10**4)
    assert not histogram_audit(a, b, 1.0).passed


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**40), inst=st.integers(0, 100), sub=st.integers(0, 1000))
def test_noise_rng_deterministic(seed, inst, sub):
    a = noise_rng(seed, inst, "medium", sub).integers(0, 2**60, 3)
    b = noise_rng(seed, inst, "medium", sub).integers(0, 2**60, 3)
    assert np.array_equal(a, b)
