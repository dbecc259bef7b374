import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpsymnorm.levels import (
    CaseThresholds,
    LevelVector,
    detect_case,
    is_contributing,
    is_important,
    level_of,
    levels_of,
    prune_non_contributing,
)
from dpsymnorm.norms import NormSpec


def test_boundary_is_half_open():
    gamma, xi = 0.75, 1.5
    assert level_of(gamma * xi**3, xi, gamma) == 4


def test_hand_computed_level():
    assert level_of(5, 2.0, 1.0) == 3


def test_small_values_go_to_level_zero():
    assert level_of(0.3, 2.0, 0.9) == 0


def test_rejects_nonpositive():
    with pytest.raises(ValueError):
        level_of(0.0, 2.0)


@settings(max_examples=200, deadline=None)
@given(v=st.floats(1e-3, 1e12), gamma=st.floats(0.5001, 1.0))
def test_scaling_by_base_adds_one_level(v, gamma):
    # base 2 keeps the multiplication exact
    i = level_of(v, 2.0, gamma)
    if i > 0:
        assert level_of(v * 2.0, 2.0, gamma) == i + 1


@settings(max_examples=200, deadline=None)
@given(v=st.floats(1e-3, 1e12), xi=st.floats(1.01, 4.0), gamma=st.floats(0.5001, 1.0))
def test_level_window_contains_value(v, xi, gamma):
    i = level_of(v, xi, gamma)
    assert v < gamma * xi**i
    if i > 0:
        assert gamma * xi ** (i - 1) <= v


@settings(max_examples=100, deadline=None)
@given(vals=st.lists(st.floats(1e-3, 1e9), min_size=1, max_size=50),
       xi=st.floats(1.01, 4.0), gamma=st.floats(0.5001, 1.0))
def test_vectorised_levels_match_scalar(vals, xi, gamma):
    assert levels_of(vals, xi, gamma).tolist() == [level_of(v, xi, gamma) for v in vals]


@settings(max_examples=100, deadline=None)
@given(vals=st.lists(st.integers(0, 10**6), max_size=80), xi=st.floats(1.05, 3.0))
def test_levels_partition_positive_values(vals, xi):
    V = LevelVector.from_values(vals, xi, 0.8)
    assert V.total == sum(1 for v in vals if v > 0)


def test_single_level_important():
    V = LevelVector(2.0, 1.0, ((4, 7.0),))
    for beta in (0.01, 0.5, 1.0):
        assert is_important(V, 4, beta)


def test_empty_level_not_important():
    V = LevelVector(2.0, 1.0, ((4, 7.0),))
    assert not is_important(V, 2, 0.1)


def test_importance_hand_example():
    V = LevelVector(2.0, 1.0, ((1, 100.0), (5, 1.0)))
    assert is_important(V, 5, 0.1)
    assert is_important(V, 1, 0.1)
    # level 1 fails once beta makes 100 <= beta * 1
    assert not is_important(V, 1, 100.0)


def test_contributing_examples():
    L1 = NormSpec("lp", 1)
    V = LevelVector(2.0, 1.0, ((0, 99.0), (7, 1.0)))
    assert is_contributing(L1, V, 7, 0.5)
    assert not is_contributing(L1, V, 0, 0.5)
    assert not is_contributing(L1, V, 3, 0.1)
    single = LevelVector(2.0, 1.0, ((3, 5.0),))
    assert is_contributing(L1, single, 3, 1.0)


def test_prune_keeps_contributing_levels():
    L2 = NormSpec("lp", 2)
    V = LevelVector(2.0, 1.0, ((2, 3.0), (3, 2.0)))
    assert prune_non_contributing(L2, V, 0.1) == V


def test_prune_drops_negligible_level_for_top1():
    top1 = NormSpec("topk", 1)
    V = LevelVector(2.0, 1.0, ((0, 2.0), (10, 1.0)))
    P = prune_non_contributing(top1, V, 0.5)
    assert P.levels == [10]
    assert top1.on_levels(P) == top1.on_levels(V)


def test_prune_error_bound_random():
    rng = np.random.default_rng(0)
    L2 = NormSpec("lp", 2)
    alpha, m, M = 0.3, 10**6, math.log2(10**4)
    beta = alpha**5 / (M**2 * math.log2(m) ** 5)
    for _ in range(100):
        k = int(rng.integers(1, 25))
        idx = np.sort(rng.choice(60, k, replace=False))
        V = LevelVector(1.3, 1.0, tuple((int(i), float(rng.integers(1, 10**4))) for i in idx))
        P = prune_non_contributing(L2, V, beta)
        full = L2.on_levels(V)
        assert (1 - alpha) * full <= L2.on_levels(P) <= full * (1 + 1e-12)
        assert all(V.size(i) == b for i, b in P.entries)


TH = CaseThresholds(t2=100.0, tau_high=0.01, tau_win=0.001, s=10)


def test_case_high_when_weight_squares_to_f2():
    V = LevelVector(2.0, 1.0, ())
    assert detect_case(10, V, (2.0**10) ** 2, TH) == ("high", 0)


def test_case_witness_window():
    V = LevelVector(2.0, 1.0, ())
    f2 = 2.0**40
    # weight 2^12 -> weight^2 = 2^24, tau_win * f2 ~ 2^30.03 -> needs j = 7
    assert detect_case(12, V, f2, TH) == ("medium", 7)
    # weight 2^4 <= t2 -> low, window j clamps at s
    assert detect_case(4, V, f2, TH) == ("low", 10)


def test_case_all_low_for_tiny_epsilon():
    th = CaseThresholds(t2=1e30, tau_high=1e-6, tau_win=1e-6, s=5)
    V = LevelVector(1.5, 0.9, ())
    assert {detect_case(i, V, 1e10, th)[0] for i in range(60)} == {"low"}


def test_case_requires_positive_f2():
    with pytest.raises(ValueError):
        detect_case(1, LevelVector(2.0, 1.0, ()), 0.0, TH)


def test_level_vector_validation():
    with pytest.raises(ValueError):
        LevelVector(1.0, 1.0, ())
    with pytest.raises(ValueError):
        LevelVector(2.0, 0.4, ())
    with pytest.raises(ValueError):
        LevelVector(2.0, 1.0, ((3, 1.0), (3, 2.0)))
    V = LevelVector.from_sizes(2.0, 1.0, {5: -3.0, 2: 4.0})
    assert V.entries == ((2, 4.0),)
