"""Subset-sum oracle, exact value realization, and goodness sweeps."""

import itertools
from fractions import Fraction

import pytest

from cantorgood.errors import BudgetExceeded, MeasureMismatch, ValueNotRealizable
from cantorgood.goodness import (
    check_goodness,
    format_counterexample,
    realize_value_in,
    subset_sum_oracle,
)
from cantorgood.space import (
    clopen,
    clopen_measure,
    clopen_subset,
    clopen_values,
    leaves_at,
    whole_space,
    word,
)

F = Fraction


def brute_force_first_subset(weights, target):
    """Independent oracle: enumerate subsets by size then index order."""
    for r in range(len(weights) + 1):
        for combo in itertools.combinations(range(len(weights)), r):
            if sum((weights[i] for i in combo), F(0)) == target:
                return combo
    return None


# -- subset_sum_oracle ---------------------------------------------------------


def test_oracle_b13_example():
    weights = [F(1, 9), F(2, 9), F(2, 9), F(4, 9)]
    expected = brute_force_first_subset(weights, F(5, 9))
    assert expected == (0, 3)
    assert subset_sum_oracle(weights, F(5, 9)) == (0, 3)


def test_oracle_zero_target():
    assert subset_sum_oracle([F(1, 4), F(1, 2)], F(0)) == ()


def test_oracle_unreachable():
    assert subset_sum_oracle([F(1, 4), F(1, 4)], F(1, 3)) is None


def test_oracle_matches_brute_force_on_mixed_weights():
    weights = [F(1, 8), F(1, 8), F(1, 18), F(1, 9), F(1, 9), F(2, 9), F(1, 4)]
    targets = sorted(
        {
            sum((weights[i] for i in combo), F(0))
            for r in range(4)
            for combo in itertools.combinations(range(len(weights)), r)
        }
    )
    for t in targets:
        assert subset_sum_oracle(weights, t) == brute_force_first_subset(weights, t)
    assert subset_sum_oracle(weights, F(1, 100)) is None


def test_oracle_budget():
    weights = [F(1, 2 ** k) for k in range(2, 22)]
    target = sum(weights[2:], F(0))
    with pytest.raises(BudgetExceeded):
        subset_sum_oracle(weights, target, budget=50)


def test_oracle_handles_many_weights(u3):
    # 81 leaves; the sweep stays polynomial because sums deduplicate
    leaves = u3.words_at(4)
    weights = [u3.weight(w) for w in leaves]
    got = subset_sum_oracle(weights, F(5, 81))
    assert got is not None
    assert sum((weights[i] for i in got), F(0)) == F(5, 81)


# -- realize_value_in ------------------------------------------------------------


def test_realize_three_eighths(u2):
    got = realize_value_in(u2, whole_space(u2), F(3, 8), depth_cap=5)
    assert got.words == (word("00"), word("010"))
    # confirmed against the independent oracle at depth 3
    leaves = leaves_at(u2, whole_space(u2), 3)
    weights = [u2.weight(w) for w in leaves]
    assert subset_sum_oracle(weights, F(3, 8)) is not None


def test_realize_full_value_returns_region(u2):
    v = whole_space(u2)
    assert realize_value_in(u2, v, F(1)) == v


def test_realize_zero(u2):
    assert realize_value_in(u2, whole_space(u2), F(0)).is_empty()


def test_realize_inside_subregion(b13):
    region = clopen(b13, ["1"])
    got = realize_value_in(b13, region, F(2, 9), depth_cap=4)
    assert clopen_measure(b13, got) == F(2, 9)
    assert clopen_subset(got, region)


def test_realize_unrealizable_in_mix(mix):
    region = clopen(mix, ["1"])
    with pytest.raises(ValueNotRealizable):
        realize_value_in(mix, region, F(1, 8), depth_cap=8)


def test_realize_rejects_bad_alpha(u2):
    with pytest.raises(MeasureMismatch):
        realize_value_in(u2, clopen(u2, ["0"]), F(3, 4))
    with pytest.raises(MeasureMismatch):
        realize_value_in(u2, clopen(u2, ["0"]), F(-1, 4))


def test_realize_soundness_sweep(u2, b13):
    for m in (u2, b13):
        region = clopen(m, ["0"])
        total = clopen_measure(m, region)
        for alpha in clopen_values(m, 3):
            if alpha > total:
                continue
            got = realize_value_in(m, region, alpha, depth_cap=6)
            assert clopen_measure(m, got) == alpha
            assert clopen_subset(got, region)


# -- check_goodness ----------------------------------------------------------------


def test_goodness_u2_passes(u2):
    report = check_goodness(u2, depth=5, depth_cap=8)
    assert report.passed
    assert report.checked_depth == 5


def test_goodness_mix_fails_with_pinned_counterexample(mix):
    report = check_goodness(mix, depth=3, depth_cap=8)
    assert not report.passed
    alpha, cyl = report.counterexample
    assert alpha == F(1, 8)
    assert cyl.words == (word("1"),)
    assert alpha < clopen_measure(mix, cyl)
    assert alpha in clopen_values(mix, 3)
    assert format_counterexample(report) == "alpha=1/8 V=1"
    # reconfirm with the independent oracle on the deepest affordable leaves
    leaves = leaves_at(mix, cyl, 5)
    weights = [mix.weight(w) for w in leaves]
    assert subset_sum_oracle(weights, alpha) is None


def test_goodness_b13_fails_by_parity(b13):
    # every cylinder below "1" carries a factor 2/3, so all clopen values
    # inside "1" have even numerator over 3**d and 1/9 is unreachable
    report = check_goodness(b13, depth=2, depth_cap=6)
    assert not report.passed
    alpha, cyl = report.counterexample
    assert (alpha, cyl.words) == (F(1, 9), (word("1"),))
    leaves = leaves_at(b13, cyl, 6)
    weights = [b13.weight(w) for w in leaves]
    assert subset_sum_oracle(weights, alpha) is None


def test_goodness_monotone_in_caps(u2, mix, b13):
    # pass at (d, c) implies pass at (d-1, c) and (d, c+1)
    assert check_goodness(u2, 4, 8).passed
    assert check_goodness(u2, 3, 8).passed
    assert check_goodness(u2, 4, 9).passed
    assert check_goodness(b13, 0, 6).passed
    assert not check_goodness(b13, 1, 6).passed
    assert not check_goodness(b13, 2, 6).passed
    assert not check_goodness(mix, 3, 8).passed
    assert not check_goodness(mix, 3, 9).passed


def test_goodness_agreement_with_oracle(u2, b13):
    # realize succeeds exactly when the oracle finds a subset of the
    # depth-cap leaf decomposition
    cap = 4
    for m in (u2, b13):
        values = clopen_values(m, 3)
        for v in m.words_at(1) + m.words_at(2):
            cyl = clopen(m, [v])
            mass = m.weight(v)
            leaves = leaves_at(m, cyl, cap)
            weights = [m.weight(w) for w in leaves]
            for alpha in values:
                if alpha > mass:
                    continue
                oracle_hit = subset_sum_oracle(weights, alpha) is not None
                try:
                    realize_value_in(m, cyl, alpha, depth_cap=cap)
                    realized = True
                except ValueNotRealizable:
                    realized = False
                assert realized == oracle_hit
