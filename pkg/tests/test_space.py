"""Core space model: canonical clopen sets, exact measures, clopen values."""

import itertools
from fractions import Fraction

import pytest

from cantorgood.errors import (
    ContextMismatch,
    DepthTooLarge,
    EmptySet,
    InvalidWord,
    InvariantViolation,
)
from cantorgood.space import (
    CycleRule,
    MeasureTree,
    TableRule,
    UniformRule,
    clopen,
    clopen_algebra,
    clopen_complement,
    clopen_difference,
    clopen_intersect,
    clopen_measure,
    clopen_subset,
    clopen_union,
    clopen_values,
    diameter,
    empty_set,
    leaves_at,
    uniform_space,
    whole_space,
    word,
)

F = Fraction


def brute_force_values(m, depth):
    """Independent oracle: enumerate every subset of depth-d leaves."""
    leaves = m.words_at(depth)
    weights = [m.weight(w) for w in leaves]
    sums = set()
    for r in range(len(weights) + 1):
        for combo in itertools.combinations(weights, r):
            sums.add(sum(combo, F(0)))
    return sorted(sums)


# -- construction and validation ------------------------------------------------


def test_rejects_nonsumming_ratios():
    with pytest.raises(InvariantViolation):
        MeasureTree(1, CycleRule([(F(1, 3), F(1, 3))]), F(1, 2))


def test_rejects_ratio_above_bound():
    with pytest.raises(InvariantViolation):
        MeasureTree(1, CycleRule([(F(1, 4), F(3, 4))]), F(1, 2))


def test_rejects_short_vectors():
    with pytest.raises(InvariantViolation):
        MeasureTree(1, TableRule(default=(F(1),)), F(1, 2))


def test_contexts_match_across_different_masses(u2, half_u2):
    assert u2.same_context(half_u2)


def test_invalid_word_rejected(u2):
    with pytest.raises(InvalidWord):
        clopen(u2, ["02"])


# -- canonicalize -----------------------------------------------------------------


def test_canonicalize_merges_full_family(u2):
    assert clopen(u2, ["00", "01"]).words == (word("0"),)


def test_canonicalize_absorbs_nested(u2):
    assert clopen(u2, ["0", "01"]).words == (word("0"),)


def test_canonicalize_partial_merge(u2):
    assert clopen(u2, ["00", "10", "11"]).words == (word("00"), word("1"))


def test_canonicalize_idempotent(u2):
    c = clopen(u2, ["00", "10", "11"])
    assert clopen(u2, c.words).words == c.words


def test_canonicalize_merges_recursively(u2):
    assert clopen(u2, ["00", "01", "10", "11"]).words == ((),)


# -- measure ------------------------------------------------------------------------


def test_measure_single_cylinder(u2):
    assert clopen_measure(u2, clopen(u2, ["010"])) == F(1, 8)


def test_measure_biased(b13):
    assert clopen_measure(b13, clopen(b13, ["01"])) == F(2, 9)


def test_measure_union(u2):
    assert clopen_measure(u2, clopen(u2, ["00", "010"])) == F(3, 8)


def test_measure_whole_space_is_root_mass(half_u2):
    assert clopen_measure(half_u2, whole_space(half_u2)) == F(1, 2)


def test_measure_invariant_under_decomposition(u2):
    c = clopen(u2, ["0"])
    pieces = leaves_at(u2, c, 4)
    assert sum(u2.weight(w) for w in pieces) == clopen_measure(u2, c)


# -- algebra -------------------------------------------------------------------------


def test_union_merges(u2):
    got = clopen_union(clopen(u2, ["00"]), clopen(u2, ["01"]))
    assert got.words == (word("0"),)


def test_complement_binary(u2):
    assert clopen_complement(clopen(u2, ["0"])).words == (word("1"),)


def test_subset_nested(u2):
    assert clopen_subset(clopen(u2, ["010"]), clopen(u2, ["01"]))
    assert not clopen_subset(clopen(u2, ["01"]), clopen(u2, ["010"]))


def test_difference(u2):
    got = clopen_difference(clopen(u2, ["0"]), clopen(u2, ["01"]))
    assert got.words == (word("00"),)


def test_algebra_dispatcher(u2):
    assert clopen_algebra("union", clopen(u2, ["00"]), clopen(u2, ["01"])).words == (word("0"),)
    assert clopen_algebra("subset?", clopen(u2, ["010"]), clopen(u2, ["01"])) is True
    assert clopen_algebra("complement", clopen(u2, ["0"])).words == (word("1"),)


def test_context_mismatch_raises(u2, u3):
    with pytest.raises(ContextMismatch):
        clopen_union(clopen(u2, ["0"]), clopen(u3, ["0"]))


def test_modularity_on_generated_corpus(u2, b13):
    # mu(C1 u C2) + mu(C1 n C2) == mu(C1) + mu(C2), exactly
    for m in (u2, b13):
        corpus = []
        words4 = m.words_at(3)
        for i in range(0, len(words4), 3):
            corpus.append(clopen(m, words4[i : i + 2]))
        corpus.append(whole_space(m))
        corpus.append(empty_set(m))
        for c1, c2 in itertools.combinations(corpus, 2):
            lhs = clopen_measure(m, clopen_union(c1, c2)) + clopen_measure(
                m, clopen_intersect(c1, c2)
            )
            rhs = clopen_measure(m, c1) + clopen_measure(m, c2)
            assert lhs == rhs


# -- clopen values ---------------------------------------------------------------------


def test_values_u2_depth2(u2):
    assert clopen_values(u2, 2) == [F(0), F(1, 4), F(1, 2), F(3, 4), F(1)]


def test_values_b13_depth2_matches_brute_force(b13):
    got = clopen_values(b13, 2)
    assert got == brute_force_values(b13, 2)
    assert got == [F(k, 9) for k in range(10)]


def test_values_depth0(u2, b13, half_u2):
    for m in (u2, b13, half_u2):
        assert clopen_values(m, 0) == [F(0), m.root_mass]


def test_values_monotone_refinement(u2, b13, mix):
    for m in (u2, b13, mix):
        for d in range(3):
            assert set(clopen_values(m, d)) <= set(clopen_values(m, d + 1))


def test_values_complement_symmetry(b13, mix):
    for m in (b13, mix):
        values = clopen_values(m, 3)
        for a in values:
            assert m.root_mass - a in values


def test_values_budget(u2):
    with pytest.raises(DepthTooLarge):
        clopen_values(u2, 6, leaf_budget=10)


def test_continuity_bound(b13, mix):
    # max node weight at depth n <= root_mass * ratio_bound**n
    for m in (b13, mix):
        for n in range(21):
            cap = m.root_mass * m.ratio_bound ** n
            # sample the lexicographically extreme addresses plus a mixed one
            for w in [(0,) * n, (1,) * n]:
                assert m.weight(w) <= cap


def test_continuity_bound_all_nodes_small_depth(mix):
    for n in range(7):
        cap = mix.root_mass * mix.ratio_bound ** n
        assert max(mix.weight(w) for w in mix.words_at(n)) <= cap


# -- diameter -------------------------------------------------------------------------


def test_diameter_single_cylinder(u2):
    assert diameter(clopen(u2, ["010"])) == F(1, 8)


def test_diameter_canonicalizes_first(u2):
    assert diameter(clopen(u2, ["00", "01"])) == F(1, 2)


def test_diameter_disjoint_tops(u2):
    assert diameter(clopen(u2, ["00", "11"])) == F(1)


def test_diameter_empty(u2):
    with pytest.raises(EmptySet):
        diameter(empty_set(u2))
