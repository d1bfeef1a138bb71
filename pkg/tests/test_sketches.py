"""Tower verification, point evaluation, inversion, composition, distance."""

from dataclasses import replace
from fractions import Fraction

import pytest

from cantorgood.errors import (
    IncompatibleSketches,
    LevelUnavailable,
    NeedMorePrecision,
    NotInvertible,
)
from cantorgood.closed import (
    Correspondence,
    MirroredTree,
    SingletonTree,
    UnionTree,
    carve_nowhere_dense,
)
from cantorgood.sketches import (
    HomeoSketch,
    SketchLevel,
    Tracked,
    TransportedTree,
    compose_sketches,
    distance_bound,
    eval_point,
    identity_sketch,
    invert_sketch,
    mirror_sketch,
    root_swap_sketch,
    sketches_equal,
    verify_sketch,
)
from cantorgood.space import clopen, whole_space, word

F = Fraction


def sample_words(m, count, depth):
    """Deterministic test words: digit expansions of 0..count-1."""
    out = []
    for k in range(count):
        digits = []
        v = k
        w = ()
        for _ in range(depth):
            a = m.arity(w)
            digits.append(v % a)
            v //= a
            w = tuple(digits)
        out.append(tuple(digits))
    return out


def corrupt(sketch, n, **changes):
    levels = list(sketch.levels)
    levels[n - 1] = replace(levels[n - 1], **changes)
    return replace(sketch, levels=tuple(levels))


# -- verify ---------------------------------------------------------------------


def test_identity_sketch_verifies(u2):
    report = verify_sketch(identity_sketch(u2, 3))
    assert report.passed
    assert report.failures == ()


def test_root_swap_verifies(u2):
    assert verify_sketch(root_swap_sketch(u2, 3)).passed


def test_violation_mesh_detected(u2):
    s = identity_sketch(u2, 3)
    lvl = s.level(2)
    # replace one element with a shallow clopen set: prefix too short
    source = list(lvl.source)
    source[0] = clopen(u2, ["000", "110"])
    bad = corrupt(s, 2, source=tuple(source))
    report = verify_sketch(bad)
    assert not report.passed
    assert "1n" in report.conditions_hit()


def test_violation_nesting_detected(u2):
    s = identity_sketch(u2, 2)
    lvl = s.level(2)
    parents = list(lvl.parent_src)
    parents[0], parents[-1] = parents[-1], parents[0]
    bad = corrupt(s, 2, parent_src=tuple(parents))
    report = verify_sketch(bad)
    assert not report.passed
    assert "2n" in report.conditions_hit()


def test_violation_coherence_detected(u2):
    s = identity_sketch(u2, 2)
    lvl = s.level(2)
    # remap parents consistently for nesting but break the pairing square
    parents = list(lvl.parent_tgt)
    parents[0] = 1 - parents[0]
    bad = corrupt(s, 2, parent_tgt=tuple(parents))
    report = verify_sketch(bad)
    assert not report.passed
    hits = report.conditions_hit()
    assert "3n" in hits or "2n" in hits


def test_violation_measure_detected(u2):
    # a quarter cell paired with an eighth cell
    s = identity_sketch(u2, 2)
    lvl = s.level(1)
    target = list(lvl.target)
    target[0] = clopen(u2, ["000"])
    bad = corrupt(s, 1, target=tuple(target))
    report = verify_sketch(bad)
    assert not report.passed
    assert "4n" in report.conditions_hit()


def test_violation_partition_detected(u2):
    s = identity_sketch(u2, 2)
    lvl = s.level(2)
    source = list(lvl.source)
    source[1] = source[0]
    bad = corrupt(s, 2, source=tuple(source))
    report = verify_sketch(bad)
    assert not report.passed
    assert "part" in report.conditions_hit()


def test_violation_correspondence_detected(u2):
    two = UnionTree([SingletonTree(u2, (0,)), SingletonTree(u2, (1,))])
    corr = Correspondence(
        two, two, {1: {word("0"): word("1"), word("1"): word("0")}}
    )
    # the identity tower cannot carry the branch-swapping correspondence
    bad = replace(identity_sketch(u2, 3), corr=corr)
    report = verify_sketch(bad)
    assert not report.passed
    assert report.conditions_hit() == ["5n"]
    # the digit-mirror tower can: it sends each branch onto the other
    good = replace(mirror_sketch(u2, 3), corr=corr)
    assert verify_sketch(good).passed


def test_failure_ordering_deterministic(u2):
    s = identity_sketch(u2, 3)
    lvl = s.level(2)
    target = list(lvl.target)
    target[0] = clopen(u2, ["000"])
    source = list(lvl.source)
    source[1] = source[2]
    bad = corrupt(s, 2, source=tuple(source), target=tuple(target))
    report = verify_sketch(bad)
    keys = [(f.level, f.condition, f.element) for f in report.failures]
    assert keys == sorted(keys)


# -- embedding-kind conditions ------------------------------------------------------


def embedding_fixture(u2, half_u2):
    """One-level hand-built embedding of the half-mass space into u2."""
    lam = u2
    # everything but one depth-6 cell: mass 63/64 inside (1/2, 1)
    base = clopen(lam, ["0", "10", "110", "1110", "11110", "111110"])
    lvl1 = SketchLevel(
        index=1,
        source=(clopen(half_u2, ["00"]), clopen(half_u2, ["01"]),
                clopen(half_u2, ["10"]), clopen(half_u2, ["11"])),
        # source cells weigh 8/64 each; images of 9/64 sit in (8/64, 12/64)
        target=(clopen(lam, ["000", "001000"]), clopen(lam, ["010", "011000"]),
                clopen(lam, ["100", "101000"]), clopen(lam, ["110", "111000"])),
        xi=(0, 1, 2, 3),
        parent_src=(0, 0, 0, 0),
        parent_tgt=(0, 0, 0, 0),
    )
    return HomeoSketch(
        kind="embedding",
        source_measure=half_u2,
        target_measure=lam,
        levels=(lvl1,),
        base_target=base,
    )


def test_embedding_band_passes(u2, half_u2):
    s = embedding_fixture(u2, half_u2)
    report = verify_sketch(s)
    assert report.passed, report.failures


def test_embedding_band_violation_detected(u2, half_u2):
    s = embedding_fixture(u2, half_u2)
    lvl = s.level(1)
    target = list(lvl.target)
    target[0] = clopen(u2, ["000", "0010"])  # mass 12/64, band is open
    bad = corrupt(s, 1, target=tuple(target))
    report = verify_sketch(bad)
    assert not report.passed
    assert "4n" in report.conditions_hit()


def test_embedding_base_band_detected(u2, half_u2):
    s = embedding_fixture(u2, half_u2)
    bad = replace(s, base_target=whole_space(u2))  # mass 1 not < 2*(1/2)
    report = verify_sketch(bad)
    assert any(f.level == 0 and f.condition == "4n" for f in report.failures)


def test_tracking_conditions_detected(u2, half_u2):
    s = embedding_fixture(u2, half_u2)
    a_seq = (SingletonTree(half_u2, (0,)), SingletonTree(half_u2, (0,)))
    b_seq = (
        carve_nowhere_dense(u2, whole_space(u2), F(1, 2)),
        carve_nowhere_dense(u2, whole_space(u2), F(1, 4)),
    )
    # ks/ms fail to increase and the b-mass inside images is too small
    bad = replace(s, tracked=Tracked(a_seq=a_seq, b_seq=b_seq, ks=(0, 0), ms=(0, 0)))
    report = verify_sketch(bad)
    hits = report.conditions_hit()
    assert "9n" in hits
    assert "7n" in hits or "8n" in hits


# -- eval -------------------------------------------------------------------------


def test_eval_identity(u2):
    s = identity_sketch(u2, 3)
    assert eval_point(s, word("0101")) == word("0101")


def test_eval_root_swap(u2):
    s = root_swap_sketch(u2, 1)
    assert eval_point(s, word("01")) == word("11")


def test_eval_needs_precision(u2):
    s = identity_sketch(u2, 3)
    with pytest.raises(NeedMorePrecision):
        eval_point(s, word("01"))


def test_eval_nesting(u2):
    deep = identity_sketch(u2, 4)
    shallow = HomeoSketch(
        kind="isomorphism",
        source_measure=deep.source_measure,
        target_measure=deep.target_measure,
        levels=deep.levels[:2],
        base_target=deep.base_target,
    )
    for w in sample_words(u2, 20, 5):
        full = eval_point(deep, w)
        partial = eval_point(shallow, w)
        assert full[: len(partial)] == partial


# -- invert / compose ----------------------------------------------------------------


def test_invert_identity(u2):
    s = identity_sketch(u2, 3)
    assert sketches_equal(invert_sketch(s), s)


def test_invert_involution(u2):
    s = root_swap_sketch(u2, 3)
    assert sketches_equal(invert_sketch(invert_sketch(s)), s)
    assert verify_sketch(invert_sketch(s)).passed


def test_invert_rejects_embedding(u2, half_u2):
    s = embedding_fixture(u2, half_u2)
    with pytest.raises(NotInvertible):
        invert_sketch(s)


def test_roundtrip_eval(u2):
    s = root_swap_sketch(u2, 4)
    inv = invert_sketch(s)
    for w in sample_words(u2, 30, 5):
        image = eval_point(s, w)
        back = eval_point(inv, image)
        assert back == w[: len(back)]


def test_compose_with_identity(u2):
    s = root_swap_sketch(u2, 3)
    got = compose_sketches(s, identity_sketch(u2, 3))
    assert verify_sketch(got).passed
    for w in sample_words(u2, 20, 5):
        assert eval_point(got, w) == eval_point(s, w)


def test_compose_with_inverse_evaluates_identity(u2):
    s = root_swap_sketch(u2, 3)
    got = compose_sketches(s, invert_sketch(s))
    assert verify_sketch(got).passed
    for w in sample_words(u2, 20, 6):
        image = eval_point(got, w)
        assert image == w[: len(image)]


def test_compose_root_swap_twice_is_identity(u2):
    s = root_swap_sketch(u2, 3)
    got = compose_sketches(s, s)
    assert verify_sketch(got).passed
    for w in sample_words(u2, 20, 6):
        image = eval_point(got, w)
        assert image == w[: len(image)]


def test_compose_rejects_mismatched_spaces(u2, u3):
    with pytest.raises(IncompatibleSketches):
        compose_sketches(identity_sketch(u2, 2), identity_sketch(u3, 2))


# -- distance bound -------------------------------------------------------------------


def test_distance_identity_to_itself(u2):
    s = identity_sketch(u2, 3)
    assert distance_bound(s, identity_sketch(u2, 3), 2) == 0


def test_distance_identity_to_root_swap(u2):
    a = identity_sketch(u2, 2)
    b = root_swap_sketch(u2, 2)
    assert distance_bound(a, b, 1) == 2


def test_distance_bound_sound_pointwise(u2):
    a = identity_sketch(u2, 3)
    b = root_swap_sketch(u2, 3)
    bound = distance_bound(a, b, 3)
    for w in sample_words(u2, 30, 5):
        pa, pb = eval_point(a, w), eval_point(b, w)
        agree = 0
        for x, y in zip(pa, pb):
            if x != y:
                break
            agree += 1
        assert F(1, 2 ** agree) <= bound


def test_distance_requires_levels(u2):
    with pytest.raises(LevelUnavailable):
        distance_bound(identity_sketch(u2, 2), root_swap_sketch(u2, 2), 3)


# -- transported trees -----------------------------------------------------------------


def test_transport_singleton_under_root_swap(u2):
    tree = SingletonTree(u2, (0,))
    moved = TransportedTree(tree, root_swap_sketch(u2, 4))
    assert moved.is_member(word("1"))
    assert moved.is_member(word("10"))
    assert not moved.is_member(word("0"))
    assert moved.label(()) == 0


def test_transport_carved_tree_preserves_mass(u2):
    tree = carve_nowhere_dense(u2, clopen(u2, ["0"]), F(1, 8))
    moved = TransportedTree(tree, root_swap_sketch(u2, 5))
    assert moved.label(()) == tree.label(())
    assert moved.is_member(word("1"))
    assert not moved.is_member(word("0"))


def test_transport_depth_limit(u2):
    tree = SingletonTree(u2, (0,))
    moved = TransportedTree(tree, root_swap_sketch(u2, 2))
    with pytest.raises(NeedMorePrecision):
        moved.is_member(word("000000"))
