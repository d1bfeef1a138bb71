"""Constructive engines emitting self-verified homeomorphism sketches.

Each public operation runs one of the alternating refinement inductions:
matching partition towers level by level, with every choice made by a
fixed deterministic rule (lexicographic-first subsets, least admissible
values, first admissible depths), so identical inputs rebuild identical
sketches.  Every output is passed through the tower verifier before it
is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

from .errors import (
    ClopenValuesMismatch,
    DepthCapExceeded,
    FullMeasureRequired,
    InsufficientExhaustion,
    MeasureMismatch,
    MeasureTooLarge,
    NotContained,
    NotNowhereDense,
    PositiveMeasureRequired,
    ValueNotRealizable,
)
from .goodness import (
    DEFAULT_ORACLE_BUDGET,
    check_goodness,
    realize_value_in,
)
from .closed import (
    ClosedTree,
    Correspondence,
    PrunedTree,
    RestrictedTree,
    UnionTree,
    members_in,
    prune_to_support,
    restrict_label,
    restrict_tree,
)
from .sketches import (
    HomeoSketch,
    SketchLevel,
    Tracked,
    TransportedTree,
    compose_sketches,
    distance_bound,
    identity_sketch,
    invert_sketch,
    verify_sketch,
)
from .space import (
    ClopenSet,
    MeasureTree,
    ZERO,
    clopen,
    clopen_difference,
    clopen_intersect,
    clopen_measure,
    clopen_subset,
    clopen_union,
    common_prefix_length,
    format_fraction,
    is_prefix,
    leaves_at,
    whole_space,
)


@dataclass(frozen=True)
class StagePlan:
    """Resolution schedule for a construction."""

    levels: int = 4
    depth_cap: int = 12
    epsilon: Optional[Fraction] = None
    level_depths: Optional[tuple] = None

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("plan needs at least one level")
        if self.depth_cap < self.levels + 1:
            raise ValueError("depth_cap must exceed the level count")

    def min_depth(self, n: int) -> int:
        if self.level_depths and n <= len(self.level_depths):
            return max(n + 1, self.level_depths[n - 1])
        return n + 1


def _verified(sketch: HomeoSketch) -> HomeoSketch:
    report = verify_sketch(sketch)
    assert report.passed, f"construction violated its own tower: {report.failures[:3]}"
    return sketch


def _maxlen(c: ClopenSet) -> int:
    return max((len(w) for w in c.words), default=0)


def _assemble(kind, m_src, m_tgt, per_level_pairs, base_target=None, **extra):
    """Pack per-level (source, target, parent) pair lists into a sketch."""
    levels = []
    for n, pairs in enumerate(per_level_pairs, start=1):
        levels.append(
            SketchLevel(
                index=n,
                source=tuple(p[0] for p in pairs),
                target=tuple(p[1] for p in pairs),
                xi=tuple(range(len(pairs))),
                parent_src=tuple(p[2] for p in pairs),
                parent_tgt=tuple(p[2] for p in pairs),
            )
        )
    return HomeoSketch(
        kind=kind,
        source_measure=m_src,
        target_measure=m_tgt,
        levels=tuple(levels),
        base_target=base_target if base_target is not None else whole_space(m_tgt),
        **extra,
    )


# ---------------------------------------------------------------------------
# exact measure matching of clopen pairs


def _measure_matched_pairs(mx, my, s, t, level, depth_cap, budget):
    """Refine clopen s <-> t (equal masses) into exactly measure-matched
    sub-pairs whose words share prefixes of length >= level+1 on both
    sides.  Splits one depth at a time, peeling target mass for source
    cylinders first, then source mass for target cylinders."""
    out = []

    def split_coarser(m, c):
        """One refinement round: group the words under their ancestors one
        level below the common prefix, splitting a lone shallow cylinder
        into its children."""
        if len(c.words) == 1:
            w = c.words[0]
            if len(w) + 1 > depth_cap:
                raise DepthCapExceeded(
                    f"refinement past depth {depth_cap}"
                )
            return [clopen(m, [w + (i,)]) for i in range(m.arity(w))]
        g = common_prefix_length(c) + 1
        groups = {}
        for w in c.words:
            groups.setdefault(w[:g], []).append(w)
        return [clopen(m, ws) for _, ws in sorted(groups.items())]

    def refine(p, q):
        need = level + 1
        if common_prefix_length(p) >= need and common_prefix_length(q) >= need:
            out.append((p, q))
            return
        if common_prefix_length(p) < need:
            pieces = split_coarser(mx, p)
            rest = q
            for i, piece in enumerate(pieces):
                if i == len(pieces) - 1:
                    part = rest
                else:
                    mass = clopen_measure(mx, piece)
                    try:
                        part = realize_value_in(
                            my, rest, mass, None, depth_cap, budget
                        )
                    except ValueNotRealizable:
                        raise ClopenValuesMismatch(
                            mass, "target", depth_cap
                        ) from None
                    rest = clopen_difference(rest, part)
                refine(piece, part)
            return
        pieces = split_coarser(my, q)
        rest = p
        for i, piece in enumerate(pieces):
            if i == len(pieces) - 1:
                part = rest
            else:
                mass = clopen_measure(my, piece)
                try:
                    part = realize_value_in(
                        mx, rest, mass, None, depth_cap, budget
                    )
                except ValueNotRealizable:
                    raise ClopenValuesMismatch(
                        mass, "source", depth_cap
                    ) from None
                rest = clopen_difference(rest, part)
            refine(part, piece)

    refine(s, t)
    return out


def akin_isomorphism(
    mx: MeasureTree,
    my: MeasureTree,
    plan: StagePlan,
    budget: int = DEFAULT_ORACLE_BUDGET,
) -> HomeoSketch:
    """Isomorphism sketch between two spaces of equal mass, or a
    ClopenValuesMismatch witnessing a value one side cannot realize."""
    if mx.root_mass != my.root_mass:
        raise MeasureMismatch(
            f"root masses differ: {mx.root_mass} vs {my.root_mass}"
        )
    pairs = [(whole_space(mx), whole_space(my), 0)]
    per_level = []
    for n in range(1, plan.levels + 1):
        new_pairs = []
        for parent_index, (u, v, _) in enumerate(pairs):
            for s, t in _measure_matched_pairs(
                mx, my, u, v, n, plan.depth_cap, budget
            ):
                new_pairs.append((s, t, parent_index))
        pairs = new_pairs
        per_level.append(pairs)
    return _verified(_assemble("isomorphism", mx, my, per_level))


# ---------------------------------------------------------------------------
# topological extension


def _split_off_one(m, pieces, index):
    """Replace pieces[index] by two clopen halves (first word vs rest),
    growing the list length by exactly one."""
    c = pieces[index]
    if len(c.words) >= 2:
        first, rest = c.words[:1], c.words[1:]
    else:
        w = c.words[0]
        kids = [w + (i,) for i in range(m.arity(w))]
        first, rest = kids[:1], kids[1:]
    pieces[index : index + 1] = [clopen(m, first), clopen(m, rest)]


def extend_topological(corr: Correspondence, plan: StagePlan) -> HomeoSketch:
    """Extend a node correspondence between nowhere-dense trees to a full
    tower with no measure conditions (mesh, nesting, coherence and the
    restriction condition only)."""
    a_tree, b_tree = corr.source, corr.target
    if not (a_tree.nowhere_dense and b_tree.nowhere_dense):
        raise NotNowhereDense("both trees need nowhere-density certificates")
    m = a_tree.space
    if not m.same_context(b_tree.space):
        from .errors import ContextMismatch

        raise ContextMismatch("trees live over different arity structures")
    corr.verify(plan.levels + 1, require_labels=False)

    # pair kinds: ("corr", U, V) carries matched tree nodes, ("free", U, V)
    pairs = [("corr", whole_space(m), whole_space(m), 0)]
    per_level = []
    for n in range(1, plan.levels + 1):
        new_pairs = []
        for parent_index, (kind, u, v, _) in enumerate(pairs):
            d = max(plan.min_depth(n), _maxlen(u) + 1, _maxlen(v) + 1)
            while True:
                if d > plan.depth_cap:
                    raise NotNowhereDense(
                        f"no free cylinders under {u!r} within depth {plan.depth_cap}"
                    )
                srcs = leaves_at(m, u, d)
                tgts = leaves_at(m, v, d)
                if kind == "free":
                    a_cyls, b_cyls = [], []
                else:
                    a_cyls = [w for w in srcs if a_tree.is_member(w)]
                    b_cyls = [w for w in tgts if b_tree.is_member(w)]
                free_src = [w for w in srcs if w not in set(a_cyls)]
                free_tgt = [w for w in tgts if w not in set(b_cyls)]
                if (not free_src) == (not free_tgt):
                    break
                d += 1
            for a in a_cyls:
                b = corr.map_node(a)
                new_pairs.append(
                    ("corr", clopen(m, [a]), clopen(m, [b]), parent_index)
                )
            src_pieces = [clopen(m, [w]) for w in free_src]
            tgt_pieces = [clopen(m, [w]) for w in free_tgt]
            while len(src_pieces) < len(tgt_pieces):
                _split_off_one(m, src_pieces, len(src_pieces) - 1)
            while len(tgt_pieces) < len(src_pieces):
                _split_off_one(m, tgt_pieces, len(tgt_pieces) - 1)
            for s, t in zip(src_pieces, tgt_pieces):
                new_pairs.append(("free", s, t, parent_index))
        pairs = new_pairs
        per_level.append([(u, v, p) for _, u, v, p in pairs])
    return _verified(
        _assemble(
            "isomorphism",
            m,
            m,
            per_level,
            corr=corr,
            topological_only=True,
        )
    )


# ---------------------------------------------------------------------------
# measure-preserving extension


def _trunc_below(tree: ClosedTree, word, depth: int) -> Fraction:
    total = ZERO
    for w in tree.members_at(depth):
        if is_prefix(word, w):
            total += tree.space.weight(w)
    return total


def _reachable_sums(m, region, depth, cap_value, budget):
    leaves = leaves_at(m, region, depth)
    sums = {ZERO}
    steps = 0
    for w in leaves:
        weight = m.weight(w)
        extra = set()
        for s in sums:
            t = s + weight
            if t <= cap_value:
                extra.add(t)
        sums |= extra
        steps += len(sums)
        if steps > budget:
            from .errors import BudgetExceeded

            raise BudgetExceeded("value sweep exceeded budget")
    return sums


def _least_value_piece(m, region, lo, hi, depth_cap, budget):
    """Least mass in the open interval (lo, hi) realizable inside the
    region, together with its lexicographic-first clopen witness."""
    base = _maxlen(region)
    for depth in range(base, depth_cap + 1):
        sums = _reachable_sums(m, region, depth, hi, budget)
        candidates = sorted(s for s in sums if lo < s < hi)
        if candidates:
            alpha = candidates[0]
            return alpha, realize_value_in(m, region, alpha, None, depth_cap, budget)
    raise DepthCapExceeded(
        f"no value in ({lo}, {hi}) realizable within depth {depth_cap}"
    )


def _prefix_value_piece(m, region, lo, hi, depth_cap):
    """Contiguous left block of the region with mass in the open interval
    (lo, hi): leftmost leaves are taken until the running sum enters the
    window, so the leftover stays a coarse right block."""
    base = _maxlen(region)
    for depth in range(base, depth_cap + 1):
        leaves = leaves_at(m, region, depth)
        total = ZERO
        taken = []
        for w in leaves:
            weight = m.weight(w)
            if total + weight >= hi:
                break
            taken.append(w)
            total += weight
            if total > lo:
                return total, clopen(m, taken)
    raise DepthCapExceeded(
        f"no left block lands in ({lo}, {hi}) within depth {depth_cap}"
    )


def _goodness_gate(m, plan, budget):
    report = check_goodness(m, depth=min(2, plan.levels), depth_cap=plan.depth_cap,
                            budget=budget)
    if not report.passed:
        alpha, cyl = report.counterexample
        raise ValueNotRealizable(
            f"measure fails the subset condition at working resolution: "
            f"alpha={format_fraction(alpha)} inside {cyl!r}",
            depth_cap=plan.depth_cap,
        )


def extend_measure_preserving(
    m: MeasureTree,
    corr: Correspondence,
    plan: StagePlan,
    budget: int = DEFAULT_ORACLE_BUDGET,
) -> HomeoSketch:
    """Extend a label-preserving correspondence between nowhere-dense
    trees to an exactly measure-preserving tower carrying it.

    A hull plan is laid out first: at the deepest split depth every
    matched node pair gets clopen hulls of one common admissible mass
    (the least value realizable on both sides above both truncations,
    below both cylinder weights); hulls of shallower node pairs are the
    unions of their children's, so every later split lands on aligned
    equal-mass boundaries.  Mass freed between consecutive hulls is
    matched exactly by the generic refinement.
    """
    a_tree, b_tree = corr.source, corr.target
    if not (a_tree.nowhere_dense and b_tree.nowhere_dense):
        raise NotNowhereDense("both trees need nowhere-density certificates")
    corr.verify(plan.levels + 1, require_labels=True)
    _goodness_gate(m, plan, budget)

    horizon = plan.min_depth(plan.levels)
    hulls = {}

    def build(a):
        got = hulls.get(a)
        if got is not None:
            return got
        b = corr.map_node(a)
        if len(a) >= horizon:
            pair = _matched_hulls(m, a_tree, b_tree, a, b, plan.depth_cap, budget)
        else:
            parts = [build(a + (i,)) for i in a_tree.children(a)]
            hull_a = parts[0][0]
            hull_b = parts[0][1]
            for ha, hb in parts[1:]:
                hull_a = clopen_union(hull_a, ha)
                hull_b = clopen_union(hull_b, hb)
            pair = (hull_a, hull_b)
        hulls[a] = pair
        return pair

    # ("corr", U, V, a_node) / ("free", U, V, None)
    pairs = [("corr", whole_space(m), whole_space(m), ())]
    per_level = []
    for n in range(1, plan.levels + 1):
        d = plan.min_depth(n)
        new_pairs = []
        for parent_index, (kind, u, v, a_node) in enumerate(pairs):
            if kind == "free":
                for s, t in _measure_matched_pairs(
                    m, m, u, v, n, plan.depth_cap, budget
                ):
                    new_pairs.append(("free", s, t, None, parent_index))
                continue
            kids = _node_descendants_at(a_tree, a_node, max(d, len(a_node) + 1))
            rest_src, rest_tgt = u, v
            for a in kids:
                hull_a, hull_b = build(a)
                new_pairs.append(("corr", hull_a, hull_b, a, parent_index))
                rest_src = clopen_difference(rest_src, hull_a)
                rest_tgt = clopen_difference(rest_tgt, hull_b)
            if not rest_src.is_empty():
                for s, t in _measure_matched_pairs(
                    m, m, rest_src, rest_tgt, n, plan.depth_cap, budget
                ):
                    new_pairs.append(("free", s, t, None, parent_index))
        pairs = [(k, s, t, a) for k, s, t, a, _ in new_pairs]
        per_level.append([(s, t, p) for _, s, t, _, p in new_pairs])
    return _verified(
        _assemble("isomorphism", m, m, per_level, corr=corr)
    )


def _node_descendants_at(tree: ClosedTree, node, depth: int) -> list:
    """Member descendants of `node` at the given absolute depth."""
    level = [node]
    while level and len(level[0]) < depth:
        level = [w + (i,) for w in level for i in tree.children(w)]
    return level


def _matched_hulls(m, a_tree, b_tree, a, b, depth_cap, budget):
    """Clopen hulls of the tree parts below matched nodes a and b, with
    one exactly common mass: the least value realizable inside both
    cylinders above both hull truncations and below both weights."""
    hi = min(m.weight(a), m.weight(b))
    core_a = RestrictedTree(a_tree, clopen(m, [a]))
    core_b = RestrictedTree(b_tree, clopen(m, [b]))
    for depth in range(max(len(a), len(b)) + 1, depth_cap + 1):
        lo = max(_trunc_below(a_tree, a, depth), _trunc_below(b_tree, b, depth))
        if lo >= hi:
            continue
        sums_a = _reachable_sums(m, clopen(m, [a]), depth, hi, budget)
        sums_b = _reachable_sums(m, clopen(m, [b]), depth, hi, budget)
        common = sorted(s for s in sums_a & sums_b if lo < s < hi)
        for alpha in common:
            try:
                hull_a = realize_value_in(m, clopen(m, [a]), alpha, core_a,
                                          depth_cap, budget)
                hull_b = realize_value_in(m, clopen(m, [b]), alpha, core_b,
                                          depth_cap, budget)
                return hull_a, hull_b
            except (ValueNotRealizable, MeasureMismatch):
                continue
    raise DepthCapExceeded(
        f"no common hull value found for nodes within depth {depth_cap}"
    )


# ---------------------------------------------------------------------------
# null-avoiding embedding


def _neighborhood_mass(m, tree, region, depth):
    """Mass of the clopen hull of (tree & region) at the given depth: the
    2**-(depth-1)-neighborhood of the tree inside the region."""
    from .goodness import hull_words

    restricted = RestrictedTree(tree, region) if tree.is_member(()) else None
    if restricted is None:
        return ZERO
    return sum((m.weight(w) for w in hull_words(restricted, region, depth)), ZERO)


def _first_word_heavier(region: ClopenSet, m, floor, prefer=None):
    """First antichain word heavier than `floor`, preferring words the
    given membership test accepts."""
    if prefer is not None:
        for w in region.words:
            if m.weight(w) > floor and prefer(w):
                return w
    for w in region.words:
        if m.weight(w) > floor:
            return w
    return None


def embed_null_avoiding(
    mx: MeasureTree,
    my: MeasureTree,
    a_seq,
    b_seq,
    plan: StagePlan,
    budget: int = DEFAULT_ORACLE_BUDGET,
) -> HomeoSketch:
    """Embedding-kind sketch squeezing the source into the target with
    banded image masses and tracked avoidance of the given sequences.

    Per level every source cell of the working depth gets a target piece
    of the least admissible mass inside one target cylinder; cells
    missing the current source tree take their pieces inside cylinders
    missing the current target tree.  The tracking indices are then
    advanced to the first positions satisfying the inside/outside mass
    comparisons for every cell.
    """
    a_seq, b_seq = list(a_seq), list(b_seq)
    if mx.root_mass >= my.root_mass:
        raise MeasureTooLarge(
            f"source mass {mx.root_mass} must stay below target mass {my.root_mass}"
        )
    if not a_seq or not b_seq:
        raise InsufficientExhaustion("empty tree sequences")
    for t in b_seq:
        if not t.nowhere_dense:
            raise NotNowhereDense("every target-side tree must be nowhere dense")
    for seq, mass, name in ((a_seq, mx.root_mass, "source"), (b_seq, my.root_mass, "target")):
        labels = [t.label(()) for t in seq]
        if any(x > y for x, y in zip(labels, labels[1:])):
            raise MeasureMismatch(f"{name} sequence labels must be nondecreasing")

    whole_x = whole_space(mx)
    mu_x = mx.root_mass
    alpha0, v0 = _least_value_piece(
        my, whole_space(my), mu_x, 2 * mu_x, plan.depth_cap, budget
    )

    def scan_m(pairs, start):
        for idx in range(start, len(b_seq)):
            if all(
                clopen_measure(mx, p) < restrict_label(b_seq[idx], q)
                for p, q, _ in pairs
            ):
                return idx
        raise InsufficientExhaustion(
            "no target-side tree carries enough mass inside every image"
        )

    def scan_k(pairs, m_now, start):
        for idx in range(start, len(a_seq)):
            ok = True
            for p, q, _ in pairs:
                outside_src = clopen_measure(mx, p) - restrict_label(a_seq[idx], p)
                outside_tgt = clopen_measure(my, q) - restrict_label(b_seq[m_now], q)
                if not outside_src < outside_tgt:
                    ok = False
                    break
            if ok:
                return idx
        raise InsufficientExhaustion(
            "no source-side tree exhausts enough mass inside every cell"
        )

    m0 = scan_m([(whole_x, v0, 0)], 0)
    k0 = scan_k([(whole_x, v0, 0)], m0, 0)
    ks, ms = [k0], [m0]

    pairs = [(whole_x, v0, 0)]
    per_level = []
    for n in range(1, plan.levels + 1):
        a_prev, b_prev = a_seq[ks[-1]], b_seq[ms[-1]]
        new_pairs = []
        for parent_index, (u, v, _) in enumerate(pairs):
            mass_u = clopen_measure(mx, u)
            gap = clopen_measure(my, v) - mass_u
            d = max(plan.min_depth(n), _maxlen(u) + 1)
            leaves = leaves_at(mx, u, d)
            rem = v
            free = [w for w in leaves if not a_prev.is_member(w)]
            anchored = [w for w in leaves if a_prev.is_member(w)]

            avoid = None
            if free:
                free_mass = sum((mx.weight(w) for w in free), ZERO)
                depth_e = max(plan.min_depth(n), _maxlen(v) + 1)
                while True:
                    if depth_e > plan.depth_cap:
                        raise DepthCapExceeded(
                            "no room clear of the avoided tree at this resolution"
                        )
                    hull_mass = _neighborhood_mass(my, b_prev, v, depth_e)
                    if clopen_measure(my, v) - hull_mass > free_mass + gap / 2:
                        break
                    depth_e += 1
                from .goodness import hull_words

                restricted = RestrictedTree(b_prev, v)
                avoid = clopen_difference(
                    v, clopen(my, hull_words(restricted, v, depth_e))
                )

            def share(mass):
                return mass * min(Fraction(1, 2 ** n), gap / (2 * mass_u))

            for w in anchored:
                lo = mx.weight(w)
                c = _first_word_heavier(
                    rem, my, lo, prefer=b_prev.is_member
                )
                if c is None:
                    raise DepthCapExceeded(
                        "no target cylinder can hold an anchored cell"
                    )
                t, piece = _prefix_value_piece(
                    my, clopen(my, [c]), lo, lo + share(lo), plan.depth_cap
                )
                rem = clopen_difference(rem, piece)
                if avoid is not None:
                    avoid = clopen_difference(avoid, piece)
                new_pairs.append((clopen(mx, [w]), piece, parent_index))

            def place_free(piece_region):
                nonlocal rem, avoid
                lo = clopen_measure(mx, piece_region)
                c = _first_word_heavier(avoid, my, lo)
                if c is None:
                    if _maxlen(piece_region) + 1 > plan.depth_cap:
                        raise DepthCapExceeded(
                            "free cell too heavy for the clear room"
                        )
                    for w in leaves_at(mx, piece_region, _maxlen(piece_region) + 1):
                        place_free(clopen(mx, [w]))
                    return
                t, piece = _prefix_value_piece(
                    my, clopen(my, [c]), lo, lo + share(lo), plan.depth_cap
                )
                rem = clopen_difference(rem, piece)
                avoid = clopen_difference(avoid, piece)
                new_pairs.append((piece_region, piece, parent_index))

            for w in free:
                place_free(clopen(mx, [w]))

        pairs = new_pairs
        per_level.append(pairs)
        ms.append(scan_m(pairs, ms[-1] + 1))
        ks.append(scan_k(pairs, ms[-1], ks[-1] + 1))

    tracked = Tracked(
        a_seq=tuple(a_seq), b_seq=tuple(b_seq), ks=tuple(ks), ms=tuple(ms)
    )
    return _verified(
        _assemble(
            "embedding", mx, my, per_level, base_target=v0, tracked=tracked
        )
    )


# ---------------------------------------------------------------------------
# moving a closed set into a fat one


def _labelled_member_subset(m, tree, region, lo, hi, min_label, depth_cap, budget):
    """Member-word subset of the tree inside `region` whose weights sum to
    the least admissible value in (lo, hi) while carrying label mass
    above `min_label`.  Returns (mass, words)."""
    base = _maxlen(region)
    for depth in range(base, depth_cap + 1):
        words = [
            w
            for w in members_in(tree, region, max(depth, base))
        ]
        if not words:
            break
        weights = [m.weight(w) for w in words]
        labels = [tree.label(w) for w in words]
        # per reachable sum keep the best label total and its witness
        best = {ZERO: (ZERO, ())}
        steps = 0
        for i, (wt, lb) in enumerate(zip(weights, labels)):
            additions = {}
            for s, (lab, wit) in best.items():
                t = s + wt
                if t > hi:
                    continue
                steps += 1
                if steps > budget:
                    from .errors import BudgetExceeded

                    raise BudgetExceeded("labelled subset sweep exceeded budget")
                cand = (lab + lb, wit + (i,))
                seen = additions.get(t)
                if seen is None or cand[0] > seen[0] or (
                    cand[0] == seen[0] and cand[1] < seen[1]
                ):
                    additions[t] = cand
            for t, cand in additions.items():
                seen = best.get(t)
                if seen is None or cand[0] > seen[0] or (
                    cand[0] == seen[0] and cand[1] < seen[1]
                ):
                    best[t] = cand
        usable = sorted(
            s for s, (lab, _) in best.items() if lo < s < hi and lab > min_label
        )
        if usable:
            mass = usable[0]
            _, witness = best[mass]
            return mass, [words[i] for i in witness]
    raise DepthCapExceeded(
        f"no member subset in ({lo}, {hi}) with label above {min_label} "
        f"within depth {depth_cap}"
    )


def _labelled_member_candidates(m, tree, region, lo, hi, min_label, depth_cap,
                                budget, limit=48):
    """Ascending (mass, words) member-subset candidates, deduplicated
    across deepening sweeps; at most `limit` are produced."""
    seen = set()
    produced = 0
    base = _maxlen(region)
    for depth in range(base, depth_cap + 1):
        words = members_in(tree, region, max(depth, base))
        if not words:
            return
        weights = [m.weight(w) for w in words]
        labels = [tree.label(w) for w in words]
        best = {ZERO: (ZERO, ())}
        steps = 0
        for i, (wt, lb) in enumerate(zip(weights, labels)):
            additions = {}
            for s, (lab, wit) in best.items():
                t = s + wt
                if t > hi:
                    continue
                steps += 1
                if steps > budget:
                    from .errors import BudgetExceeded

                    raise BudgetExceeded("labelled subset sweep exceeded budget")
                cand = (lab + lb, wit + (i,))
                seen_add = additions.get(t)
                if seen_add is None or cand > seen_add:
                    additions[t] = cand
            for t, cand in additions.items():
                incumbent = best.get(t)
                if incumbent is None or cand > incumbent:
                    best[t] = cand
        for s in sorted(best):
            if lo < s < hi and s not in seen and best[s][0] > min_label:
                seen.add(s)
                produced += 1
                yield s, [words[i] for i in best[s][1]]
                if produced >= limit:
                    return


def _hull_floor(core, region, depth_cap):
    """Least hull mass of (core & region) reachable within the depth cap,
    with the depth attaining it."""
    from .goodness import hull_words

    m = core.space
    best = None
    for depth in range(depth_cap + 1):
        mass = sum((m.weight(w) for w in hull_words(core, region, depth)), ZERO)
        if best is None or mass < best:
            best = mass
    return best


def _move_pairs(m, a_tree, k_tree, region, plan, budget, first_level=1):
    """Per-level matched pairs carrying the tree of `a_tree` into member
    paths of `k_tree`, all inside `region`; used by move_into directly
    and by the displacement builder per partition cell.

    A shelter plan is laid out first: every moved-tree node at the
    deepest split depth gets a receiver bin (a member cylinder of
    dominating label, bins nesting along the tree) and a woven member
    subset of exactly the mass of a realized piece around its part of
    the tree; shelters of shallower nodes are the unions of their
    children's, so splits land on aligned equal-mass boundaries.  The
    mass outside the shelters is matched by the generic refinement.

    Returns per-level pair lists for levels first_level..plan.levels.
    """
    region_mass = clopen_measure(m, region)
    total_a = restrict_label(a_tree, region)
    total_k = restrict_label(k_tree, region)
    slack = (total_k - total_a) / 2
    if slack <= 0:
        raise MeasureTooLarge(
            f"moved mass {total_a} must stay below receiver mass {total_k}"
        )
    horizon = plan.min_depth(plan.levels)
    root = ()
    shelters = {}

    # when the moved tree already runs along receiver paths, shelter in
    # place: every node keeps its own member hull, no mass moves at all
    deep = horizon + 1
    if all(k_tree.is_member(w) for w in a_tree.members_at(deep)):
        def identity_shelter(a):
            words = [w for w in a_tree.members_at(deep) if is_prefix(a, w)]
            piece = clopen(m, words)
            return piece, piece

        level = [root]
        while level and len(level[0]) <= horizon:
            for a in level:
                shelters[a] = identity_shelter(a)
            level = [a + (i,) for a in level for i in a_tree.children(a)]
        return _pairs_from_shelters(
            m, a_tree, shelters, region, plan, budget, first_level
        )

    def floor_of(a):
        core = RestrictedTree(a_tree, clopen(m, [a]))
        return _hull_floor(core, clopen(m, [a]), plan.depth_cap)

    def share_of(a):
        return slack * m.weight(a) / region_mass

    def take_exact(pool, target_w, min_depth):
        """Pop a member cylinder of exactly the given weight, descending
        heavier slots along the receiver tree."""
        while True:
            for b in pool:
                if m.weight(b) == target_w and len(b) >= min_depth:
                    pool.remove(b)
                    return b
            heavy = [
                b
                for b in pool
                if m.weight(b) > target_w and len(b) + 1 <= plan.depth_cap
            ]
            if not heavy:
                return None
            b = heavy[0]
            pool.remove(b)
            pool.extend(b + (i,) for i in k_tree.children(b))
            pool.sort()

    def one_shot(a, pool):
        """Realize the horizon shelter for node a from the bin pool,
        scanning admissible receiver masses until one is realizable
        around the tree part on the source side too."""
        l_a = restrict_label(a_tree, clopen(m, [a]))
        lo = max(l_a, floor_of(a))
        hi = min(m.weight(a), lo + share_of(a))
        if lo >= hi:
            if floor_of(a) == m.weight(a):
                # the tree fills this cylinder to the cap: pair the whole
                # cylinder with one member cylinder of identical mass
                b = take_exact(pool, m.weight(a), len(a))
                if b is not None:
                    return clopen(m, [a]), clopen(m, [b])
            return None
        chosen = _take_bin(
            m, k_tree, pool, lo, ZERO, plan.depth_cap, min_depth=len(a)
        )
        if chosen is None:
            return None
        core = RestrictedTree(a_tree, clopen(m, [a]))
        for t, words in _labelled_member_candidates(
            m, k_tree, clopen(m, [chosen]), lo, hi, -1, plan.depth_cap, budget
        ):
            try:
                source = realize_value_in(
                    m, clopen(m, [a]), t, core, plan.depth_cap, budget
                )
            except (ValueNotRealizable, MeasureMismatch):
                continue
            taken = set(words)
            spare = [
                w
                for w in members_in(k_tree, clopen(m, [chosen]), len(words[0]))
                if w not in taken
            ]
            pool.extend(spare)
            pool.sort()
            return source, clopen(m, words)
        # nothing fit: hand the bin back untouched
        pool.append(chosen)
        pool.sort()
        return None

    def build(a, pool):
        """Shelter for node a drawing bins from `pool`; None if the pool
        cannot host it (the caller then splits the node)."""
        if len(a) >= horizon:
            got = one_shot(a, pool)
            if got is not None:
                return got
            if len(a) + 1 > plan.depth_cap:
                return None
            # no single receiver piece fits: subdivide below the horizon
        # reserve one bin for the whole subtree, then subdivide inside it
        need = floor_of(a) + share_of(a)
        chosen = _take_bin(
            m, k_tree, pool, need, ZERO, plan.depth_cap, min_depth=len(a)
        )
        if chosen is None:
            return None
        inner = [chosen]
        sources, targets = [], []
        stack = [a + (i,) for i in a_tree.children(a)]
        while stack:
            child = stack.pop(0)
            got = build(child, inner)
            if got is None:
                if len(child) + 1 > plan.depth_cap:
                    raise DepthCapExceeded(
                        f"no shelter for node {child} within the cap"
                    )
                stack = [child + (i,) for i in a_tree.children(child)] + stack
                continue
            src, tgt = got
            sources.append(src)
            targets.append(tgt)
            shelters[child] = got
        if not sources:
            return None
        s_all, t_all = sources[0], targets[0]
        for s in sources[1:]:
            s_all = clopen_union(s_all, s)
        for t in targets[1:]:
            t_all = clopen_union(t_all, t)
        return s_all, t_all

    top_pool = [
        w for w in region.words if k_tree.is_member(w)
    ]
    top = build(root, top_pool)
    if top is None:
        raise DepthCapExceeded("no shelter plan fits the receiving tree")
    shelters[root] = top
    return _pairs_from_shelters(
        m, a_tree, shelters, region, plan, budget, first_level
    )


def _pairs_from_shelters(m, a_tree, shelters, region, plan, budget, first_level):
    """Assemble the leveled pair lists from a recorded shelter plan."""

    def cover(a_node, depth):
        """Minimal recorded shelters below a_node at depth >= `depth`
        (splitting may have pushed some lineages past the grid)."""
        out = []

        def walk(x):
            if len(x) >= depth and x in shelters:
                out.append(x)
                return
            for i in a_tree.children(x):
                walk(x + (i,))

        walk(a_node)
        return out

    top = shelters[()]
    pairs = [("anchored", *top, ())]
    free_src = clopen_difference(region, top[0])
    free_tgt = clopen_difference(region, top[1])
    if not free_src.is_empty():
        pairs.append(("plain", free_src, free_tgt, None))
    out = []
    for n in range(first_level, plan.levels + 1):
        d = plan.min_depth(n)
        new_pairs = []
        for parent_index, (kind, u, v, a_node) in enumerate(pairs):
            if kind == "plain":
                for s, t in _measure_matched_pairs(
                    m, m, u, v, n, plan.depth_cap, budget
                ):
                    new_pairs.append(("plain", s, t, None, parent_index))
                continue
            if len(a_node) >= d:
                # already sheltered at or past this grid depth
                new_pairs.append((kind, u, v, a_node, parent_index))
                continue
            rest_src, rest_tgt = u, v
            for a in cover(a_node, d):
                src, tgt = shelters[a]
                new_pairs.append(("anchored", src, tgt, a, parent_index))
                rest_src = clopen_difference(rest_src, src)
                rest_tgt = clopen_difference(rest_tgt, tgt)
            if not rest_src.is_empty():
                for s, t in _measure_matched_pairs(
                    m, m, rest_src, rest_tgt, n, plan.depth_cap, budget
                ):
                    new_pairs.append(("plain", s, t, None, parent_index))
        pairs = [(k, s, t, a) for k, s, t, a, _ in new_pairs]
        if n == first_level:
            # the synthetic starting pairs all descend from one element
            out.append([(s, t, 0) for _, s, t, _, _ in new_pairs])
        else:
            out.append([(s, t, p) for _, s, t, _, p in new_pairs])
    return out


def _take_bin(m, k_tree, pool, need_weight, need_label, depth_cap, min_depth=0):
    """Pop a receiver bin from the pool with weight capacity above
    `need_weight` and label mass above `need_label`.

    Weight pays for the woven subsets, label for dominance over the
    moved part.  Best fit by weight; an oversized slot is narrowed along
    the receiver tree while a child still qualifies, so one reservation
    cannot hog mass later anchors need; too-shallow slots split to honour
    the mesh floor `min_depth`."""

    def ok(b):
        return k_tree.label(b) > need_label and m.weight(b) > need_weight

    while True:
        fits = [b for b in pool if len(b) >= min_depth and ok(b)]
        if fits:
            chosen = min(fits, key=lambda b: (m.weight(b), b))
            pool.remove(chosen)
            while (
                len(chosen) + 1 <= depth_cap
                and m.weight(chosen) > 2 * need_weight
            ):
                kids = [chosen + (i,) for i in k_tree.children(chosen)]
                good = [c for c in kids if ok(c)]
                if not good:
                    break
                keep = min(good, key=lambda c: (m.weight(c), c))
                pool.extend(c for c in kids if c != keep)
                chosen = keep
            pool.sort()
            return chosen
        shallow = [
            b
            for b in pool
            if len(b) < min_depth and len(b) + 1 <= depth_cap and ok(b)
        ]
        if not shallow:
            return None
        fresh = [b + (i,) for b in shallow for i in k_tree.children(b)]
        kept = [b for b in pool if b not in set(shallow)]
        pool[:] = sorted(kept + fresh)


def move_into(
    m: MeasureTree,
    a_tree: ClosedTree,
    k_tree: ClosedTree,
    plan: StagePlan,
    budget: int = DEFAULT_ORACLE_BUDGET,
) -> HomeoSketch:
    """Measure-preserving tower whose every image of a cell meeting the
    first tree runs along member paths of the second.

    Follows the thicken / prune / shelter pipeline: the moved tree is
    padded to a perfect one (mass unchanged), the receiving tree is
    pruned to its support, and each cell around the moved tree gets an
    exactly matched piece woven from member cylinders of the receiver
    with dominating label mass.
    """
    if not a_tree.nowhere_dense:
        raise NotNowhereDense("the moved tree needs a nowhere-density certificate")
    if not k_tree.nowhere_dense:
        raise NotNowhereDense("the receiving tree needs a nowhere-density certificate")
    support = prune_to_support(k_tree)
    if a_tree.label(()) >= support.label(()):
        raise MeasureTooLarge(
            f"moved mass {a_tree.label(())} must stay below {support.label(())}"
        )
    _goodness_gate(m, plan, budget)
    per_level = _move_pairs(
        m, a_tree, support, whole_space(m), plan, budget
    )
    return _verified(_assemble("isomorphism", m, m, per_level))


def check_move_containment(sketch: HomeoSketch, a_tree: ClosedTree,
                           k_tree: ClosedTree) -> bool:
    """Every element holding a member word of the first tree must map to
    an element made of member words of the second."""
    for level in sketch.levels:
        for i, c in enumerate(level.source):
            if any(a_tree.is_member(w) for w in c.words):
                image = level.target[level.xi[i]]
                if not all(k_tree.is_member(w) for w in image.words):
                    return False
    return True


# ---------------------------------------------------------------------------
# ergodic covering


@dataclass(frozen=True)
class CoverResult:
    sketches: tuple
    covered_bound: Fraction
    carved: tuple  # the nowhere-dense pieces, one per sketch


def ergodic_cover(
    m: MeasureTree,
    a_tree: ClosedTree,
    epsilon,
    plan: StagePlan,
    budget: int = DEFAULT_ORACLE_BUDGET,
) -> CoverResult:
    """Sketches h_1..h_k whose images of the given tree jointly cover all
    but epsilon of the space, with the exact covered bound.

    Carves a fat nowhere-dense piece inside every cylinder of the first
    depth whose cells weigh less than the tree's mass, moves each piece
    into the tree, and returns the inverted movers.
    """
    epsilon = Fraction(epsilon)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if a_tree.label(()) == 0:
        raise PositiveMeasureRequired("the covering tree carries no mass")
    if epsilon >= m.root_mass:
        return CoverResult(sketches=(), covered_bound=ZERO, carved=())
    mass = a_tree.label(())
    depth = 0
    while max(m.weight(w) for w in m.words_at(depth)) >= mass:
        depth += 1
    support = prune_to_support(a_tree)
    from .closed import carve_nowhere_dense

    sketches = []
    carved = []
    bound = ZERO
    for w in m.words_at(depth):
        cell = clopen(m, [w])
        delta = epsilon * m.weight(w) / m.root_mass
        piece = carve_nowhere_dense(m, cell, delta)
        carved.append(piece)
        bound += piece.label(())
        mover = _verified(
            _assemble(
                "isomorphism", m, m,
                _move_pairs(m, piece, support, whole_space(m), plan, budget),
            )
        )
        sketches.append(invert_sketch(mover))
    assert bound > m.root_mass - epsilon
    return CoverResult(
        sketches=tuple(sketches), covered_bound=bound, carved=tuple(carved)
    )
