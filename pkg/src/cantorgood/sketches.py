"""Finite partition towers standing for homeomorphisms and embeddings.

A sketch holds levels 1..N; level n pairs a clopen partition of the
source space with a clopen family in the target through a bijection xi.
Meshes shrink (every element's words share a prefix of length >= n+1, so
diameters drop below 2**-n), elements nest into their parents, and the
parent maps commute with xi, which pins the limit map to resolution
2**-n.  Isomorphism towers preserve measure exactly per element;
embedding towers squeeze the image measure into the band
(mu(U), (1+2**-n) mu(U)) and track avoidance data for two closed-set
sequences.

Levels are materialized once and never grown; requesting resolution past
the stored levels is an error, and deeper towers come from re-running a
constructor with a larger plan.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .errors import (
    IncompatibleSketches,
    LevelUnavailable,
    NeedMorePrecision,
    NotInvertible,
)
from .closed import ClosedTree, Correspondence, restrict_label
from .space import (
    ClopenSet,
    MeasureTree,
    ZERO,
    clopen,
    clopen_measure,
    clopen_subset,
    clopen_union,
    common_prefix_len,
    common_prefix_length,
    format_word,
    is_prefix,
    whole_space,
)


@dataclass(frozen=True)
class SketchLevel:
    index: int
    source: tuple  # tuple[ClopenSet]
    target: tuple  # tuple[ClopenSet]
    xi: tuple  # xi[i] = target position paired with source position i
    parent_src: tuple  # previous-level source position per element
    parent_tgt: tuple


@dataclass(frozen=True)
class Tracked:
    a_seq: tuple  # increasing ClosedTrees in the source
    b_seq: tuple  # increasing nowhere-dense ClosedTrees in the target
    ks: tuple  # chosen a_seq index per level, position 0 = level 0
    ms: tuple


@dataclass(frozen=True)
class HomeoSketch:
    kind: str  # "isomorphism" | "embedding"
    source_measure: MeasureTree
    target_measure: MeasureTree
    levels: tuple
    base_target: ClopenSet  # level-0 image of the whole source space
    corr: Optional[Correspondence] = None
    tracked: Optional[Tracked] = None
    topological_only: bool = False

    def level(self, n: int) -> SketchLevel:
        if not 1 <= n <= len(self.levels):
            raise LevelUnavailable(f"level {n} of {len(self.levels)}")
        return self.levels[n - 1]

    @property
    def depth(self) -> int:
        return len(self.levels)

    def source_whole(self) -> ClopenSet:
        return whole_space(self.source_measure)


@dataclass(frozen=True)
class SketchFailure:
    level: int
    condition: str
    element: int
    expected: str
    actual: str


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    failures: tuple

    def conditions_hit(self):
        return sorted({f.condition for f in self.failures})


def _pairwise_disjoint(elements) -> Optional[tuple]:
    """None when disjoint, else (i, j) hitting elements that overlap."""
    tagged = sorted(
        (w, i) for i, c in enumerate(elements) for w in c.words
    )
    for (w1, i1), (w2, i2) in zip(tagged, tagged[1:]):
        if is_prefix(w1, w2):
            return (i1, i2)
    return None


def _elements_equal(a: SketchLevel, b: SketchLevel) -> bool:
    return (
        tuple(c.words for c in a.source) == tuple(c.words for c in b.source)
        and tuple(c.words for c in a.target) == tuple(c.words for c in b.target)
        and a.xi == b.xi
        and a.parent_src == b.parent_src
        and a.parent_tgt == b.parent_tgt
    )


def sketches_equal(s1: HomeoSketch, s2: HomeoSketch) -> bool:
    return (
        s1.kind == s2.kind
        and s1.source_measure == s2.source_measure
        and s1.target_measure == s2.target_measure
        and s1.base_target.words == s2.base_target.words
        and len(s1.levels) == len(s2.levels)
        and all(_elements_equal(a, b) for a, b in zip(s1.levels, s2.levels))
    )


def verify_sketch(sketch: HomeoSketch, failure_budget: int = 100) -> VerificationReport:
    """Check every level condition with exact arithmetic.

    Condition ids: "part" partition/disjointness, "1n" mesh, "2n"
    nesting, "3n" coherence with the previous pairing, "4n" measure
    (exact for isomorphisms, banded for embeddings), "5n" correspondence
    restriction or the embedding null band, "6n".."9n" tracking.
    Failures accumulate in (level, condition, element) order up to the
    budget; nothing raises.
    """
    mu, lam = sketch.source_measure, sketch.target_measure
    failures = []

    def fail(level, cond, element, expected, actual):
        if len(failures) < failure_budget:
            failures.append(
                SketchFailure(level, cond, element, str(expected), str(actual))
            )

    if sketch.kind == "embedding":
        mass = mu.root_mass
        image = clopen_measure(lam, sketch.base_target)
        if not mass < image < 2 * mass:
            fail(0, "4n", 0, f"({mass}, {2 * mass})", image)

    prev_source = (whole_space(mu),)
    prev_target = (sketch.base_target,)
    prev_xi = (0,)
    corr = sketch.corr
    tracked = sketch.tracked

    for level in sketch.levels:
        n = level.index
        source, target = level.source, level.target

        overlap = _pairwise_disjoint(source)
        if overlap:
            fail(n, "part", overlap[1], "disjoint sources", f"elements {overlap}")
        total = sum((clopen_measure(mu, c) for c in source), ZERO)
        if total != mu.root_mass:
            fail(n, "part", 0, f"source total {mu.root_mass}", total)
        overlap = _pairwise_disjoint(target)
        if overlap:
            fail(n, "part", overlap[1], "disjoint targets", f"elements {overlap}")
        if sketch.kind == "isomorphism":
            t_total = sum((clopen_measure(lam, c) for c in target), ZERO)
            if t_total != lam.root_mass:
                fail(n, "part", 0, f"target total {lam.root_mass}", t_total)

        for i, c in enumerate(source):
            if c.is_empty() or common_prefix_length(c) < n + 1:
                fail(n, "1n", i, f"source prefix >= {n + 1}", repr(c))
        for j, c in enumerate(target):
            if c.is_empty() or common_prefix_length(c) < n + 1:
                fail(n, "1n", j, f"target prefix >= {n + 1}", repr(c))

        for i, c in enumerate(source):
            p = level.parent_src[i]
            if not (0 <= p < len(prev_source) and clopen_subset(c, prev_source[p])):
                fail(n, "2n", i, "source nests in parent", f"parent {p}")
        for j, c in enumerate(target):
            p = level.parent_tgt[j]
            if not (0 <= p < len(prev_target) and clopen_subset(c, prev_target[p])):
                fail(n, "2n", j, "target nests in parent", f"parent {p}")

        for i in range(len(source)):
            want = prev_xi[level.parent_src[i]]
            got = level.parent_tgt[level.xi[i]]
            if want != got:
                fail(n, "3n", i, f"target parent {want}", got)

        for i, c in enumerate(source):
            image = target[level.xi[i]]
            m_src = clopen_measure(mu, c)
            m_tgt = clopen_measure(lam, image)
            if sketch.kind == "isomorphism":
                if not sketch.topological_only and m_src != m_tgt:
                    fail(n, "4n", i, m_src, m_tgt)
            else:
                if m_src > 0:
                    band_hi = (1 + Fraction(1, 2 ** n)) * m_src
                    if not m_src < m_tgt < band_hi:
                        fail(n, "4n", i, f"({m_src}, {band_hi})", m_tgt)
                else:
                    cap = Fraction(1, 2 ** n * len(source))
                    if not 0 < m_tgt < cap:
                        fail(n, "5n", i, f"(0, {cap})", m_tgt)

        if corr is not None:
            depth = max(
                max(len(w) for c in source for w in c.words),
                max(len(w) for c in target for w in c.words),
            )
            a_nodes = corr.source.members_at(depth)
            image_of = {a: corr.map_node(a) for a in a_nodes}
            b_nodes = set(corr.target.members_at(depth))
            for i, c in enumerate(source):
                image = target[level.xi[i]]
                inside = [
                    a
                    for a in a_nodes
                    if any(is_prefix(v, a) for v in c.words)
                ]
                mapped = sorted(image_of[a] for a in inside)
                behind = sorted(
                    b
                    for b in b_nodes
                    if any(is_prefix(v, b) for v in image.words)
                )
                if mapped != behind:
                    fail(n, "5n", i, f"image nodes {behind}", f"mapped {mapped}")
                la = restrict_label(corr.source, c)
                lb = restrict_label(corr.target, image)
                if la != lb:
                    fail(n, "5n", i, f"restricted label {la}", lb)

        if tracked is not None:
            k_prev, m_prev = tracked.ks[n - 1], tracked.ms[n - 1]
            k_now, m_now = tracked.ks[n], tracked.ms[n]
            a_prev, b_prev = tracked.a_seq[k_prev], tracked.b_seq[m_prev]
            a_now, b_now = tracked.a_seq[k_now], tracked.b_seq[m_now]
            for i, c in enumerate(source):
                image = target[level.xi[i]]
                if not any(a_prev.is_member(w) for w in c.words):
                    if any(b_prev.is_member(w) for w in image.words):
                        fail(n, "6n", i, "image avoids tracked target set", "meets it")
                m_src = clopen_measure(mu, c)
                inside = restrict_label(b_now, image)
                if not m_src < inside:
                    fail(n, "7n", i, f"> {m_src}", inside)
                outside_src = m_src - restrict_label(a_now, c)
                outside_tgt = clopen_measure(lam, image) - inside
                if not outside_src < outside_tgt:
                    fail(n, "8n", i, f"> {outside_src}", outside_tgt)
            if not (k_now > k_prev and m_now > m_prev):
                fail(n, "9n", 0, "strictly increasing indices",
                     f"k {k_prev}->{k_now}, m {m_prev}->{m_now}")

        prev_source, prev_target, prev_xi = source, target, level.xi

    failures.sort(key=lambda f: (f.level, f.condition, f.element))
    return VerificationReport(passed=not failures, failures=tuple(failures))


# ---------------------------------------------------------------------------
# evaluation


def _element_containing(level: SketchLevel, w) -> Optional[int]:
    for i, c in enumerate(level.source):
        if any(is_prefix(u, w) for u in c.words):
            return i
    return None


def _image_prefix(c: ClopenSet):
    first = c.words[0]
    n = len(first)
    for other in c.words[1:]:
        n = min(n, common_prefix_len(first, other))
    return first[:n]


def eval_point(sketch: HomeoSketch, w) -> tuple:
    """Image prefix of the point selected by `w` at the deepest level.

    The prefixes are nested level by level; raises NeedMorePrecision when
    `w` is too short to pick a unique element somewhere.
    """
    result = _image_prefix(sketch.base_target)
    for level in sketch.levels:
        i = _element_containing(level, w)
        if i is None:
            raise NeedMorePrecision(
                f"word {format_word(w)} does not resolve level {level.index}",
                level=level.index,
            )
        result = _image_prefix(level.target[level.xi[i]])
    return result


def invert_sketch(sketch: HomeoSketch) -> HomeoSketch:
    if sketch.kind != "isomorphism":
        raise NotInvertible("only isomorphism sketches invert")
    levels = []
    for level in sketch.levels:
        inverse_xi = [0] * len(level.xi)
        for i, j in enumerate(level.xi):
            inverse_xi[j] = i
        levels.append(
            SketchLevel(
                index=level.index,
                source=level.target,
                target=level.source,
                xi=tuple(inverse_xi),
                parent_src=level.parent_tgt,
                parent_tgt=level.parent_src,
            )
        )
    tracked = None
    if sketch.tracked is not None:
        tracked = Tracked(
            a_seq=sketch.tracked.b_seq,
            b_seq=sketch.tracked.a_seq,
            ks=sketch.tracked.ms,
            ms=sketch.tracked.ks,
        )
    return HomeoSketch(
        kind="isomorphism",
        source_measure=sketch.target_measure,
        target_measure=sketch.source_measure,
        levels=tuple(levels),
        base_target=whole_space(sketch.source_measure),
        corr=sketch.corr.swapped() if sketch.corr else None,
        tracked=tracked,
        topological_only=sketch.topological_only,
    )


def compose_sketches(s1: HomeoSketch, s2: HomeoSketch, depth_cap: int = 24) -> HomeoSketch:
    """Tower for (limit of s2) after (limit of s1), built exactly.

    Level n refines s1 until each image sits inside a single level-n
    source element of s2 and decomposes exactly into s2 source elements
    of some deeper level, whose images then assemble the composite image.
    """
    if s1.kind != "isomorphism" or s2.kind != "isomorphism":
        raise IncompatibleSketches("composition needs isomorphism sketches")
    if s1.target_measure != s2.source_measure:
        raise IncompatibleSketches("middle spaces differ")

    source_index = {}  # s2 level -> word -> source element position

    def locate(level_no: int, piece: ClopenSet) -> Optional[int]:
        """Position of the s2 source element containing `piece`, if any."""
        index = source_index.get(level_no)
        lvl = s2.level(level_no)
        if index is None:
            index = {}
            for j, c in enumerate(lvl.source):
                for u in c.words:
                    index[u] = j
            source_index[level_no] = index
        w = piece.words[0]
        for k in range(len(w) + 1):
            j = index.get(w[:k])
            if j is not None:
                return j if clopen_subset(piece, lvl.source[j]) else None
        return None

    exact_index = {}  # s2 level -> words tuple -> source element position

    def exact_cover(piece: ClopenSet, start_level: int):
        """s2 level and element positions whose sources tile `piece`."""
        for l in range(start_level, s2.depth + 1):
            lvl = s2.level(l)
            index = exact_index.get(l)
            if index is None:
                index = {c.words: j for j, c in enumerate(lvl.source)}
                exact_index[l] = index
            hit = index.get(piece.words)
            if hit is not None:
                return l, [hit]
            picks = [
                j
                for j, c in enumerate(lvl.source)
                if clopen_subset(c, piece)
            ]
            if picks:
                union = lvl.source[picks[0]]
                for j in picks[1:]:
                    union = clopen_union(union, lvl.source[j])
                if union.words == piece.words:
                    return l, picks
        raise IncompatibleSketches(
            f"no exact cover of {piece!r} within the stored levels"
        )

    n_max = min(s1.depth, s2.depth)
    levels = []
    l_prev = 0
    prev_index_of = {0: 0}
    for n in range(1, n_max + 1):
        l = max(n, l_prev if l_prev else n)
        while True:
            if l > min(s1.depth, depth_cap):
                raise IncompatibleSketches(
                    f"refinement for level {n} exceeds the cap"
                )
            lvl1 = s1.level(l)
            ok = True
            for i in range(len(lvl1.source)):
                image = lvl1.target[lvl1.xi[i]]
                if locate(n, image) is None:
                    ok = False
                    break
            if ok:
                break
            l += 1
        lvl1 = s1.level(l)
        source = lvl1.source
        targets = []
        for i in range(len(source)):
            image = lvl1.target[lvl1.xi[i]]
            lev, picks = exact_cover(image, n)
            lvl2 = s2.level(lev)
            combined = lvl2.target[lvl2.xi[picks[0]]]
            for j in picks[1:]:
                combined = clopen_union(combined, lvl2.target[lvl2.xi[j]])
            targets.append(combined)
        parent_src = []
        for i in range(len(source)):
            p = i
            for back in range(l, l_prev, -1):
                p = s1.level(back).parent_src[p]
            parent_src.append(prev_index_of[p] if l_prev else 0)
        levels.append(
            SketchLevel(
                index=n,
                source=tuple(source),
                target=tuple(targets),
                xi=tuple(range(len(source))),
                parent_src=tuple(parent_src),
                parent_tgt=tuple(parent_src),
            )
        )
        prev_index_of = {i: i for i in range(len(source))}
        l_prev = l
    return HomeoSketch(
        kind="isomorphism",
        source_measure=s1.source_measure,
        target_measure=s2.target_measure,
        levels=tuple(levels),
        base_target=whole_space(s2.target_measure),
    )


def distance_bound(s1: HomeoSketch, s2: HomeoSketch, n: int) -> Fraction:
    """Sound upper bound on sup d(f, g) + sup d(f^-1, g^-1) from level n.

    Structurally identical sketches denote the same deterministic
    construction, hence the same limit map, and give an exact 0.
    """
    if s1.kind != "isomorphism" or s2.kind != "isomorphism":
        raise NotInvertible("distance bound needs isomorphism sketches")
    if sketches_equal(s1, s2):
        return Fraction(0)

    def one_sided(a: HomeoSketch, b: HomeoSketch) -> Fraction:
        la, lb = a.level(n), b.level(n)
        worst = ZERO
        for i, c1 in enumerate(la.source):
            p1 = _image_prefix(la.target[la.xi[i]])
            for j, c2 in enumerate(lb.source):
                if not _intersects(c1, c2):
                    continue
                p2 = _image_prefix(lb.target[lb.xi[j]])
                agreement = common_prefix_len(p1, p2)
                worst = max(worst, Fraction(1, 2 ** agreement))
        return worst

    forward = one_sided(s1, s2)
    backward = one_sided(invert_sketch(s1), invert_sketch(s2))
    return forward + backward


def _intersects(a: ClopenSet, b: ClopenSet) -> bool:
    for u in a.words:
        for v in b.words:
            if is_prefix(u, v) or is_prefix(v, u):
                return True
    return False


# ---------------------------------------------------------------------------
# stock sketches and transported trees


def _cylinder_level(m: MeasureTree, n: int, image_word) -> SketchLevel:
    words = m.words_at(n + 1)
    if n == 1:
        parent_index = {w: 0 for w in m.words_at(1)}
    else:
        parent_index = {w: k for k, w in enumerate(m.words_at(n))}
    source = tuple(clopen(m, [w]) for w in words)
    images = [image_word(w) for w in words]
    target = tuple(clopen(m, [v]) for v in images)
    # targets sit in source order, so a digit-wise image map makes the
    # target parent the image of the source parent at the same position
    parent_src = tuple(parent_index[w[:-1]] for w in words)
    return SketchLevel(
        index=n,
        source=source,
        target=target,
        xi=tuple(range(len(words))),
        parent_src=parent_src,
        parent_tgt=parent_src,
    )


def identity_sketch(m: MeasureTree, levels: int) -> HomeoSketch:
    built = tuple(
        _cylinder_level(m, n, lambda w: w) for n in range(1, levels + 1)
    )
    return HomeoSketch(
        kind="isomorphism",
        source_measure=m,
        target_measure=m,
        levels=built,
        base_target=whole_space(m),
    )


def root_swap_sketch(m: MeasureTree, levels: int) -> HomeoSketch:
    """Exchanges the first two root branches; needs their masses equal."""

    def swap(w):
        if w and w[0] in (0, 1):
            return (1 - w[0],) + w[1:]
        return w

    built = tuple(
        _cylinder_level(m, n, swap) for n in range(1, levels + 1)
    )
    return HomeoSketch(
        kind="isomorphism",
        source_measure=m,
        target_measure=m,
        levels=built,
        base_target=whole_space(m),
    )


def mirror_sketch(m: MeasureTree, levels: int) -> HomeoSketch:
    """Digit reversal i -> arity-1-i at every node; needs symmetric ratios."""

    def flip(w):
        out = ()
        for d in w:
            out = out + (m.arity(out) - 1 - d,)
        return out

    built = tuple(
        _cylinder_level(m, n, flip) for n in range(1, levels + 1)
    )
    return HomeoSketch(
        kind="isomorphism",
        source_measure=m,
        target_measure=m,
        levels=built,
        base_target=whole_space(m),
    )


class TransportedTree(ClosedTree):
    """Image of a closed tree under an isomorphism sketch.

    Membership and labels are exact while the queried depth stays within
    the sketch's resolved mesh; beyond it the sketch cannot separate the
    image from its complement and NeedMorePrecision is raised.
    """

    def __init__(self, base: ClosedTree, sketch: HomeoSketch):
        if sketch.kind != "isomorphism":
            raise NotInvertible("transport needs an isomorphism sketch")
        super().__init__(
            sketch.target_measure,
            base.nowhere_dense,
            None,
        )
        self.base = base
        self.sketch = sketch
        deepest = sketch.levels[-1]
        self._pieces = []
        for i, c in enumerate(deepest.source):
            image = deepest.target[deepest.xi[i]]
            if any(base.is_member(w) for w in c.words):
                self._pieces.append((c, image))
        self.resolution = min(
            common_prefix_length(image) for _, image in self._pieces
        ) if self._pieces else 0

    def is_member(self, w):
        if len(w) > self.resolution:
            raise NeedMorePrecision(
                f"transported membership at depth {len(w)} exceeds "
                f"resolution {self.resolution}"
            )
        for _, image in self._pieces:
            prefix = _image_prefix(image)
            if is_prefix(w, prefix) or is_prefix(prefix, w):
                return True
        return False

    def _children(self, w):
        kids = []
        for i in range(self.space.arity(w)):
            if self.is_member(w + (i,)):
                kids.append(i)
        return tuple(kids)

    def _label(self, w):
        # every image shares a prefix of length >= resolution >= len(w),
        # so pieces never straddle cyl(w): sum those falling inside
        total = ZERO
        for src, image in self._pieces:
            if is_prefix(w, _image_prefix(image)):
                total += restrict_label(self.base, src)
        return total
