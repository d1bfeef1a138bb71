"""Closed subsets of the space as self-extending labeled subtrees.

A closed set is the set of branches through a prefix-closed member tree
with no dead ends.  Each member node carries an exact rational label, the
mass of the set inside that node's cylinder, so labels are independent
data satisfying label(v) = sum of the children's labels and bounded by
the ambient node weight.  Trees extend themselves to any depth through
their construction rule, so the back-and-forth inductions can refine
indefinitely.

Nowhere-density bookkeeping: a constant witness depth k (every member
node has a non-member descendant within k levels) is only possible for
null sets - any set keeping it has mass at most prod(1 - c^k) -> 0 - so
positive-mass carved trees instead carry a certified flag and answer gap
queries from their construction schedule, and validation reports the
witness observed within its horizon.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

from .errors import (
    ContextMismatch,
    DeltaOutOfRange,
    InvalidTree,
    NotMeasurePreserving,
    NullTree,
)
from .space import (
    ClopenSet,
    MeasureTree,
    ZERO,
    clopen_measure,
    format_word,
    is_prefix,
)


class ClosedTree:
    """Base class; subclasses define `_children` and `_label` on members."""

    def __init__(self, space: MeasureTree, nowhere_dense: bool = False,
                 nd_witness_depth: Optional[int] = None):
        self.space = space
        self.nowhere_dense = nowhere_dense
        self.nd_witness_depth = nd_witness_depth
        self._member_cache = {(): True}
        self._children_cache = {}
        self._levels = [[()]]

    # subclass hooks, called only on member words
    def _children(self, w) -> tuple:
        raise NotImplementedError

    def _label(self, w) -> Fraction:
        raise NotImplementedError

    # -- membership ------------------------------------------------------

    def is_member(self, w) -> bool:
        cached = self._member_cache.get(w)
        if cached is not None:
            return cached
        if not w:
            return True
        parent_ok = self.is_member(w[:-1])
        ok = parent_ok and w[-1] in self.children(w[:-1])
        self._member_cache[w] = ok
        return ok

    def children(self, w) -> tuple:
        got = self._children_cache.get(w)
        if got is None:
            got = tuple(sorted(self._children(w)))
            self._children_cache[w] = got
        return got

    def label(self, w) -> Fraction:
        if not self.is_member(w):
            return ZERO
        return self._label(w)

    def members_at(self, depth: int) -> list:
        """All member words of the given length, lexicographically."""
        while len(self._levels) <= depth:
            prev = self._levels[-1]
            self._levels.append(
                [w + (i,) for w in prev for i in self.children(w)]
            )
        return self._levels[depth]

    # -- derived quantities -------------------------------------------------

    @property
    def limit_measure(self) -> Fraction:
        return self.label(())

    def is_null(self) -> bool:
        return self.label(()) == 0

    def truncation_measure(self, depth: int) -> Fraction:
        return sum((self.space.weight(w) for w in self.members_at(depth)), ZERO)

    def find_gap(self, w, budget: int) -> Optional[tuple]:
        """Shallowest (then lexicographically first) non-member descendant
        of `w` within `budget` levels, or None."""
        if not self.is_member(w):
            return w
        frontier = [w]
        for _ in range(budget):
            nxt = []
            for u in frontier:
                kept = self.children(u)
                for i in range(self.space.arity(u)):
                    if i not in kept:
                        return u + (i,)
                    nxt.append(u + (i,))
            frontier = nxt
        return None

    def meets(self, region: ClopenSet) -> bool:
        return any(self.is_member(w) for w in region.words)

    def __repr__(self):
        return f"{type(self).__name__}(mass={self.label(())})"


def restrict_label(tree: ClosedTree, region: ClopenSet) -> Fraction:
    """Exact mass of (tree intersect region): labels summed over the
    antichain, zero on non-member words."""
    return sum((tree.label(w) for w in region.words), ZERO)


def covers_words(tree: ClosedTree, region: ClopenSet) -> bool:
    """True when every word of the clopen set is a member path."""
    return all(tree.is_member(w) for w in region.words)


def members_in(tree: ClosedTree, region: ClopenSet, depth: int) -> list:
    return [
        w
        for w in tree.members_at(depth)
        if any(is_prefix(v, w) for v in region.words)
    ]


def same_members(a: ClosedTree, b: ClosedTree, depth: int) -> bool:
    for d in range(depth + 1):
        if a.members_at(d) != b.members_at(d):
            return False
        for w in a.members_at(d):
            if a.label(w) != b.label(w):
                return False
    return True


# ---------------------------------------------------------------------------
# concrete trees


class SingletonTree(ClosedTree):
    """One branch following a repeating digit pattern; all labels zero."""

    def __init__(self, space: MeasureTree, pattern=(0,)):
        super().__init__(space, nowhere_dense=True, nd_witness_depth=1)
        self.pattern = tuple(pattern)
        for i, d in enumerate(self.pattern):
            probe = self.branch_word(i)
            space.check_word(probe + (d,))

    def branch_word(self, depth: int) -> tuple:
        return tuple(self.pattern[i % len(self.pattern)] for i in range(depth))

    def _children(self, w):
        return (self.pattern[len(w) % len(self.pattern)],)

    def _label(self, w):
        return ZERO


class FullTree(ClosedTree):
    """The whole space as a closed set; labels equal node weights."""

    def __init__(self, space: MeasureTree):
        super().__init__(space, nowhere_dense=False)

    def _children(self, w):
        return tuple(range(self.space.arity(w)))

    def _label(self, w):
        return self.space.weight(w)


class TableTree(ClosedTree):
    """Explicit members and labels to a depth, plus an extension rule.

    extension "full": keep whole subtrees below the frontier, labels
    splitting along the ambient ratios.  extension "branch-min": continue
    each frontier node as its minimal-index child chain (labels ride
    along, so only zero-label frontiers stay valid at depth).
    """

    def __init__(self, space, nodes, depth, extension="branch-min",
                 nowhere_dense=False, nd_witness_depth=None):
        super().__init__(space, nowhere_dense, nd_witness_depth)
        self.nodes = {tuple(w): Fraction(v) for w, v in dict(nodes).items()}
        self.depth = depth
        if extension not in ("full", "branch-min"):
            raise InvalidTree("extension", (), f"unknown rule {extension!r}")
        self.extension = extension
        if () not in self.nodes:
            raise InvalidTree("root", (), "table must include the root")

    def _children(self, w):
        if len(w) < self.depth:
            kids = tuple(
                i
                for i in range(self.space.arity(w))
                if w + (i,) in self.nodes
            )
            if kids:
                return kids
            raise InvalidTree("dead-end", w, "member without listed children")
        if self.extension == "full":
            return tuple(range(self.space.arity(w)))
        return (0,)

    def _label(self, w):
        if len(w) <= self.depth:
            got = self.nodes.get(w)
            if got is None:
                raise InvalidTree("label", w, "member without listed label")
            return got
        anchor = w[: self.depth]
        base = self.nodes.get(anchor, ZERO)
        if self.extension == "full":
            if base == 0:
                return ZERO
            return base * self.space.weight(w) / self.space.weight(anchor)
        return base


class CarvedTree(ClosedTree):
    """Fat nowhere-dense subtree of a clopen region with exact labels.

    Carries a deficit down the tree: each stage root owes an exact amount
    of mass to remove, excises one whole sub-branch (descending along the
    last child until its weight drops to half the deficit) and passes the
    remaining deficit to the surviving frontier in proportion to weight.
    The limit mass is exactly mu(region) - delta/2 and every label stays
    strictly positive.
    """

    def __init__(self, space: MeasureTree, region: ClopenSet, delta):
        super().__init__(space, nowhere_dense=True, nd_witness_depth=None)
        self.region = region
        self.delta = Fraction(delta)
        total = clopen_measure(space, region)
        if not 0 < self.delta <= total:
            raise DeltaOutOfRange(f"delta {self.delta} outside (0, {total}]")
        self.region_mass = total
        # stage root -> (deficit, gap word); deficits stay in (0, weight)
        self._stages = {}
        for r in region.words:
            self._stages[r] = (self.delta / 2 * space.weight(r) / total, None)

    # -- stage machinery ----------------------------------------------------

    def _stage(self, root):
        deficit, gap = self._stages[root]
        if gap is None:
            gap = root
            half = deficit / 2
            while self.space.weight(gap) > half:
                gap = gap + (self.space.arity(gap) - 1,)
            self._stages[root] = (deficit, gap)
        return deficit, gap

    def _locate(self, w):
        """Stage block of word w below a region root.

        Returns (root, deficit, gap); w lies beyond the block only when
        it extends the gap, which callers detect via is_prefix(gap, w).
        """
        root = None
        for r in self.region.words:
            if is_prefix(r, w):
                root = r
                break
        while True:
            deficit, gap = self._stage(root)
            if len(w) <= len(gap) or is_prefix(gap, w):
                return root, deficit, gap
            nxt = w[: len(gap)]
            if nxt not in self._stages:
                rest = deficit - self.space.weight(gap)
                kept = self.space.weight(root) - self.space.weight(gap)
                self._stages[nxt] = (
                    rest * self.space.weight(nxt) / kept,
                    None,
                )
            root = nxt

    def _above_targets(self, w):
        return [r for r in self.region.words if is_prefix(w, r) and r != w]

    def _children(self, w):
        above = self._above_targets(w)
        if above:
            return tuple(sorted({r[len(w)] for r in above}))
        root, deficit, gap = self._locate(w)
        return tuple(
            i for i in range(self.space.arity(w)) if w + (i,) != gap
        )

    def _label(self, w):
        above = self._above_targets(w)
        if above:
            return sum((self._label(r) for r in above), ZERO)
        root, deficit, gap = self._locate(w)
        gap_mass = self.space.weight(gap)
        under = gap_mass if is_prefix(w, gap) else ZERO
        kept_here = self.space.weight(w) - under
        rest = deficit - gap_mass
        kept_total = self.space.weight(root) - gap_mass
        return kept_here * (1 - rest / kept_total)

    def is_member(self, w) -> bool:
        cached = self._member_cache.get(w)
        if cached is not None:
            return cached
        ok = True
        if w:
            anchor = None
            for r in self.region.words:
                if is_prefix(r, w) or is_prefix(w, r):
                    anchor = r
                    break
            if anchor is None:
                ok = False
            elif is_prefix(w, anchor):
                ok = True
            else:
                root, deficit, gap = self._locate(w)
                ok = not is_prefix(gap, w)
        self._member_cache[w] = ok
        return ok


class ThickenedTree(ClosedTree):
    """Superset of a base tree in which no branch stays isolated.

    Wherever the base runs as a bare chain for `lookahead` levels, the
    minimal unused sibling is attached and continues as a null fan
    branching at doubling intervals: perfect, nowhere dense, mass-free
    and with member counts growing only linearly in depth, so finite
    truncations thin out fast.  Labels of base members are untouched.
    """

    def __init__(self, base: ClosedTree, lookahead: int = 4):
        super().__init__(base.space, base.nowhere_dense, None)
        self.base = base
        self.lookahead = lookahead
        self._fans = set()

    def _needs_fan(self, w) -> bool:
        v = w
        for _ in range(self.lookahead):
            kids = self.base.children(v)
            if len(kids) >= 2:
                return False
            v = v + (kids[0],)
        return True

    def _in_fan(self, w):
        """Fan root r such that w sits in the fan attached at r, or None."""
        for d in range(1, len(w) + 1):
            if w[:d] in self._fans:
                return w[:d]
        return None

    def _fan_children(self, w, fan_root):
        rel = len(w) - len(fan_root)
        if (rel + 1) & rel == 0:  # branch at relative depths 2**j - 1
            return (0, 1)
        return (0,)

    def _children(self, w):
        fan_root = self._in_fan(w)
        if fan_root is not None:
            return self._fan_children(w, fan_root)
        kids = self.base.children(w)
        if len(kids) == 1 and self._needs_fan(w):
            extra = next(
                i for i in range(self.space.arity(w)) if i not in kids
            )
            self._fans.add(w + (extra,))
            return tuple(sorted(kids + (extra,)))
        return kids

    def _label(self, w):
        if self._in_fan(w) is not None:
            return ZERO
        return self.base.label(w)

    def is_member(self, w) -> bool:
        cached = self._member_cache.get(w)
        if cached is not None:
            return cached
        if not w:
            return True
        ok = self.is_member(w[:-1]) and w[-1] in self.children(w[:-1])
        self._member_cache[w] = ok
        return ok


class PrunedTree(ClosedTree):
    """Base tree with every zero-label member subtree removed."""

    def __init__(self, base: ClosedTree):
        super().__init__(base.space, base.nowhere_dense, base.nd_witness_depth)
        self.base = base

    def _children(self, w):
        kids = tuple(
            i for i in self.base.children(w) if self.base.label(w + (i,)) > 0
        )
        if not kids:
            raise InvalidTree("labels", w, "positive label with all-zero children")
        return kids

    def _label(self, w):
        return self.base.label(w)


class UnionTree(ClosedTree):
    """Member-wise union; labels add, which is exact when the parts carry
    mass on disjoint sets (shared member paths are fine)."""

    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise NullTree("union of no trees")
        witnesses = [p.nd_witness_depth for p in parts]
        witness = max(witnesses) if all(w is not None for w in witnesses) else None
        super().__init__(
            parts[0].space,
            all(p.nowhere_dense for p in parts),
            witness,
        )
        for p in parts[1:]:
            if not p.space.same_context(parts[0].space):
                raise ContextMismatch("union parts over different contexts")
        self.parts = parts

    def _children(self, w):
        kids = set()
        for p in self.parts:
            if p.is_member(w):
                kids.update(p.children(w))
        return tuple(sorted(kids))

    def _label(self, w):
        return sum((p.label(w) for p in self.parts), ZERO)

    def is_member(self, w):
        return any(p.is_member(w) for p in self.parts)


class RestrictedTree(ClosedTree):
    """Intersection of a base tree with a clopen region."""

    def __init__(self, base: ClosedTree, region: ClopenSet):
        super().__init__(base.space, base.nowhere_dense, base.nd_witness_depth)
        self.base = base
        self.region = region

    def _relation(self, w):
        for r in self.region.words:
            if is_prefix(r, w):
                return "inside", None
        above = [r for r in self.region.words if is_prefix(w, r) and r != w]
        if above:
            return "above", above
        return "outside", None

    def is_member(self, w):
        rel, above = self._relation(w)
        if rel == "inside":
            return self.base.is_member(w)
        if rel == "above":
            return any(self.base.is_member(r) for r in above)
        return False

    def _children(self, w):
        rel, above = self._relation(w)
        if rel == "inside":
            return self.base.children(w)
        kids = set()
        for r in above:
            if self.base.is_member(r):
                kids.add(r[len(w)])
        return tuple(sorted(kids))

    def _label(self, w):
        rel, above = self._relation(w)
        if rel == "inside":
            return self.base.label(w)
        return sum((self.base.label(r) for r in above), ZERO)


class MirroredTree(ClosedTree):
    """Digit-reversal image (index i -> arity-1-i at every node); labels
    carry over verbatim, so the ambient measure must be symmetric."""

    def __init__(self, base: ClosedTree):
        super().__init__(base.space, base.nowhere_dense, base.nd_witness_depth)
        self.base = base

    def _flip(self, w):
        out = []
        for i, d in enumerate(w):
            out.append(self.space.arity(tuple(out)) - 1 - d)
        return tuple(out)

    def _children(self, w):
        flipped = self._flip(w)
        arity = self.space.arity(w)
        return tuple(
            sorted(arity - 1 - i for i in self.base.children(flipped))
        )

    def _label(self, w):
        return self.base.label(self._flip(w))

    def is_member(self, w):
        return self.base.is_member(self._flip(w))


def restrict_tree(base: ClosedTree, region: ClopenSet) -> Optional[ClosedTree]:
    got = RestrictedTree(base, region)
    return got if got.is_member(()) and any(
        got.is_member(w) for w in region.words
    ) else None


# ---------------------------------------------------------------------------
# operations


@dataclass(frozen=True)
class CertificateReport:
    consistent: bool
    nowhere_dense_at: Optional[int]
    null: bool
    perfect: bool
    truncation_measure: tuple


def validate_closed_tree(tree: ClosedTree, m: MeasureTree, depth: int) -> CertificateReport:
    """Check every tree invariant down to `depth`.

    Raises InvalidTree (with the violated rule and witness node) on label
    inconsistency, dead ends or digit overflow; otherwise reports nullity,
    perfection and the nowhere-density witness observable in the horizon.
    """
    if not tree.space.same_context(m):
        raise ContextMismatch("tree context differs from the measure context")
    truncation = []
    for d in range(depth + 1):
        level = tree.members_at(d)
        if not level:
            raise InvalidTree("nonempty", (), "no members at depth %d" % d)
        truncation.append(sum((m.weight(w) for w in level), ZERO))
        for w in level:
            arity = m.arity(w)
            kids = tree.children(w) if d < depth else None
            label = tree.label(w)
            if not 0 <= label <= m.weight(w):
                raise InvalidTree(
                    "label-bounds", w, f"label {label} vs weight {m.weight(w)}"
                )
            if kids is not None:
                if not kids:
                    raise InvalidTree("dead-end", w, "member without children")
                if any(not 0 <= i < arity for i in kids):
                    raise InvalidTree("digit", w, "child index exceeds arity")
                child_sum = sum((tree.label(w + (i,)) for i in kids), ZERO)
                if child_sum != label:
                    raise InvalidTree(
                        "label-sum", w, f"{label} != children total {child_sum}"
                    )

    gaps = {}
    for d in range(depth):
        for w in tree.members_at(d):
            gaps[w] = tree.find_gap(w, depth - d)
    nowhere_dense_at = None
    for k in range(1, depth + 1):
        ok = True
        for w, g in gaps.items():
            if len(w) + k <= depth:
                if g is None or len(g) - len(w) > k:
                    ok = False
                    break
        if ok:
            nowhere_dense_at = k
            break

    # branching may sit just past the horizon; the rule extends the tree,
    # so give every node a window of `depth` levels to show a branch
    def branches_within(w, window):
        v = w
        for _ in range(window):
            kids = tree.children(v)
            if len(kids) >= 2:
                return True
            v = v + (kids[0],)
        return len(tree.children(v)) >= 2

    perfect = True
    for d in range(depth + 1):
        if not all(branches_within(w, depth) for w in tree.members_at(d)):
            perfect = False
            break

    return CertificateReport(
        consistent=True,
        nowhere_dense_at=nowhere_dense_at,
        null=tree.label(()) == 0,
        perfect=perfect,
        truncation_measure=tuple(truncation),
    )


def thicken_perfect(tree: ClosedTree, lookahead: int = 4) -> ClosedTree:
    """Perfect superset with the same labels (grown parts are mass-free)."""
    return ThickenedTree(tree, lookahead)


def carve_nowhere_dense(m: MeasureTree, region: ClopenSet, delta) -> CarvedTree:
    """Nowhere-dense closed subtree of the region keeping all but delta/2
    of its mass, with exact per-node labels."""
    return CarvedTree(m, region, delta)


def prune_to_support(tree: ClosedTree) -> ClosedTree:
    """Drop every zero-label member subtree; total label unchanged."""
    if tree.label(()) == 0:
        raise NullTree("cannot prune a null tree to its support")
    return PrunedTree(tree)


# ---------------------------------------------------------------------------
# correspondences


class Correspondence:
    """Depth-aligned label-preserving bijection between two member trees.

    Explicit pairs are given per depth up to a declared depth; below it
    the map extends by pairing children positionally, which requires
    matching child counts: extension "ordered" pairs k-th smallest with
    k-th smallest, "reversed" with k-th largest (digit-mirror maps).
    """

    def __init__(self, source: ClosedTree, target: ClosedTree, pairs_by_depth,
                 extension: str = "ordered"):
        self.source = source
        self.target = target
        if extension not in ("ordered", "reversed"):
            raise NotMeasurePreserving(f"unknown extension rule {extension!r}")
        self.extension = extension
        self.pairs_by_depth = {
            int(d): {tuple(a): tuple(b) for a, b in dict(ps).items()}
            for d, ps in dict(pairs_by_depth).items()
        }
        self.declared_depth = max(self.pairs_by_depth, default=0)
        self._fwd = {(): ()}
        self._bwd = {(): ()}
        for d in sorted(self.pairs_by_depth):
            for a, b in self.pairs_by_depth[d].items():
                self._fwd[a] = b
                self._bwd[b] = a

    @classmethod
    def identity(cls, tree: ClosedTree, depth: int = 1):
        pairs = {d: {w: w for w in tree.members_at(d)} for d in range(1, depth + 1)}
        return cls(tree, tree, pairs)

    def map_node(self, w):
        got = self._fwd.get(w)
        if got is not None:
            return got
        parent_image = self.map_node(w[:-1])
        src_kids = self.source.children(w[:-1])
        tgt_kids = self.target.children(parent_image)
        if len(src_kids) != len(tgt_kids):
            raise NotMeasurePreserving(
                f"child counts differ under {format_word(w[:-1])}: "
                f"{len(src_kids)} vs {len(tgt_kids)}"
            )
        pos = src_kids.index(w[-1])
        if self.extension == "reversed":
            pos = len(tgt_kids) - 1 - pos
        image = parent_image + (tgt_kids[pos],)
        self._fwd[w] = image
        self._bwd[image] = w
        return image

    def inverse_node(self, v):
        got = self._bwd.get(v)
        if got is not None:
            return got
        parent_source = self.inverse_node(v[:-1])
        src_kids = self.source.children(parent_source)
        tgt_kids = self.target.children(v[:-1])
        if len(src_kids) != len(tgt_kids):
            raise NotMeasurePreserving(
                f"child counts differ over {format_word(v[:-1])}"
            )
        pos = tgt_kids.index(v[-1])
        if self.extension == "reversed":
            pos = len(src_kids) - 1 - pos
        w = parent_source + (src_kids[pos],)
        self._fwd[w] = v
        self._bwd[v] = w
        return w

    def verify(self, depth: int, require_labels: bool = True):
        """Raise NotMeasurePreserving unless the pairing is a parent-
        commuting (label-preserving) bijection down to `depth`."""
        for d in range(1, depth + 1):
            sources = self.source.members_at(d)
            targets = self.target.members_at(d)
            if len(sources) != len(targets):
                raise NotMeasurePreserving(
                    f"member counts differ at depth {d}"
                )
            seen = set()
            for a in sources:
                b = self.map_node(a)
                if not self.target.is_member(b):
                    raise NotMeasurePreserving(
                        f"{format_word(a)} maps to non-member {format_word(b)}"
                    )
                if b in seen:
                    raise NotMeasurePreserving(
                        f"{format_word(b)} hit twice at depth {d}"
                    )
                seen.add(b)
                if self.map_node(a[:-1]) != b[:-1]:
                    raise NotMeasurePreserving(
                        f"parent map does not commute at {format_word(a)}"
                    )
                if require_labels and self.source.label(a) != self.target.label(b):
                    raise NotMeasurePreserving(
                        f"label mismatch at {format_word(a)}: "
                        f"{self.source.label(a)} vs {self.target.label(b)}"
                    )

    def swapped(self) -> "Correspondence":
        pairs = {
            d: {b: a for a, b in ps.items()}
            for d, ps in self.pairs_by_depth.items()
        }
        return Correspondence(self.target, self.source, pairs, self.extension)
