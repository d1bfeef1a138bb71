"""Tree model of Cantor space with exact rational measures.

A space is an infinite finitely-branching tree.  Nodes are addressed by
words (tuples of child indices); the branches through a node form a
cylinder.  A measure is given by a splitting rule that assigns every node
a vector of positive rationals summing to 1, so the mass of a node is the
product of the ratios along its address.  Every entry of every vector is
bounded by a fixed ratio_bound c < 1, which certifies that single points
carry no mass: weight(w) <= root_mass * c**len(w).

Clopen sets are finite unions of cylinders, held canonically as a sorted
antichain of words in which no complete sibling family appears.  The
metric is d(x, y) = 2**-(length of longest common prefix), independent of
arity, so diameters and meshes are decided syntactically.

All values are immutable and all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import (
    ContextMismatch,
    DepthTooLarge,
    EmptySet,
    InvalidWord,
    InvariantViolation,
)

Word = tuple  # tuple of non-negative ints; () addresses the whole space

ZERO = Fraction(0)
ONE = Fraction(1)

DEFAULT_LEAF_BUDGET = 1 << 14
DEFAULT_VALUE_BUDGET = 1 << 20


def word(digits: Union[str, Iterable[int]]) -> Word:
    """Build a word from "010"-style text, "0.1.10" dotted text, or ints."""
    if isinstance(digits, str):
        if digits == "":
            return ()
        if "." in digits:
            return tuple(int(part) for part in digits.split("."))
        return tuple(int(ch) for ch in digits)
    return tuple(int(d) for d in digits)


def format_word(w: Word) -> str:
    if any(d > 9 for d in w):
        return ".".join(str(d) for d in w)
    return "".join(str(d) for d in w)


def is_prefix(p: Word, w: Word) -> bool:
    return len(p) <= len(w) and w[: len(p)] == p


def common_prefix_len(a: Word, b: Word) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def _parse_fraction(text) -> Fraction:
    if isinstance(text, Fraction):
        return text
    if isinstance(text, int):
        return Fraction(text)
    try:
        return Fraction(str(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise InvariantViolation(f"bad rational {text!r}: {exc}") from None


def format_fraction(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


# ---------------------------------------------------------------------------
# splitting rules


class RatioRule:
    """Assigns every node its ratio vector.  Subclasses are immutable."""

    def ratios(self, w: Word) -> tuple:
        raise NotImplementedError

    def arity_signature(self):
        """Canonical description of the arity function, used for context
        equality between spaces that may carry different masses."""
        raise NotImplementedError

    def _all_vectors(self):
        raise NotImplementedError


class UniformRule(RatioRule):
    """Every node splits into `arity` children of equal ratio."""

    def __init__(self, arity: int):
        if arity < 2:
            raise InvariantViolation("arity must be >= 2")
        self.arity = arity
        self._vector = tuple([Fraction(1, arity)] * arity)

    def ratios(self, w):
        return self._vector

    def arity_signature(self):
        return ("const", self.arity)

    def _all_vectors(self):
        return [self._vector]

    def __repr__(self):
        return f"UniformRule({self.arity})"


class CycleRule(RatioRule):
    """Applies a list of ratio vectors by depth modulo the list length."""

    def __init__(self, vectors: Sequence[Sequence[Fraction]]):
        if not vectors:
            raise InvariantViolation("cycle needs at least one vector")
        self.vectors = tuple(tuple(Fraction(r) for r in v) for v in vectors)

    def ratios(self, w):
        return self.vectors[len(w) % len(self.vectors)]

    def arity_signature(self):
        lens = tuple(len(v) for v in self.vectors)
        if len(set(lens)) == 1:
            return ("const", lens[0])
        return ("cycle", lens)

    def _all_vectors(self):
        return list(self.vectors)

    def __repr__(self):
        return f"CycleRule({self.vectors!r})"


class TableRule(RatioRule):
    """Explicit word -> ratio-vector map with a default.

    An entry at word u governs every node having u as its longest matching
    key, so a single entry re-weights an entire subtree.
    """

    def __init__(self, default: Sequence[Fraction], mapping: Mapping[Word, Sequence[Fraction]] = ()):
        self.default = tuple(Fraction(r) for r in default)
        self.mapping = {tuple(k): tuple(Fraction(r) for r in v) for k, v in dict(mapping).items()}

    def ratios(self, w):
        best = None
        best_len = -1
        for key, vec in self.mapping.items():
            if len(key) > best_len and is_prefix(key, w):
                best, best_len = vec, len(key)
        return best if best is not None else self.default

    def arity_signature(self):
        entries = tuple(sorted((k, len(v)) for k, v in self.mapping.items()))
        if not entries or all(n == len(self.default) for _, n in entries):
            # drop entries that cannot change the arity function
            relevant = tuple((k, n) for k, n in entries if n != len(self.default))
            if not relevant:
                return ("const", len(self.default))
        return ("table", entries, len(self.default))

    def _all_vectors(self):
        return [self.default] + list(self.mapping.values())

    def __repr__(self):
        return f"TableRule(default={self.default!r}, mapping={self.mapping!r})"


# ---------------------------------------------------------------------------
# measures


class MeasureTree:
    """A measure presented as a weight-splitting rule on the tree.

    Doubles as the arity context for words, clopen sets and closed trees:
    two spaces share a context when their arity signatures agree, whatever
    their masses and ratios.
    """

    def __init__(self, root_mass, rule: RatioRule, ratio_bound):
        self.root_mass = _parse_fraction(root_mass)
        self.rule = rule
        self.ratio_bound = _parse_fraction(ratio_bound)
        self._weights = {(): self.root_mass}
        self._validate()

    def _validate(self):
        if self.root_mass <= 0:
            raise InvariantViolation("root_mass must be positive")
        if not (0 < self.ratio_bound < 1):
            raise InvariantViolation("ratio_bound must satisfy 0 < c < 1")
        for vec in self.rule._all_vectors():
            if len(vec) < 2:
                raise InvariantViolation("ratio vectors must have length >= 2")
            if any(r <= 0 for r in vec):
                raise InvariantViolation("ratios must be strictly positive")
            if sum(vec) != 1:
                raise InvariantViolation(f"ratios must sum to 1, got {sum(vec)}")
            if any(r > self.ratio_bound for r in vec):
                raise InvariantViolation(
                    f"ratio exceeds bound {self.ratio_bound}"
                )

    # -- context ---------------------------------------------------------

    @property
    def arity_signature(self):
        return self.rule.arity_signature()

    def same_context(self, other: "MeasureTree") -> bool:
        return self.arity_signature == other.arity_signature

    def arity(self, w: Word) -> int:
        return len(self.rule.ratios(w))

    def check_word(self, w: Word) -> Word:
        for i, d in enumerate(w):
            a = self.arity(w[:i])
            if not 0 <= d < a:
                raise InvalidWord(
                    f"digit {d} at position {i} of {format_word(w)} exceeds arity {a}"
                )
        return w

    def children(self, w: Word):
        return tuple(w + (i,) for i in range(self.arity(w)))

    # -- weights -----------------------------------------------------------

    def weight(self, w: Word) -> Fraction:
        got = self._weights.get(w)
        if got is not None:
            return got
        parent_weight = self.weight(w[:-1])
        ratios = self.rule.ratios(w[:-1])
        d = w[-1]
        if d >= len(ratios):
            raise InvalidWord(
                f"digit {d} exceeds arity {len(ratios)} at {format_word(w[:-1])}"
            )
        value = parent_weight * ratios[d]
        self._weights[w] = value
        return value

    def words_at(self, depth: int):
        """All node addresses at the given depth, lexicographically."""
        level = [()]
        for _ in range(depth):
            level = [w + (i,) for w in level for i in range(self.arity(w))]
        return level

    def __eq__(self, other):
        return (
            isinstance(other, MeasureTree)
            and self.root_mass == other.root_mass
            and self.ratio_bound == other.ratio_bound
            and repr(self.rule) == repr(other.rule)
        )

    def __hash__(self):
        return hash((self.root_mass, self.ratio_bound, repr(self.rule)))

    def __repr__(self):
        return (
            f"MeasureTree(root_mass={self.root_mass}, rule={self.rule!r}, "
            f"ratio_bound={self.ratio_bound})"
        )


def uniform_space(arity: int, root_mass=1, ratio_bound=None) -> MeasureTree:
    if ratio_bound is None:
        ratio_bound = Fraction(1, arity)
    return MeasureTree(root_mass, UniformRule(arity), ratio_bound)


# ---------------------------------------------------------------------------
# clopen sets


@dataclass(frozen=True)
class ClopenSet:
    """Canonical antichain of cylinder words over a context.

    Use :func:`clopen` to construct one; the constructor trusts its input.
    Equality is word-for-word equality of the canonical form, so two
    clopen sets are equal exactly when they denote the same set.
    """

    context: MeasureTree
    words: tuple

    def is_empty(self) -> bool:
        return not self.words

    def is_whole(self) -> bool:
        return self.words == ((),)

    def __iter__(self):
        return iter(self.words)

    def __repr__(self):
        inner = ",".join(format_word(w) for w in self.words)
        return f"{{{inner}}}"


def _canonical_words(context: MeasureTree, cylinders: Iterable[Word]) -> tuple:
    # drop cylinders nested inside others, then merge complete families
    # upward until none remain
    words = sorted(set(tuple(w) for w in cylinders))
    for w in words:
        context.check_word(w)
    pruned = []
    for w in words:
        if pruned and is_prefix(pruned[-1], w):
            continue
        pruned.append(w)
    words = pruned
    merged = True
    while merged:
        merged = False
        by_parent = {}
        for w in words:
            if w:
                by_parent.setdefault(w[:-1], []).append(w)
        out = []
        seen_parents = set()
        for w in words:
            if not w:
                out.append(w)
                continue
            parent = w[:-1]
            if parent in seen_parents:
                continue
            family = by_parent.get(parent, ())
            if len(family) == context.arity(parent):
                out.append(parent)
                seen_parents.add(parent)
                merged = True
            else:
                out.append(w)
        words = sorted(set(out))
    return tuple(words)


def clopen(context: MeasureTree, cylinders) -> ClopenSet:
    """Canonicalize a collection of cylinder words into a ClopenSet.

    Accepts words as strings or digit tuples; idempotent on canonical
    input.  Raises InvalidWord when a digit exceeds the node's arity.
    """
    cyls = [word(w) if isinstance(w, str) else tuple(w) for w in cylinders]
    return ClopenSet(context, _canonical_words(context, cyls))


def canonicalize(context: MeasureTree, cylinders) -> ClopenSet:
    return clopen(context, cylinders)


def whole_space(context: MeasureTree) -> ClopenSet:
    return ClopenSet(context, ((),))


def empty_set(context: MeasureTree) -> ClopenSet:
    return ClopenSet(context, ())


def _require_same_context(a: ClopenSet, b: ClopenSet):
    if a.context.arity_signature != b.context.arity_signature:
        raise ContextMismatch(
            f"{a.context.arity_signature} vs {b.context.arity_signature}"
        )


def clopen_union(a: ClopenSet, b: ClopenSet) -> ClopenSet:
    _require_same_context(a, b)
    return ClopenSet(a.context, _canonical_words(a.context, a.words + b.words))


def clopen_intersect(a: ClopenSet, b: ClopenSet) -> ClopenSet:
    _require_same_context(a, b)
    out = []
    for u in a.words:
        for v in b.words:
            if is_prefix(u, v):
                out.append(v)
            elif is_prefix(v, u):
                out.append(u)
    return ClopenSet(a.context, _canonical_words(a.context, out))


def _subtract_below(context: MeasureTree, u: Word, holes) -> list:
    """Cylinders forming cyl(u) minus the hole cylinders below u."""
    if any(is_prefix(v, u) for v in holes):
        return []
    below = [v for v in holes if is_prefix(u, v) and v != u]
    if not below:
        return [u]
    out = []
    for child in context.children(u):
        out.extend(_subtract_below(context, child, below))
    return out


def clopen_difference(a: ClopenSet, b: ClopenSet) -> ClopenSet:
    _require_same_context(a, b)
    out = []
    for u in a.words:
        out.extend(_subtract_below(a.context, u, b.words))
    return ClopenSet(a.context, _canonical_words(a.context, out))


def clopen_complement(a: ClopenSet) -> ClopenSet:
    return clopen_difference(whole_space(a.context), a)


def clopen_subset(a: ClopenSet, b: ClopenSet) -> bool:
    """Exact containment test.  Canonical antichains make this a prefix
    check: a covered cylinder always has an ancestor-or-self in the
    covering set."""
    _require_same_context(a, b)
    return all(any(is_prefix(v, u) for v in b.words) for u in a.words)


def clopen_disjoint(a: ClopenSet, b: ClopenSet) -> bool:
    _require_same_context(a, b)
    for u in a.words:
        for v in b.words:
            if is_prefix(u, v) or is_prefix(v, u):
                return False
    return True


def clopen_algebra(op: str, c1: ClopenSet, c2: Optional[ClopenSet] = None):
    """Dispatcher for {union|intersect|difference|complement|subset?}."""
    if op == "complement":
        if c2 is not None:
            raise ValueError("complement takes one operand")
        return clopen_complement(c1)
    if c2 is None:
        raise ValueError(f"{op} takes two operands")
    table = {
        "union": clopen_union,
        "intersect": clopen_intersect,
        "difference": clopen_difference,
        "subset?": clopen_subset,
    }
    if op not in table:
        raise ValueError(f"unknown clopen operation {op!r}")
    return table[op](c1, c2)


# ---------------------------------------------------------------------------
# measure of clopen sets, clopen values, diameter


def clopen_measure(m: MeasureTree, c: ClopenSet) -> Fraction:
    """Exact mass of a clopen set: sum of node weights over the antichain."""
    for w in c.words:
        m.check_word(w)
    return sum((m.weight(w) for w in c.words), ZERO)


def leaves_at(context: MeasureTree, c: ClopenSet, depth: int) -> list:
    """Depth-`depth` cylinder decomposition of a clopen set.

    Every word of c must have length <= depth; each is expanded to all of
    its depth-`depth` descendants, in lexicographic order.
    """
    out = []
    for w in c.words:
        if len(w) > depth:
            raise ValueError(
                f"word {format_word(w)} deeper than requested depth {depth}"
            )
        level = [w]
        for _ in range(depth - len(w)):
            level = [u + (i,) for u in level for i in range(context.arity(u))]
        out.extend(level)
    return sorted(out)


def clopen_values(
    m: MeasureTree,
    depth: int,
    leaf_budget: int = DEFAULT_LEAF_BUDGET,
    value_budget: int = DEFAULT_VALUE_BUDGET,
):
    """All masses of clopen sets resolvable at the given depth.

    These are the subset sums of the depth-`depth` node weights, computed
    by a deduplicating sweep over the sorted leaves.  Always contains 0
    and the root mass and is closed under a -> root_mass - a.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    leaves = [()]
    for _ in range(depth):
        leaves = [w + (i,) for w in leaves for i in range(m.arity(w))]
        if len(leaves) > leaf_budget:
            raise DepthTooLarge(
                f"{len(leaves)} leaves at depth {depth} exceed budget {leaf_budget}"
            )
    sums = {ZERO}
    for w in leaves:
        weight = m.weight(w)
        sums |= {s + weight for s in sums}
        if len(sums) > value_budget:
            raise DepthTooLarge(
                f"value count exceeds budget {value_budget} at depth {depth}"
            )
    return sorted(sums)


def diameter(c: ClopenSet) -> Fraction:
    """2**-(longest common prefix of all words); EmptySet on no words."""
    if c.is_empty():
        raise EmptySet("diameter of the empty set")
    first = c.words[0]
    prefix = len(first)
    for w in c.words[1:]:
        prefix = min(prefix, common_prefix_len(first, w))
    return Fraction(1, 2 ** prefix)


def common_prefix_length(c: ClopenSet) -> int:
    if c.is_empty():
        raise EmptySet("common prefix of the empty set")
    first = c.words[0]
    prefix = len(first)
    for w in c.words[1:]:
        prefix = min(prefix, common_prefix_len(first, w))
    return prefix
