"""Finite-resolution goodness checking and exact value realization.

A measure is good when any clopen value below the mass of a clopen set V
is exactly realized by some clopen subset of V.  At finite resolution the
quantifier over clopen pairs collapses to a value-versus-cylinder sweep:
every value resolvable at the checked depth must be realizable inside
every cylinder that can hold it, searching refinements down to a depth
cap.  A pass is evidence at the checked depth, not a proof.

Realization is exact subset-sum over cylinder weights.  Two independent
routes are kept deliberately separate: `realize_value_in` runs a
lexicographic-first completable-prefix search per depth, while
`subset_sum_oracle` sweeps reachable sums and returns a smallest witness,
so each can confirm the other.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .errors import BudgetExceeded, MeasureMismatch, ValueNotRealizable
from .space import (
    ClopenSet,
    MeasureTree,
    ZERO,
    clopen,
    clopen_difference,
    clopen_measure,
    format_word,
    is_prefix,
    leaves_at,
)

DEFAULT_ORACLE_BUDGET = 1 << 22
DEFAULT_DEPTH_CAP = 8


@dataclass(frozen=True)
class GoodnessReport:
    verdict: str  # "pass" | "fail"
    checked_depth: int
    search_depth: int
    counterexample: Optional[tuple] = None  # (alpha, cylinder ClopenSet)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def subset_sum_oracle(
    weights: Sequence[Fraction],
    target: Fraction,
    budget: int = DEFAULT_ORACLE_BUDGET,
) -> Optional[tuple]:
    """Exhaustive subset-sum decision with a canonical witness.

    Sweeps the distinct reachable sums <= target, so the decision is
    complete whatever the weight count; `budget` caps the number of
    (sum, weight) extension steps.  Returns the witness that a plain
    size-then-index enumeration of subsets would find first, or None.
    """
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be strictly positive")
    if target == 0:
        return ()
    if target < 0 or not _sum_feasible(weights, target):
        return None
    # best[s] = (len, indices) minimal under (size, lexicographic) order
    best = {ZERO: ()}
    steps = 0
    for i, w in enumerate(weights):
        additions = {}
        for s, witness in best.items():
            t = s + w
            if t > target:
                continue
            steps += 1
            if steps > budget:
                raise BudgetExceeded(
                    f"subset-sum sweep exceeded budget {budget}"
                )
            candidate = witness + (i,)
            incumbent = best.get(t)
            if incumbent is not None and (len(incumbent), incumbent) <= (
                len(candidate),
                candidate,
            ):
                continue
            queued = additions.get(t)
            if queued is None or (len(candidate), candidate) < (len(queued), queued):
                additions[t] = candidate
        for t, candidate in additions.items():
            incumbent = best.get(t)
            if incumbent is None or (len(candidate), candidate) < (
                len(incumbent),
                incumbent,
            ):
                best[t] = candidate
    return best.get(target)


def _suffix_reachable(weights, target, budget):
    """reach[i] = set of sums producible from weights[i:], capped at target."""
    n = len(weights)
    reach = [None] * (n + 1)
    reach[n] = {ZERO}
    steps = 0
    for i in range(n - 1, -1, -1):
        w = weights[i]
        prev = reach[i + 1]
        cur = set(prev)
        for s in prev:
            t = s + w
            if t <= target:
                cur.add(t)
        steps += len(prev)
        if steps > budget:
            raise BudgetExceeded(f"reachability sweep exceeded budget {budget}")
        reach[i] = cur
    return reach


def _lex_first_dfs(weights, target, budget):
    """Depth-first include-before-exclude walk with dead-state memo."""
    n = len(weights)
    suffix_total = [ZERO] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix_total[i] = suffix_total[i + 1] + weights[i]
    dead = set()
    steps = 0
    chosen = []
    # frames: (index, remaining, phase) with phase 0=try include, 1=try skip
    stack = [(0, target, 0)]
    while stack:
        i, remaining, phase = stack.pop()
        if phase == 0:
            if remaining == 0:
                return tuple(chosen)
            if i >= n or remaining < 0 or remaining > suffix_total[i]:
                continue
            if (i, remaining) in dead:
                continue
            steps += 1
            if steps > budget:
                raise BudgetExceeded(
                    f"subset search exceeded budget {budget}"
                )
            stack.append((i, remaining, 1))
            if weights[i] <= remaining:
                chosen.append(i)
                stack.append((i + 1, remaining - weights[i], 0))
        else:
            # the include-branch below failed; retract and try skipping
            if chosen and chosen[-1] == i:
                chosen.pop()
            dead.add((i, remaining))
            stack.append((i + 1, remaining, 0))
    return None


def _sum_feasible(weights, target) -> bool:
    """Cheap necessary conditions: target within range and expressible
    over the weights' common denominator."""
    if target < 0:
        return False
    total = sum(weights, ZERO)
    if target > total:
        return False
    denom = 1
    for w in weights:
        denom = denom * w.denominator // _gcd(denom, w.denominator)
    return (target * denom).denominator == 1


def _gcd(a, b):
    while b:
        a, b = b, a % b
    return a


def _lex_first_subset(weights, target, budget):
    """Lexicographically-first index subset with the exact sum, or None."""
    if target == 0:
        return ()
    if not _sum_feasible(weights, target):
        return None
    return _lex_first_dfs(weights, target, budget)


def _members_under(tree, depth, region: ClopenSet):
    return [
        w
        for w in tree.members_at(depth)
        if any(is_prefix(v, w) for v in region.words)
    ]


def hull_words(core, region: ClopenSet, depth: int) -> list:
    """Clopen hull of (core intersect region) inside the region at the
    given refinement depth: member cylinders at `depth` under shallow
    region words, the region words themselves where they are deeper."""
    out = set()
    members = None
    for v in region.words:
        if len(v) >= depth:
            if core.is_member(v):
                out.add(v)
        else:
            if members is None:
                members = core.members_at(depth)
            for w in members:
                if is_prefix(v, w):
                    out.add(w)
    return sorted(out)


def realize_value_in(
    m: MeasureTree,
    region: ClopenSet,
    alpha: Fraction,
    core=None,
    depth_cap: int = DEFAULT_DEPTH_CAP,
    budget: int = DEFAULT_ORACLE_BUDGET,
) -> ClopenSet:
    """Canonical clopen W with core <= W <= region and measure exactly alpha.

    Searches depth-increasing, lexicographic-first.  With a compact core
    the construction follows two steps: shrink a clopen hull of the core
    inside the region until its mass drops below alpha, then fill the rest
    of the value inside region minus hull.
    """
    alpha = Fraction(alpha)
    total = clopen_measure(m, region)
    if not 0 <= alpha <= total:
        raise MeasureMismatch(
            f"alpha {alpha} outside [0, {total}] for the region"
        )
    base_depth = max((len(w) for w in region.words), default=0)
    if core is not None:
        anchor = _members_under(core, base_depth, region)
        if len(anchor) != len(core.members_at(base_depth)):
            raise MeasureMismatch("core does not lie under the region")
        if core.label(()) >= alpha:
            raise MeasureMismatch(
                f"core mass {core.label(())} must stay below alpha {alpha}"
            )
    if alpha == total:
        return region
    if alpha == 0 and core is None:
        return clopen(m, [])

    if core is None:
        for depth in range(base_depth, depth_cap + 1):
            leaves = leaves_at(m, region, depth)
            weights = [m.weight(w) for w in leaves]
            picked = _lex_first_subset(weights, alpha, budget)
            if picked is not None:
                return clopen(m, [leaves[i] for i in picked])
        raise ValueNotRealizable(
            f"no refinement of depth <= {depth_cap} realizes {alpha}",
            depth_cap=depth_cap,
        )

    for hull_depth in range(depth_cap + 1):
        hull = clopen(m, hull_words(core, region, hull_depth))
        hull_mass = clopen_measure(m, hull)
        if hull_mass >= alpha:
            continue
        rest = clopen_difference(region, hull)
        want = alpha - hull_mass
        if want == 0:
            return hull
        rest_base = max((len(w) for w in rest.words), default=0)
        for depth in range(hull_depth, depth_cap + 1):
            leaves = leaves_at(m, rest, max(depth, rest_base))
            weights = [m.weight(w) for w in leaves]
            picked = _lex_first_subset(weights, want, budget)
            if picked is not None:
                return clopen(m, list(hull.words) + [leaves[i] for i in picked])
    raise ValueNotRealizable(
        f"no refinement of depth <= {depth_cap} realizes {alpha} around the core",
        depth_cap=depth_cap,
    )


def check_goodness(
    m: MeasureTree,
    depth: int,
    depth_cap: int = DEFAULT_DEPTH_CAP,
    budget: int = DEFAULT_ORACLE_BUDGET,
    value_budget: Optional[int] = None,
) -> GoodnessReport:
    """Value-versus-cylinder goodness sweep at finite resolution.

    For every cylinder V of depth <= `depth` and every value alpha
    resolvable at `depth` with alpha <= mu(V), attempt to realize alpha
    inside V with refinements down to `depth_cap`.  Cylinders are scanned
    depth first, later siblings before earlier ones, values ascending;
    the first failing pair is reported.
    """
    if depth > depth_cap:
        raise ValueError("depth must not exceed depth_cap")
    from .space import clopen_values

    kw = {} if value_budget is None else {"value_budget": value_budget}
    values = clopen_values(m, depth, **kw)
    for d in range(depth + 1):
        for v in sorted(m.words_at(d), reverse=True):
            cyl = clopen(m, [v])
            mass = m.weight(v)
            for alpha in values:
                if alpha > mass:
                    break
                try:
                    realize_value_in(m, cyl, alpha, None, depth_cap, budget)
                except ValueNotRealizable:
                    return GoodnessReport(
                        verdict="fail",
                        checked_depth=depth,
                        search_depth=depth_cap,
                        counterexample=(alpha, cyl),
                    )
    return GoodnessReport(verdict="pass", checked_depth=depth, search_depth=depth_cap)


def format_counterexample(report: GoodnessReport) -> str:
    alpha, cyl = report.counterexample
    from .space import format_fraction

    return f"alpha={format_fraction(alpha)} V={format_word(cyl.words[0])}"
