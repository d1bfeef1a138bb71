"""Exception hierarchy shared by all cantorgood modules.

Every failure mode that callers are expected to branch on gets its own
class; messages carry the exact rational or word witnesses involved.
"""


class CantorGoodError(Exception):
    """Base class for all library errors."""


# -- tree-model / clopen algebra ---------------------------------------------

class InvalidWord(CantorGoodError):
    """A digit exceeds the arity its tree assigns to the ancestor node."""


class ContextMismatch(CantorGoodError):
    """Operands live over different arity structures."""


class EmptySet(CantorGoodError):
    """Operation undefined on the empty clopen set."""


class DepthTooLarge(CantorGoodError):
    """Leaf or value count at the requested depth exceeds the budget."""


# -- goodness / realization --------------------------------------------------

class BudgetExceeded(CantorGoodError):
    """Search work exceeded the configured budget."""


class ValueNotRealizable(CantorGoodError):
    """No clopen refinement up to the depth cap hits the target value."""

    def __init__(self, message, depth_cap=None):
        super().__init__(message)
        self.depth_cap = depth_cap


class MeasureMismatch(CantorGoodError):
    """A prescribed value violates the measure preconditions."""


# -- closed trees --------------------------------------------------------------

class InvalidTree(CantorGoodError):
    """A closed-tree invariant fails; carries the violated rule and node."""

    def __init__(self, rule, node, detail=""):
        self.rule = rule
        self.node = node
        msg = f"{rule} at node {node!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NullTree(CantorGoodError):
    """All labels are zero where positive mass is required."""


class NoRoomToThicken(CantorGoodError):
    """No free sibling slot exists to attach a perfect fan."""


class DeltaOutOfRange(CantorGoodError):
    """Carving tolerance outside (0, measure of the region]."""


class NotNowhereDense(CantorGoodError):
    """A closed tree lacks the required nowhere-density certificate."""


class NotMeasurePreserving(CantorGoodError):
    """A correspondence fails label preservation or structural pairing."""


# -- sketches ------------------------------------------------------------------

class NotInvertible(CantorGoodError):
    """Only isomorphism-kind sketches can be inverted."""


class IncompatibleSketches(CantorGoodError):
    """Composition cannot align the two towers within the depth cap."""


class LevelUnavailable(CantorGoodError):
    """The sketch does not materialize the requested level."""


class NeedMorePrecision(CantorGoodError):
    """The input word does not resolve membership at some level."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


# -- constructions -------------------------------------------------------------

class ClopenValuesMismatch(CantorGoodError):
    """A value of one space is not realizable in the other; certifies
    non-isomorphism at the working resolution."""

    def __init__(self, value, side, depth_cap=None):
        self.value = value
        self.side = side
        self.depth_cap = depth_cap
        super().__init__(f"value {value} not realizable on {side} side")


class DepthCapExceeded(CantorGoodError):
    """A construction needed to refine beyond the plan's depth cap."""


class MeasureTooLarge(CantorGoodError):
    """Strict measure inequality between source and target fails."""


class InsufficientExhaustion(CantorGoodError):
    """The provided tree sequences run out before a stage condition holds."""


class PositiveMeasureRequired(CantorGoodError):
    """The operation needs a set of positive measure."""


class NotContained(CantorGoodError):
    """A required containment between closed trees fails."""


class FullMeasureRequired(CantorGoodError):
    """The target sequence does not exhaust the full measure of the space."""


# -- parsing -------------------------------------------------------------------

class ParseError(CantorGoodError):
    """Malformed or unknown fields in an input file."""


class InvariantViolation(CantorGoodError):
    """Parsed data violates a model invariant."""
