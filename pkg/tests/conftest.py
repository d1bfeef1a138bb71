import os
import sys
from fractions import Fraction

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import pytest

from cantorgood.space import (
    CycleRule,
    MeasureTree,
    TableRule,
    UniformRule,
    uniform_space,
)


@pytest.fixture
def u2():
    return uniform_space(2)


@pytest.fixture
def u3():
    return uniform_space(3)


@pytest.fixture
def u4():
    return uniform_space(4)


@pytest.fixture
def b13():
    # ratios (1/3, 2/3) at every node
    return MeasureTree(1, CycleRule([(Fraction(1, 3), Fraction(2, 3))]), Fraction(2, 3))


@pytest.fixture
def mix():
    # dyadic splits everywhere except the right subtree, which splits (1/3, 2/3)
    rule = TableRule(
        default=(Fraction(1, 2), Fraction(1, 2)),
        mapping={(1,): (Fraction(1, 3), Fraction(2, 3))},
    )
    return MeasureTree(1, rule, Fraction(2, 3))


@pytest.fixture
def half_u2():
    return uniform_space(2, root_mass=Fraction(1, 2))
