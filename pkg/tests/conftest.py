from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from skewconv import BranchingMechanism, MotionModel

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def generators(min_d=2, max_d=5, max_rate=5.0):
    """Random conservative Q-matrices."""

    @st.composite
    def build(draw):
        d = draw(st.integers(min_d, max_d))
        off = draw(st.lists(st.floats(0.0, max_rate), min_size=d * d, max_size=d * d))
        Q = np.array(off).reshape(d, d)
        np.fill_diagonal(Q, 0.0)
        np.fill_diagonal(Q, -Q.sum(axis=1))
        return Q

    return build()


@pytest.fixture
def riccati():
    return BranchingMechanism([0.0], [1.0])


@pytest.fixture
def logistic():
    return BranchingMechanism([1.0], [1.0])


@pytest.fixture
def still():
    return MotionModel.still(1)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
