import numpy as np
import pytest

from reslim.metric_core import FiniteMetricSpace


def line_space(points) -> FiniteMetricSpace:
    pts = np.asarray(points, float)
    return FiniteMetricSpace(np.abs(np.subtract.outer(pts, pts)))


@pytest.fixture
def path4():
    """Graph metric of the path 0-1-2-3."""
    return line_space([0, 1, 2, 3])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
