import numpy as np
import pytest

from cfsm.core import Domain
from cfsm.problems import QuadraticStream, synthetic_ridge


@pytest.fixture
def ridge():
    return synthetic_ridge(60, 5, 1e-3, seed=3)


@pytest.fixture
def ball_quadratic():
    dom = Domain.ball(np.zeros(4), 1.0)
    return QuadraticStream.random(30, 4, seed=5, scale=0.5, domain=dom), dom
