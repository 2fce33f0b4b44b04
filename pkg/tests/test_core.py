import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cfsm.core import (
    Constants,
    Domain,
    FoLedger,
    Oracle,
    prefix_gradient,
    prefix_value,
    project,
    stage_rng,
)
from cfsm.errors import ConfigError, InvalidInputError
from cfsm.problems import QuadraticStream

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)

DOMAINS = {
    "box": Domain.box([-1.0, -2.0, 0.0], [1.0, 0.5, 3.0]),
    "ball": Domain.ball([0.5, -0.5, 1.0], 2.0),
    "free": Domain.unconstrained(),
}


def test_project_examples():
    assert np.array_equal(project(Domain.cube(2), [2.0, 0.5]), [1.0, 0.5])
    assert np.allclose(project(Domain.ball([0.0, 0.0], 1.0), [3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    x = np.array([0.2, -0.3])
    assert np.array_equal(project(Domain.cube(2), x), x)
    assert np.array_equal(project(Domain.unconstrained(), [5.0, -7.0]), [5.0, -7.0])


def test_project_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        project(Domain.cube(2), [1.0, 2.0, 3.0])
    with pytest.raises(InvalidInputError):
        project(Domain.cube(2), [np.nan, 0.0])


@pytest.mark.parametrize("name", list(DOMAINS))
@settings(max_examples=300, deadline=None)
@given(x=vec3, y=vec3)
def test_projection_idempotent_and_nonexpansive(name, x, y):
    dom = DOMAINS[name]
    px, py = dom.project(x), dom.project(y)
    assert np.allclose(dom.project(px), px, rtol=0, atol=1e-12)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12
    assert dom.contains(px)


@pytest.mark.parametrize("name", ["box", "ball"])
def test_projection_random_pairs(name):
    dom = DOMAINS[name]
    rng = np.random.default_rng(0)
    X = rng.normal(scale=4.0, size=(10_000, 3))
    Y = rng.normal(scale=4.0, size=(10_000, 3))
    for x, y in zip(X, Y):
        px, py = dom.project(x), dom.project(y)
        assert np.max(np.abs(dom.project(px) - px)) <= 1e-12
        assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12


def test_diameters():
    assert DOMAINS["box"].diameter == pytest.approx(math.sqrt(4 + 6.25 + 9))
    assert DOMAINS["ball"].diameter == 4.0
    assert DOMAINS["free"].diameter == math.inf
    assert Domain.cube(2).diameter == pytest.approx(2 * math.sqrt(2))


def test_box_validation():
    with pytest.raises(InvalidInputError):
        Domain.box([1.0], [0.0])
    with pytest.raises(InvalidInputError):
        Domain.ball([0.0], -1.0)


def test_constants_validation():
    Constants(1.0, 1.0, 0.0)
    for args in [(0.0, 1.0), (2.0, 1.0), (1.0, math.inf), (1.0, 2.0, -1.0)]:
        with pytest.raises(ConfigError):
            Constants(*args)


def test_prefix_value_and_gradient():
    centers = np.array([[1.0, 0.0], [3.0, 2.0], [-1.0, 4.0]])
    q = QuadraticStream(centers)
    x = np.array([0.5, -0.5])
    assert prefix_value(q, 1, x) == pytest.approx(q.component_value(1, x))
    oracle = Oracle(q)
    g = prefix_gradient(oracle, 3, x)
    assert oracle.count == 3
    assert np.allclose(g, 2 * (x - centers.mean(0)), atol=1e-14)
    g1 = prefix_gradient(oracle, 1, x)
    assert oracle.count == 4
    assert np.allclose(g1, q.component_gradient(1, x))
    for bad in (0, 4):
        with pytest.raises(InvalidInputError):
            prefix_value(q, bad, x)
        with pytest.raises(InvalidInputError):
            prefix_gradient(oracle, bad, x)


def test_identical_components_prefix_value():
    q = QuadraticStream(np.tile([[0.3, -0.2]], (6, 1)))
    x = np.array([1.0, 2.0])
    for i in range(1, 7):
        assert prefix_value(q, i, x) == pytest.approx(q.component_value(1, x), rel=1e-15)


def test_ridge_prefix_value_matches_direct_sum(ridge):
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.normal(size=ridge.dim)
        i = int(rng.integers(1, ridge.n + 1))
        direct = math.fsum(ridge.component_value(j, x) for j in range(1, i + 1)) / i
        assert prefix_value(ridge, i, x) == pytest.approx(direct, rel=1e-12)


def test_prefix_gradient_matches_finite_differences(ridge):
    rng = np.random.default_rng(2)
    h = 1e-6
    for i in (1, 7, 60):
        x = rng.normal(size=ridge.dim)
        g = prefix_gradient(Oracle(ridge), i, x)
        fd = np.array([(prefix_value(ridge, i, x + h * e) - prefix_value(ridge, i, x - h * e)) / (2 * h)
                       for e in np.eye(ridge.dim)])
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_ledger_counts_scripted_sequence(ridge):
    oracle = Oracle(ridge)
    x = np.zeros(ridge.dim)
    expected = 0
    for j in (1, 5, 2):
        oracle.gradient(j, x)
        expected += 1
    oracle.value(3, x)
    prefix_value(ridge, 10, x)
    prefix_gradient(oracle, 10, x)
    expected += 10
    assert oracle.count == expected
    with pytest.raises(InvalidInputError):
        oracle.ledger.charge(-1)


def test_ledger_log():
    ledger = FoLedger(keep_log=True)
    q = QuadraticStream(np.eye(3))
    oracle = Oracle(q, ledger)
    oracle.gradient(2, np.zeros(3))
    prefix_gradient(oracle, 3, np.ones(3))
    assert ledger.count == 4
    assert ledger.queried_indices() == {1, 2, 3}


def test_stage_rng_reproducible():
    a = stage_rng(42, 7).integers(0, 1000, size=20)
    b = stage_rng(42, 7).integers(0, 1000, size=20)
    c = stage_rng(42, 8).integers(0, 1000, size=20)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(ConfigError):
        stage_rng(-1, 1)
    with pytest.raises(ConfigError):
        stage_rng(2**64, 1)
