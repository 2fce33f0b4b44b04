import math

import numpy as np
import pytest

from cfsm.core import Domain, Oracle, prefix_gradient, prefix_value
from cfsm.errors import InvalidInputError, LibsvmParseError
from cfsm.problems import (
    AdversarialInstance,
    QuadraticStream,
    RidgeStream,
    adversarial_axis_optimum,
    adversarial_gap,
    adversarial_optimum,
    distance_bound_check,
    drift_bound_check,
    estimate_constants,
    parse_libsvm,
    ridge_exact_optimum,
    running_gram,
    scale_features,
    synthetic_ridge,
    write_libsvm,
)


# ---------------------------------------------------------------- LIBSVM

def test_parse_libsvm_basic(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("1 1:0.5 3:2.0\n-1\n\n+1 2:-3e-1  # comment\n")
    data = parse_libsvm(p)
    assert data.dim == 3
    assert np.array_equal(data.labels, [1.0, -1.0, 1.0])
    assert np.array_equal(data.features, [[0.5, 0.0, 2.0], [0.0, 0.0, 0.0], [0.0, -0.3, 0.0]])


@pytest.mark.parametrize("line, lineno, msg", [
    ("1 1:0.5\n2 x:1\n", 2, "non-numeric index"),
    ("1 1:abc\n", 1, "non-numeric value"),
    ("1 1:1\n1 1:1\nfoo 1:2\n", 3, "non-numeric label"),
    ("1 0:1.0\n", 1, "not positive"),
    ("1 2:1 2:3\n", 1, "duplicate index"),
    ("1 2=1\n", 1, "expected idx:val"),
])
def test_parse_libsvm_errors(tmp_path, line, lineno, msg):
    p = tmp_path / "bad.txt"
    p.write_text(line)
    with pytest.raises(LibsvmParseError) as exc:
        parse_libsvm(p)
    assert exc.value.lineno == lineno
    assert msg in str(exc.value)
    assert str(exc.value).startswith(f"line {lineno}:")


def test_libsvm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.normal(size=(100, 7)) * (rng.random((100, 7)) < 0.6)
    A[:, -1] = rng.normal(size=100)  # keep the inferred dimension at 7
    b = rng.normal(size=100)
    p = tmp_path / "rt.txt"
    write_libsvm(p, A, b)
    data = parse_libsvm(p)
    assert data.dim == 7
    assert np.max(np.abs(data.features - A)) <= 1e-15
    assert np.max(np.abs(data.labels - b)) <= 1e-15


def test_parse_libsvm_forced_dim(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("1 2:1\n")
    assert parse_libsvm(p, dim=4).features.shape == (1, 4)
    with pytest.raises(InvalidInputError):
        parse_libsvm(p, dim=1)


def test_scale_features():
    A = np.array([[2.0, 0.0, -1.0], [-4.0, 0.0, 0.5]])
    S = scale_features(A)
    assert np.array_equal(S, [[0.5, 0.0, -1.0], [-1.0, 0.0, 0.5]])


# ---------------------------------------------------------------- ridge

def test_ridge_single_row_optimum():
    s = RidgeStream([[1.0, 0.0]], [1.0], 1e-3)
    x, val = ridge_exact_optimum(s, 1)
    assert np.allclose(x, [1.0 / (1.0 + 1e-3), 0.0], rtol=1e-14, atol=0)
    assert val == pytest.approx(prefix_value(s, 1, x))


def test_ridge_large_lambda_shrinks_to_zero():
    rng = np.random.default_rng(0)
    A, b = rng.normal(size=(10, 3)), rng.normal(size=10)
    norms = [np.linalg.norm(ridge_exact_optimum(RidgeStream(A, b, lam), 10)[0]) for lam in (1.0, 1e3, 1e6)]
    assert norms[0] > norms[1] > norms[2]
    assert norms[2] < 1e-5


def test_ridge_optimum_is_stationary(ridge):
    for i in (1, 10, 60):
        x, _ = ridge_exact_optimum(ridge, i)
        g = prefix_gradient(Oracle(ridge), i, x)
        assert np.linalg.norm(g) <= 1e-8


def test_ridge_sweep_matches_from_scratch(ridge):
    opt = ridge.optima()
    for i in (1, 2, 17, 60):
        x, val = ridge_exact_optimum(ridge, i)
        assert np.allclose(opt.points[i - 1], x, rtol=1e-10, atol=1e-12)
        assert opt.values[i - 1] == pytest.approx(val, rel=1e-12)


def test_running_gram_matches_scratch(ridge):
    for i, S, r in running_gram(ridge):
        A, b = ridge.A[:i], ridge.b[:i]
        assert np.max(np.abs(S - A.T @ A)) <= 1e-12 * max(1.0, np.max(np.abs(A.T @ A)))
        assert np.max(np.abs(r - A.T @ b)) <= 1e-12 * max(1.0, np.max(np.abs(A.T @ b)))


def test_ridge_gaps_match_value_differences(ridge):
    opt = ridge.optima()
    rng = np.random.default_rng(4)
    X = opt.points + rng.normal(scale=0.5, size=opt.points.shape)
    gaps = opt.gaps(ridge, X)
    direct = np.array([prefix_value(ridge, i, X[i - 1]) - opt.values[i - 1] for i in range(1, ridge.n + 1)])
    assert np.allclose(gaps, direct, rtol=1e-9, atol=1e-12)
    assert np.all(opt.gaps(ridge, opt.points) >= 0)


def test_ridge_gradient_matches_finite_differences(ridge):
    rng = np.random.default_rng(5)
    h = 1e-6
    for j in (1, 30, 60):
        x = rng.normal(size=ridge.dim)
        g = ridge.component_gradient(j, x)
        fd = np.array([(ridge.component_value(j, x + h * e) - ridge.component_value(j, x - h * e)) / (2 * h)
                       for e in np.eye(ridge.dim)])
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_ridge_declared_constants(ridge):
    c = ridge.constants
    assert c.mu == 2e-3
    assert c.L == pytest.approx(max(ridge.component_smoothness(j) for j in range(1, ridge.n + 1)))
    assert math.isinf(c.G)
    bounded = RidgeStream(ridge.A, ridge.b, ridge.lam, radius=2.0)
    assert bounded.constants.G == pytest.approx(estimate_constants(ridge, 2.0)[2])


def test_estimate_constants_examples():
    lam = 1e-3
    mu, L, G = estimate_constants(RidgeStream([[1.0, 0.0]], [0.0], lam), 1.0)
    assert mu == 2 * lam
    assert L == pytest.approx(2 + 2 * lam, rel=1e-6)
    assert G == pytest.approx(2 * 1 * (1 + 0) + 2 * lam)
    n = 4
    mu, L, G = estimate_constants(RidgeStream(np.eye(n), np.ones(n), lam), 3.0)
    assert L == pytest.approx(2.0 / n + 2 * lam, rel=1e-6)
    assert G == pytest.approx(2 * (3.0 + 1.0) + 2 * lam * 3.0)


def test_estimate_constants_matches_eigvalsh(ridge):
    _, L, _ = estimate_constants(ridge, 1.0)
    exact = 2 * np.linalg.eigvalsh(ridge.A.T @ ridge.A / ridge.n)[-1] + 2 * ridge.lam
    assert L == pytest.approx(exact, rel=1e-5)


def test_synthetic_ridge_is_reproducible():
    a, b = synthetic_ridge(50, 4, seed=9), synthetic_ridge(50, 4, seed=9)
    assert np.array_equal(a.A, b.A) and np.array_equal(a.b, b.b)
    assert set(np.unique(a.b)) <= {-1.0, 1.0}


# ---------------------------------------------------------------- quadratics

def test_quadratic_optimum_is_running_mean():
    rng = np.random.default_rng(0)
    c = rng.normal(size=(12, 3))
    q = QuadraticStream(c, scale=2.0)
    for i in (1, 5, 12):
        assert np.allclose(q.optimum(i), c[:i].mean(0))
        g = prefix_gradient(Oracle(q), i, q.optimum(i))
        assert np.linalg.norm(g) <= 1e-12


def test_quadratic_constants_bound_gradients(ball_quadratic):
    q, dom = ball_quadratic
    rng = np.random.default_rng(1)
    pts = [dom.project(rng.normal(size=4) * 3) for _ in range(500)]
    worst = max(np.linalg.norm(q.component_gradient(j, x)) for x in pts for j in (1, 10, 30))
    assert worst <= q.constants.G
    assert q.constants.mu == q.constants.L == 1.0


def test_quadratic_value_sum_matches_loop(ball_quadratic):
    q, _ = ball_quadratic
    x = np.array([0.1, 0.2, -0.3, 0.4])
    direct = math.fsum(q.component_value(j, x) for j in range(1, 21))
    assert q.value_sum(20, x) == pytest.approx(direct, rel=1e-12)


# ---------------------------------------------------------------- adversarial

@pytest.mark.parametrize("i", [2, 3, 5, 10, 50])
def test_adversarial_closed_forms(i):
    inst = AdversarialInstance(i, i, 1)
    x_star, val = adversarial_optimum(i)
    assert np.allclose(inst.optimum(i), x_star, rtol=1e-12, atol=0)
    assert prefix_value(inst, i, x_star) == pytest.approx(val, rel=1e-12)
    w, wval = adversarial_axis_optimum(i)
    assert prefix_value(inst, i, np.array([w, 0.0])) == pytest.approx(wval, rel=1e-12)
    assert wval - val == pytest.approx(adversarial_gap(i), rel=1e-9)


def test_adversarial_gap_values():
    assert adversarial_gap(10) == 1 / 15720
    assert adversarial_gap(2) == 1 / (16 + 40 + 28 + 4)
    with pytest.raises(InvalidInputError):
        adversarial_gap(1)


def test_adversarial_constants_hold_numerically():
    inst = AdversarialInstance(5, 4, 2)
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(10_000, 2))
    Y = rng.uniform(-1, 1, size=(10_000, 2))
    for ell in range(1, 6):
        for x, y in zip(X[:2000], Y[:2000]):
            gx, gy = inst.component_gradient(ell, x), inst.component_gradient(ell, y)
            assert np.linalg.norm(gx - gy) <= 6 * np.linalg.norm(x - y) + 1e-12
            assert np.linalg.norm(gx) <= 6 * math.sqrt(2) + 1e-12
    corners = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    assert max(np.linalg.norm(inst.component_gradient(ell, c)) for ell in range(1, 6) for c in corners) <= 6 * math.sqrt(2)


def test_adversarial_components():
    inst = AdversarialInstance(6, 5, 3)
    x = np.array([0.3, -0.2])
    assert inst.component_value(1, x) == pytest.approx(0.13)
    assert inst.component_value(3, x) == pytest.approx(0.13 + 0.25)
    assert inst.component_value(5, x) == pytest.approx(0.13 + 0.49)
    with pytest.raises(InvalidInputError):
        AdversarialInstance(6, 5, 5)
    k = AdversarialInstance.sample(20, 10, seed=1).k
    assert 1 <= k <= 9


# ---------------------------------------------------------------- drift

def test_drift_identical_components():
    q = QuadraticStream(np.tile([[0.2, 0.1]], (10, 1)), domain=Domain.ball(np.zeros(2), 1.0))
    for i in range(1, 10):
        for j in range(1, 11 - i):
            assert drift_bound_check(q, i, j)
            assert np.linalg.norm(q.optimum(i + j) - q.optimum(i)) <= 1e-15


def test_drift_example_and_sweep():
    dom = Domain.ball(np.zeros(3), 1.0)
    q = QuadraticStream.random(8, 3, seed=0, domain=dom)
    assert drift_bound_check(q, 5, 3)
    for seed in range(20):
        q = QuadraticStream.random(20, 3, seed=seed, domain=dom)
        assert all(drift_bound_check(q, i, j) for i in range(1, 20) for j in range(1, 21 - i))


def test_distance_bound_on_sampled_points():
    dom = Domain.ball(np.zeros(3), 1.0)
    rng = np.random.default_rng(0)
    for seed in range(10):
        q = QuadraticStream.random(15, 3, seed=seed, domain=dom)
        for _ in range(30):
            j = int(rng.integers(1, 14))
            i = int(rng.integers(j + 1, 16))
            x = dom.project(rng.normal(size=3))
            assert distance_bound_check(q, j, i, x)
    with pytest.raises(InvalidInputError):
        distance_bound_check(q, 3, 3, np.zeros(3))
