"""Problem families with analytic ground truth.

* :class:`QuadraticStream` -- isotropic quadratics ``scale * ||x - c_j||^2``.
* :class:`RidgeStream` -- ``(a_j^T x - b_j)^2 + lam * ||x||^2`` per data row.
* :class:`AdversarialInstance` -- the two-dimensional hard instance on which
  any method that leaves one hidden component unqueried keeps its output on
  the ``x2 = 0`` axis and pays a gap of ``1/(i^4 + 5i^3 + 7i^2 + 2i)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg

from .core import (
    BALL,
    BOX,
    ComponentStream,
    Constants,
    Domain,
    as_vector,
    check_seed,
)
from .errors import ConfigError, InvalidInputError, LibsvmParseError, NumericError


class NumericWarning(RuntimeWarning):
    pass


# --------------------------------------------------------------------------
# quadratics


def _max_distance(domain: Optional[Domain], points: np.ndarray) -> float:
    """Largest distance from any point of ``domain`` to any row of ``points``."""
    if domain is None or not domain.bounded:
        return math.inf
    if domain.kind == BALL:
        return float(np.max(np.linalg.norm(points - domain.center, axis=1))) + domain.radius
    far = np.maximum(np.abs(points - domain.lower), np.abs(points - domain.upper))
    return float(np.max(np.linalg.norm(far, axis=1)))


class QuadraticStream(ComponentStream):
    """``f_j(x) = scale * ||x - c_j||^2``.

    Every prefix average is ``scale * ||x - mean(c_1..c_i)||^2`` plus a
    constant, so the constrained prefix optimum is the projection of the
    running mean onto the domain.
    """

    def __init__(self, centers, scale: float = 1.0, domain: Optional[Domain] = None):
        c = np.array(centers, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise InvalidInputError("centers must be a non-empty (n, d) array")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("centers must be finite")
        if not scale > 0:
            raise InvalidInputError("scale must be positive")
        if domain is not None and domain.dim not in (None, c.shape[1]):
            raise InvalidInputError("domain dimension does not match the centers")
        c.flags.writeable = False
        self.centers = c
        self.scale = float(scale)
        self.domain = domain
        self.n, self.dim = c.shape
        self._cumsum = np.cumsum(c, axis=0)
        self._cumsq = np.cumsum(np.einsum("ij,ij->i", c, c))
        G = 2.0 * self.scale * _max_distance(domain, c)
        self.constants = Constants(2.0 * self.scale, 2.0 * self.scale, G)

    @classmethod
    def random(cls, n: int, dim: int, seed: int, scale: float = 1.0,
               domain: Optional[Domain] = None, radius: float = 1.0) -> "QuadraticStream":
        """Centers drawn uniformly from the ball of the given radius."""
        rng = np.random.default_rng(check_seed(seed))
        g = rng.standard_normal((n, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = radius * rng.random(n) ** (1.0 / dim)
        return cls(g * r[:, None], scale=scale, domain=domain)

    def component_value(self, j, x):
        d = x - self.centers[j - 1]
        return self.scale * float(d @ d)

    def component_gradient(self, j, x):
        return 2.0 * self.scale * (x - self.centers[j - 1])

    def gradient_sum(self, i, x):
        return 2.0 * self.scale * (i * x - self._cumsum[i - 1])

    def value_sum(self, i, x):
        s = self._cumsum[i - 1]
        return self.scale * (i * float(x @ x) - 2.0 * float(x @ s) + float(self._cumsq[i - 1]))

    def optimum(self, i: int) -> np.ndarray:
        self.check_index(i)
        m = self._cumsum[i - 1] / i
        if self.domain is not None:
            m = self.domain.project(m)
        return m


# --------------------------------------------------------------------------
# ridge regression


class RidgeStream(ComponentStream):
    """Ridge components ``f_j(x) = (a_j^T x - b_j)^2 + lam * ||x||^2``.

    The regularizer sits in every component, so each ``f_j`` and each prefix
    average is ``2 * lam`` strongly convex. ``constants.L`` is the largest
    single-component smoothness ``2 ||a_j||^2 + 2 lam``; ``G`` is finite only
    when a radius bounding the iterates is supplied.
    """

    def __init__(self, features, labels, lam: float, radius: Optional[float] = None):
        A = np.array(features, dtype=np.float64)
        b = np.array(labels, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] < 1:
            raise InvalidInputError("features must be a non-empty (n, d) array")
        if b.shape != (A.shape[0],):
            raise InvalidInputError("labels must have one entry per feature row")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InvalidInputError("data must be finite")
        if not (lam > 0 and math.isfinite(lam)):
            raise InvalidInputError("lam must be positive")
        A.flags.writeable = False
        b.flags.writeable = False
        self.A, self.b, self.lam = A, b, float(lam)
        self.n, self.dim = A.shape
        self._row_sq = np.einsum("ij,ij->i", A, A)
        L = float(2.0 * self._row_sq.max() + 2.0 * self.lam)
        G = math.inf if radius is None else _ridge_gradient_bound(A, b, self.lam, radius)
        self.constants = Constants(2.0 * self.lam, L, G)
        self._optima = None

    def component_value(self, j, x):
        r = float(self.A[j - 1] @ x) - self.b[j - 1]
        return r * r + self.lam * float(x @ x)

    def component_gradient(self, j, x):
        a = self.A[j - 1]
        return 2.0 * (float(a @ x) - self.b[j - 1]) * a + 2.0 * self.lam * x

    def gradient_sum(self, i, x):
        A = self.A[:i]
        return 2.0 * (A.T @ (A @ x - self.b[:i])) + 2.0 * i * self.lam * x

    def value_sum(self, i, x):
        r = self.A[:i] @ x - self.b[:i]
        return math.fsum(r * r) + i * self.lam * float(x @ x)

    def component_smoothness(self, j):
        return float(2.0 * self._row_sq[j - 1] + 2.0 * self.lam)

    def optimum(self, i: int) -> np.ndarray:
        return self.optima().points[i - 1]

    def optima(self) -> "RidgeOptima":
        """Exact unconstrained optima of every prefix, computed once and cached."""
        if self._optima is None:
            self._optima = RidgeOptima.compute(self)
        return self._optima


def _ridge_gradient_bound(A, b, lam, radius):
    norms = np.linalg.norm(A, axis=1)
    return float(2.0 * np.max(norms * (norms * radius + np.abs(b))) + 2.0 * lam * radius)


def _spd_solve(H: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(rhs))):
        raise NumericError("normal equations have non-finite entries")
    try:
        x = linalg.cho_solve(linalg.cho_factor(H, lower=True), rhs)
    except linalg.LinAlgError as exc:
        raise NumericError(f"normal equations are not positive definite: {exc}") from exc
    res = np.linalg.norm(H @ x - rhs)
    if not (res <= 1e-10 * np.linalg.norm(rhs)) and res > 0:
        # one step of iterative refinement before giving up
        x = x + linalg.solve(H, rhs - H @ x, assume_a="pos")
        res = np.linalg.norm(H @ x - rhs)
        if not (res <= 1e-10 * np.linalg.norm(rhs)):
            raise NumericError(f"normal-equation residual {res:.3e} too large")
    return x


def ridge_exact_optimum(stream: RidgeStream, i: int) -> tuple[np.ndarray, float]:
    """Solve ``(A_i^T A_i / i + lam I) x = A_i^T b_i / i`` from scratch.

    Returns the minimizer of ``g_i`` and the optimal value ``g_i(x*)``.
    """
    stream.check_index(i)
    A, b = stream.A[:i], stream.b[:i]
    H = A.T @ A / i + stream.lam * np.eye(stream.dim)
    x = _spd_solve(H, A.T @ b / i)
    return x, stream.value_sum(i, x) / i


@dataclass
class RidgeOptima:
    """Per-stage optima of a ridge stream from running Gram accumulators."""

    points: np.ndarray  # (n, d), row i-1 is x*_i
    values: np.ndarray  # (n,), g_i(x*_i)
    lam: float

    @classmethod
    def compute(cls, stream: RidgeStream) -> "RidgeOptima":
        n, d = stream.n, stream.dim
        S = np.zeros((d, d))
        r = np.zeros(d)
        eye = np.eye(d)
        pts = np.empty((n, d))
        for i in range(1, n + 1):
            a = stream.A[i - 1]
            S += np.outer(a, a)
            r += stream.b[i - 1] * a
            pts[i - 1] = _spd_solve(S / i + stream.lam * eye, r / i)
        resid = stream.A @ pts.T  # entry (j, i) = a_j^T x*_i
        vals = np.empty(n)
        for i in range(1, n + 1):
            e = resid[:i, i - 1] - stream.b[:i]
            x = pts[i - 1]
            vals[i - 1] = math.fsum(e * e) / i + stream.lam * float(x @ x)
        pts.flags.writeable = False
        return cls(pts, vals, stream.lam)

    def gaps(self, stream: RidgeStream, outputs: np.ndarray) -> np.ndarray:
        """``g_i(x_i) - g_i(x*_i)`` for every stage, via the exact quadratic form.

        ``g_i`` is quadratic with Hessian ``2 (S_i / i + lam I)`` so the gap is
        ``(x - x*)^T (S_i / i + lam I) (x - x*)``; this avoids cancellation
        between two nearly equal objective values.
        """
        X = np.asarray(outputs, dtype=np.float64)
        if X.shape != self.points.shape:
            raise InvalidInputError("need one output per stage")
        delta = X - self.points
        proj = stream.A @ delta.T  # (j, i) = a_j^T delta_i
        out = np.empty(stream.n)
        for i in range(1, stream.n + 1):
            p = proj[:i, i - 1]
            dv = delta[i - 1]
            out[i - 1] = float(p @ p) / i + self.lam * float(dv @ dv)
        return out


def running_gram(stream: RidgeStream):
    """Yield ``(i, S_i, r_i)`` with ``S_i = sum_{j<=i} a_j a_j^T`` and ``r_i = sum b_j a_j``."""
    S = np.zeros((stream.dim, stream.dim))
    r = np.zeros(stream.dim)
    for i in range(1, stream.n + 1):
        a = stream.A[i - 1]
        S += np.outer(a, a)
        r += stream.b[i - 1] * a
        yield i, S.copy(), r.copy()


def estimate_constants(stream: RidgeStream, radius: float,
                       rtol: float = 1e-6, max_iter: int = 1000) -> tuple[float, float, float]:
    """``(mu, L, G)`` for a ridge stream.

    ``L = 2 * lambda_max(A^T A / n) + 2 lam`` by power iteration; ``G`` bounds
    every component gradient on the ball of the given radius.
    """
    if not (radius > 0 and math.isfinite(radius)):
        raise ConfigError("radius must be positive and finite")
    A = stream.A
    n = stream.n
    v = np.random.default_rng(0).standard_normal(stream.dim)
    v /= np.linalg.norm(v)
    top = 0.0
    converged = False
    for _ in range(max_iter):
        w = A.T @ (A @ v) / n
        est = float(np.linalg.norm(w))
        if est == 0.0:
            top, converged = 0.0, True
            break
        v = w / est
        if abs(est - top) <= rtol * est:
            top, converged = est, True
            break
        top = est
    if not converged:
        warnings.warn(f"power iteration did not converge in {max_iter} steps; "
                      f"using estimate {top:.6g}", NumericWarning, stacklevel=2)
    mu = 2.0 * stream.lam
    L = 2.0 * top + 2.0 * stream.lam
    G = _ridge_gradient_bound(A, stream.b, stream.lam, radius)
    return mu, L, G


def scale_features(A: np.ndarray) -> np.ndarray:
    """Scale every column into ``[-1, 1]`` by its largest absolute entry."""
    A = np.asarray(A, dtype=np.float64)
    m = np.max(np.abs(A), axis=0)
    m[m == 0] = 1.0
    return A / m


def synthetic_ridge(n: int, dim: int, lam: float = 1e-3, seed: int = 0,
                    row_norm: float = 0.1, flip: float = 0.1, standardize: bool = False) -> RidgeStream:
    """Synthetic classification-style ridge stream.

    Rows ``a_j ~ N(0, (row_norm^2 / dim) I)`` and labels
    ``b_j = sign(a_j^T w)`` for a planted ``w ~ N(0, I)``, each flipped with
    probability ``flip``. With the default row norm the largest component
    smoothness is about 0.05, the scale of normalized LIBSVM data.
    """
    if n < 1 or dim < 1:
        raise ConfigError("n and dim must be positive")
    if not (row_norm > 0 and 0 <= flip <= 1):
        raise ConfigError("need row_norm > 0 and flip in [0, 1]")
    rng = np.random.default_rng(check_seed(seed))
    A = rng.standard_normal((n, dim)) * (row_norm / math.sqrt(dim))
    w = rng.standard_normal(dim)
    b = np.where(A @ w >= 0, 1.0, -1.0)
    b[rng.random(n) < flip] *= -1.0
    if standardize:
        A = scale_features(A)
    return RidgeStream(A, b, lam)


# --------------------------------------------------------------------------
# LIBSVM text format


class LibsvmData(NamedTuple):
    features: np.ndarray
    labels: np.ndarray
    dim: int


def _parse_float(token: str, lineno: int, what: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise LibsvmParseError(lineno, f"non-numeric {what} {token!r}") from None
    if not math.isfinite(v):
        raise LibsvmParseError(lineno, f"non-finite {what} {token!r}")
    return v


def parse_libsvm(path, dim: Optional[int] = None) -> LibsvmData:
    """Read ``label idx:val idx:val ...`` lines into dense rows.

    Indices are 1-based. The dimension is the largest index seen unless
    ``dim`` is given. Blank lines and ``#`` comments are skipped.
    """
    labels: list[float] = []
    rows: list[dict[int, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            label = _parse_float(tokens[0], lineno, "label")
            row: dict[int, float] = {}
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise LibsvmParseError(lineno, f"expected idx:val, got {tok!r}")
                try:
                    idx = int(idx_s)
                except ValueError:
                    raise LibsvmParseError(lineno, f"non-numeric index {idx_s!r}") from None
                if idx < 1:
                    raise LibsvmParseError(lineno, f"index {idx} is not positive")
                if idx in row:
                    raise LibsvmParseError(lineno, f"duplicate index {idx}")
                row[idx] = _parse_float(val_s, lineno, "value")
            labels.append(label)
            rows.append(row)
    inferred = max((max(r) for r in rows if r), default=0)
    if dim is None:
        dim = inferred
    elif inferred > dim:
        raise InvalidInputError(f"file uses index {inferred} but dim={dim}")
    A = np.zeros((len(rows), dim))
    for k, row in enumerate(rows):
        for idx, val in row.items():
            A[k, idx - 1] = val
    return LibsvmData(A, np.array(labels, dtype=np.float64), dim)


def write_libsvm(path, features, labels) -> None:
    """Write rows in LIBSVM format with round-trip exact float formatting."""
    A = np.asarray(features, dtype=np.float64)
    b = np.asarray(labels, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for a, y in zip(A, b):
            parts = [repr(float(y))]
            parts += [f"{k + 1}:{float(v)!r}" for k, v in enumerate(a) if v != 0.0]
            fh.write(" ".join(parts) + "\n")


def load_libsvm_ridge(path, lam: float = 1e-3, standardize: bool = False,
                      limit: Optional[int] = None) -> RidgeStream:
    data = parse_libsvm(Path(path))
    A, b = data.features, data.labels
    if limit is not None:
        A, b = A[:limit], b[:limit]
    if standardize:
        A = scale_features(A)
    return RidgeStream(A, b, lam)


# --------------------------------------------------------------------------
# adversarial lower-bound instance


def adversarial_optimum(i: int) -> tuple[np.ndarray, float]:
    """Minimizer and minimum of ``g_i`` on the hard instance at its target stage."""
    if i < 2:
        raise InvalidInputError("the hard instance needs i >= 2")
    D = i * i + 3 * i + 1
    return np.array([(i + 1) / D, 1.0 / D]), (i + 2) / D


def adversarial_axis_optimum(i: int) -> tuple[float, float]:
    """Best first coordinate and value of ``g_i`` restricted to ``x2 = 0``."""
    if i < 2:
        raise InvalidInputError("the hard instance needs i >= 2")
    return 1.0 / (i + 2), (i + 1) / (i * (i + 2))


def adversarial_gap(i: int) -> float:
    """Smallest gap ``g_i(x) - g_i(x*_i)`` over points with ``x2 = 0``."""
    if i < 2:
        raise InvalidInputError("the hard instance needs i >= 2")
    return 1.0 / (i**4 + 5 * i**3 + 7 * i**2 + 2 * i)


class AdversarialInstance(ComponentStream):
    """Hard instance on ``[-1, 1]^2`` with target stage ``i_star`` and hidden index ``k``.

    ``f_l = x1^2 + x2^2`` except ``f_k`` which adds ``(x1 - x2)^2`` and
    ``f_{i_star}`` which adds ``(x1 - 1)^2``.
    """

    dim = 2

    def __init__(self, n: int, i_star: int, k: int):
        if not 2 <= i_star <= n:
            raise InvalidInputError("need 2 <= i_star <= n")
        if not 1 <= k <= i_star - 1:
            raise InvalidInputError("hidden index must lie in 1..i_star-1")
        self.n, self.i_star, self.k = int(n), int(i_star), int(k)
        self.domain = Domain.cube(2)
        self.constants = Constants(2.0, 6.0, 6.0 * math.sqrt(2.0))

    @classmethod
    def sample(cls, n: int, i_star: int, seed: int) -> "AdversarialInstance":
        rng = np.random.default_rng(check_seed(seed))
        return cls(n, i_star, int(rng.integers(1, i_star)))

    def component_value(self, j, x):
        v = x[0] * x[0] + x[1] * x[1]
        if j == self.k:
            v += (x[0] - x[1]) ** 2
        elif j == self.i_star:
            v += (x[0] - 1.0) ** 2
        return float(v)

    def component_gradient(self, j, x):
        g = 2.0 * np.asarray(x, dtype=np.float64)
        if j == self.k:
            g = g + 2.0 * np.array([x[0] - x[1], x[1] - x[0]])
        elif j == self.i_star:
            g = g + np.array([2.0 * (x[0] - 1.0), 0.0])
        return g

    def optimum(self, i: int) -> np.ndarray:
        """Exact minimizer of ``g_i`` (interior of the box for every ``i``)."""
        self.check_index(i)
        H = 2.0 * i * np.eye(2)
        rhs = np.zeros(2)
        if self.k <= i:
            H += 2.0 * np.array([[1.0, -1.0], [-1.0, 1.0]])
        if self.i_star <= i:
            H[0, 0] += 2.0
            rhs[0] += 2.0
        return np.linalg.solve(H, rhs)


# --------------------------------------------------------------------------
# optimum drift


def drift_bound(i: int, j: int, mu: float, G: float) -> float:
    """Upper bound on ``||x*_{i+j} - x*_i||`` for mu-strongly convex, G-Lipschitz components."""
    return 2.0 * j * G / (mu * (2 * i + j))


def drift_bound_check(stream: ComponentStream, i: int, j: int, slack: float = 1e-12) -> bool:
    """Whether the prefix optima at stages ``i`` and ``i + j`` are as close as the bound says."""
    c = stream.constants
    d = float(np.linalg.norm(stream.optimum(i + j) - stream.optimum(i)))
    return d <= drift_bound(i, j, c.mu, c.G) + slack


def distance_bound_check(stream: ComponentStream, j: int, i: int, x_hat_j,
                         slack: float = 1e-12) -> bool:
    """``||x_j - x*_i||^2 <= (8/mu^2)(G(i-j)/(i+j))^2 + 2||x_j - x*_j||^2`` for ``i > j``."""
    if not i > j >= 1:
        raise InvalidInputError("need i > j >= 1")
    c = stream.constants
    x = as_vector(x_hat_j, stream.dim)
    lhs = float(np.sum((x - stream.optimum(i)) ** 2))
    rhs = 8.0 / c.mu**2 * (c.G * (i - j) / (i + j)) ** 2 + 2.0 * float(np.sum((x - stream.optimum(j)) ** 2))
    return lhs <= rhs + slack
