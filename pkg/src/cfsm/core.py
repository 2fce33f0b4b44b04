"""Shared abstractions: feasible sets, component streams, FO accounting, RNG.

Stages and component indices are 1-based throughout the public API, so
``prefix_gradient(oracle, i, x)`` averages components ``1..i``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InvalidInputError

UNCONSTRAINED, BOX, BALL = 0, 1, 2
_KIND_NAMES = {UNCONSTRAINED: "unconstrained", BOX: "box", BALL: "ball"}


def as_vector(x, dim: Optional[int] = None) -> np.ndarray:
    """Return ``x`` as a finite float64 1-d array, validating its length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidInputError(f"expected a 1-d vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise InvalidInputError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector has non-finite entries")
    return v


@dataclass(frozen=True)
class Domain:
    """Convex feasible set: an axis-aligned box, a Euclidean ball, or all of R^d.

    Build instances with :meth:`box`, :meth:`cube`, :meth:`ball` or
    :meth:`unconstrained` rather than calling the constructor.
    """

    kind: int
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: float = math.inf

    @classmethod
    def unconstrained(cls) -> "Domain":
        return cls(UNCONSTRAINED)

    @classmethod
    def box(cls, lower, upper) -> "Domain":
        lo = as_vector(lower)
        hi = as_vector(upper, lo.shape[0])
        if np.any(lo > hi):
            raise InvalidInputError("box lower bound exceeds upper bound")
        lo.flags.writeable = False
        hi.flags.writeable = False
        return cls(BOX, lower=lo, upper=hi)

    @classmethod
    def cube(cls, dim: int, low: float = -1.0, high: float = 1.0) -> "Domain":
        return cls.box(np.full(dim, low), np.full(dim, high))

    @classmethod
    def ball(cls, center, radius: float) -> "Domain":
        c = as_vector(center)
        if not (radius >= 0 and math.isfinite(radius)):
            raise InvalidInputError("ball radius must be finite and nonnegative")
        c.flags.writeable = False
        return cls(BALL, center=c, radius=float(radius))

    @property
    def name(self) -> str:
        return _KIND_NAMES[self.kind]

    @property
    def dim(self) -> Optional[int]:
        if self.kind == BOX:
            return self.lower.shape[0]
        if self.kind == BALL:
            return self.center.shape[0]
        return None

    @property
    def bounded(self) -> bool:
        return self.kind != UNCONSTRAINED

    @property
    def diameter(self) -> float:
        if self.kind == BOX:
            return float(np.linalg.norm(self.upper - self.lower))
        if self.kind == BALL:
            return 2.0 * self.radius
        return math.inf

    def project(self, x) -> np.ndarray:
        return project(self, x)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == BOX:
            return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))
        if self.kind == BALL:
            return bool(np.linalg.norm(x - self.center) <= self.radius + tol)
        return bool(np.all(np.isfinite(x)))

    def kernel_params(self, dim: int):
        """Flat arrays describing the set, consumed by the compiled kernels."""
        if self.kind == BOX:
            return self.kind, self.lower, self.upper, np.zeros(dim), 0.0
        if self.kind == BALL:
            return self.kind, np.zeros(dim), np.zeros(dim), self.center, self.radius
        z = np.zeros(dim)
        return self.kind, z, z, z, 0.0


def project(domain: Domain, x) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``domain`` (a new array)."""
    v = as_vector(x, domain.dim)
    if domain.kind == BOX:
        return np.clip(v, domain.lower, domain.upper)
    if domain.kind == BALL:
        d = v - domain.center
        norm = math.sqrt(float(d @ d))
        if norm <= domain.radius:
            return v.copy()
        return domain.center + d * (domain.radius / norm)
    return v.copy()


def _project_unchecked(domain: Domain, x: np.ndarray) -> np.ndarray:
    # inner-loop variant: no validation, may return x itself
    if domain.kind == BOX:
        return np.clip(x, domain.lower, domain.upper)
    if domain.kind == BALL:
        d = x - domain.center
        norm = math.sqrt(float(d @ d))
        if norm <= domain.radius:
            return x
        return domain.center + d * (domain.radius / norm)
    return x


@dataclass(frozen=True)
class Constants:
    """Strong convexity ``mu``, smoothness ``L`` and gradient bound ``G``."""

    mu: float
    L: float
    G: float = math.inf

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ConfigError(f"mu must be positive and finite, got {self.mu}")
        if not (self.L >= self.mu and math.isfinite(self.L)):
            raise ConfigError(f"L must be finite and at least mu, got L={self.L}, mu={self.mu}")
        if not self.G >= 0:
            raise ConfigError(f"G must be nonnegative, got {self.G}")


@dataclass
class FoLedger:
    """Counts first-order oracle calls: one per single-component gradient.

    With ``keep_log=True`` every query is also recorded as ``(index, point)``.
    """

    count: int = 0
    keep_log: bool = False
    queries: list = field(default_factory=list)

    def charge(self, k: int = 1) -> None:
        if k < 0:
            raise InvalidInputError("ledger charges must be nonnegative")
        self.count += k

    def record(self, j: int, x: np.ndarray) -> None:
        self.count += 1
        if self.keep_log:
            self.queries.append((j, np.array(x, copy=True)))

    def queried_indices(self) -> set:
        return {j for j, _ in self.queries}


class ComponentStream(ABC):
    """An ordered sequence ``f_1..f_n`` of component functions on R^dim.

    Subclasses implement uncounted access to single components; all counted
    access goes through :class:`Oracle`. Instances are treated as immutable.
    """

    n: int
    dim: int
    constants: Constants

    @abstractmethod
    def component_value(self, j: int, x: np.ndarray) -> float: ...

    @abstractmethod
    def component_gradient(self, j: int, x: np.ndarray) -> np.ndarray: ...

    def value_sum(self, i: int, x: np.ndarray) -> float:
        return math.fsum(self.component_value(j, x) for j in range(1, i + 1))

    def gradient_sum(self, i: int, x: np.ndarray) -> np.ndarray:
        total = np.zeros(self.dim)
        for j in range(1, i + 1):
            total += self.component_gradient(j, x)
        return total

    def component_smoothness(self, j: int) -> float:
        """Smoothness of ``f_j`` alone; defaults to the stream-wide ``L``."""
        return self.constants.L

    def check_index(self, j: int, upper: Optional[int] = None) -> int:
        hi = self.n if upper is None else upper
        if not (1 <= j <= hi):
            raise InvalidInputError(f"index {j} outside 1..{hi}")
        return int(j)


class Oracle:
    """Counted gradient access to a stream; one oracle (and ledger) per run."""

    def __init__(self, stream: ComponentStream, ledger: Optional[FoLedger] = None):
        self.stream = stream
        self.ledger = FoLedger() if ledger is None else ledger

    @property
    def count(self) -> int:
        return self.ledger.count

    def gradient(self, j: int, x: np.ndarray) -> np.ndarray:
        self.stream.check_index(j)
        self.ledger.record(j, x)
        return self.stream.component_gradient(j, x)

    def value(self, j: int, x: np.ndarray) -> float:
        self.stream.check_index(j)
        return self.stream.component_value(j, x)

    def prefix_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        return prefix_gradient(self, i, x)

    def prefix_value(self, i: int, x: np.ndarray) -> float:
        return prefix_value(self.stream, i, x)


def prefix_value(stream: ComponentStream, i: int, x) -> float:
    """``g_i(x) = (1/i) * sum_{j<=i} f_j(x)``; never touches a ledger."""
    stream.check_index(i)
    x = as_vector(x, stream.dim)
    return stream.value_sum(i, x) / i


def prefix_gradient(oracle: Oracle, i: int, x) -> np.ndarray:
    """Gradient of the prefix average ``g_i`` at ``x``, charged as ``i`` FOs."""
    stream = oracle.stream
    stream.check_index(i)
    x = as_vector(x, stream.dim)
    if oracle.ledger.keep_log:
        for j in range(1, i + 1):
            oracle.ledger.queries.append((j, x.copy()))
    oracle.ledger.charge(i)
    return stream.gradient_sum(i, x) / i


SEED_LIMIT = 2**64


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < SEED_LIMIT:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def stage_rng(seed: int, stage: int) -> np.random.Generator:
    """Independent generator for one stage of one run.

    The run seed and the stage index are mixed by ``SeedSequence([seed, stage])``
    and fed to PCG64, so each stage's draws are reproducible on their own and
    identical across platforms.
    """
    seq = np.random.SeedSequence([check_seed(seed), int(stage)])
    return np.random.Generator(np.random.PCG64(seq))
