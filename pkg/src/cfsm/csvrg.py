"""Continual SVRG: sparse full-gradient recomputation plus a cheap inner solver.

At every stage ``i`` the method keeps an aggregate direction ``agg`` equal to
the average gradient of ``f_1..f_{i-1}`` at an earlier output ``x_prev``. The
inner solver (FUM) then takes ``T_i`` projected steps along

    (1 - 1/i) * (grad f_u(x) - grad f_u(x_prev) + agg) + (1/i) * grad f_i(x)

with ``u`` uniform in ``1..i-1``, which costs 3 FOs per step and is an
unbiased estimate of ``grad g_i(x)``. Full prefix gradients are recomputed
only when the gap ``i - prev`` reaches ``alpha * i``, which happens
``O(log(n) / alpha)`` times over ``n`` stages.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .core import (
    ComponentStream,
    Domain,
    FoLedger,
    Oracle,
    _project_unchecked,
    as_vector,
    check_seed,
    prefix_gradient,
    stage_rng,
)
from .errors import ConfigError, InvalidInputError, InvalidStageError, NumericError
from .problems import RidgeStream

SCHEDULES = ("fixed", "custom", "theoretical")
STEP_MODES = ("theoretical", "practical")


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class CsvrgConfig:
    """Parameters of a CSVRG run.

    Attributes:
        alpha: Recompute threshold in (0, 1). ``None`` is allowed only with the
            theoretical schedule, which then supplies its own value.
        schedule: ``"fixed"`` (every stage uses ``T``), ``"custom"`` (per-stage
            ``T_table``, entry ``i-1`` for stage ``i``) or ``"theoretical"``.
        T: Inner iterations per stage for the fixed schedule.
        T_table: Inner iterations per stage for the custom schedule.
        epsilon: Target accuracy; required by the theoretical schedule and
            used as the stage-1 tolerance when given.
        step_mode: ``"theoretical"`` uses ``4 / (mu (t + beta))``;
            ``"practical"`` uses ``base_step / (i (t + 1))``.
        base_step: Practical step numerator. Defaults to ``2 / mu``, which is
            ``1 / lam`` for ridge streams.
        beta: Averaging offset. Defaults to ``72 L^2 / mu^2``.
        seed: Root seed of the run.
        stage1_tol: Accuracy of the stage-1 gradient descent when ``epsilon``
            is not set.
        x0: Starting point (projected onto the domain). Defaults to zero.
        fast: Use compiled kernels for ridge streams when possible.
    """

    alpha: Optional[float] = 0.3
    schedule: str = "fixed"
    T: int = 100
    T_table: Optional[Sequence[int]] = None
    epsilon: Optional[float] = None
    step_mode: str = "practical"
    base_step: Optional[float] = None
    beta: Optional[float] = None
    seed: int = 0
    stage1_tol: float = 1e-10
    x0: Optional[Sequence[float]] = None
    fast: bool = True

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.step_mode not in STEP_MODES:
            raise ConfigError(f"step_mode must be one of {STEP_MODES}, got {self.step_mode!r}")
        if self.alpha is None:
            if self.schedule != "theoretical":
                raise ConfigError("alpha may only be omitted with the theoretical schedule")
        elif not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.schedule == "fixed" and not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            raise ConfigError(f"T must be a positive integer, got {self.T}")
        if self.schedule == "custom":
            if not self.T_table or any(int(t) != t or t < 1 for t in self.T_table):
                raise ConfigError("T_table must be a non-empty list of positive integers")
        if self.schedule == "theoretical" and not (self.epsilon is not None and self.epsilon > 0):
            raise ConfigError("the theoretical schedule needs epsilon > 0")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.base_step is not None and not self.base_step > 0:
            raise ConfigError("base_step must be positive")
        if self.beta is not None and not self.beta >= 1:
            raise ConfigError("beta must be at least 1")
        if not self.stage1_tol > 0:
            raise ConfigError("stage1_tol must be positive")
        check_seed(self.seed)


@dataclass(frozen=True)
class FumParams:
    """Inner-solver parameters for one stage.

    The averaging weights are ``(t + beta - 1) / Z`` for ``t = 0..T-1`` with
    ``Z = T (T - 1) / 2 + T (beta - 1)``, so they sum to one.
    """

    T: int
    beta: float
    mu: float
    step_mode: str = "theoretical"
    base_step: float = 1.0

    def __post_init__(self):
        if not (int(self.T) == self.T and self.T >= 1):
            raise ConfigError(f"T must be a positive integer, got {self.T}")
        if not self.beta >= 1:
            raise ConfigError(f"beta must be at least 1, got {self.beta}")
        if self.step_mode not in STEP_MODES:
            raise ConfigError(f"unknown step mode {self.step_mode!r}")

    @classmethod
    def from_constants(cls, T: int, mu: float, L: float, **kw) -> "FumParams":
        return cls(T=T, beta=72.0 * L * L / (mu * mu), mu=mu, **kw)

    @property
    def Z(self) -> float:
        T = self.T
        return T * (T - 1) / 2.0 + T * (self.beta - 1.0)

    def weights(self) -> np.ndarray:
        if self.Z == 0.0:  # T = 1, beta = 1: the single iterate
            return np.ones(1)
        return (np.arange(self.T) + self.beta - 1.0) / self.Z

    def step(self, i: int, t: int) -> float:
        if self.step_mode == "theoretical":
            return 4.0 / (self.mu * (t + self.beta))
        return self.base_step / (i * (t + 1.0))


def theoretical_schedule(mu: float, L: float, G: float, epsilon: float, i: int) -> tuple[int, float]:
    """Inner iteration count ``T_i`` and threshold ``alpha`` guaranteeing eps-accuracy.

    ``T_i = ceil(720 G L^2 / (mu^{5/2} i sqrt(eps)) + 9 L^{2/3} G^{2/3} / (eps^{1/3} mu)
    + 864 L^2 / mu^2)`` and ``alpha = mu eps^{1/3} / (20 G^{2/3} L^{2/3})``,
    the latter clamped into (0, 1).
    """
    for name, v in (("mu", mu), ("L", L), ("G", G), ("epsilon", epsilon)):
        if not (v > 0 and math.isfinite(v)):
            raise ConfigError(f"{name} must be positive and finite, got {v}")
    if L < mu:
        raise ConfigError("L must be at least mu")
    if i < 1:
        raise ConfigError("stage index must be positive")
    T = (720.0 * G * L**2 / (mu**2.5 * i * math.sqrt(epsilon))
         + 9.0 * L ** (2 / 3) * G ** (2 / 3) / (epsilon ** (1 / 3) * mu)
         + 864.0 * L**2 / mu**2)
    alpha = mu * epsilon ** (1 / 3) / (20.0 * G ** (2 / 3) * L ** (2 / 3))
    alpha = min(max(alpha, np.nextafter(0.0, 1.0)), np.nextafter(1.0, 0.0))
    return int(math.ceil(T)), float(alpha)


def recompute_due(i: int, prev: int, alpha: float) -> bool:
    """Exact test of ``i - prev >= alpha * i`` using the binary value of ``alpha``."""
    return Fraction(i - prev) >= Fraction(alpha) * i


def recompute_bound(n: int, alpha: float) -> int:
    """Upper bound ``ceil(ln(n) / alpha)`` on the number of recompute events."""
    return math.ceil(math.log(n) / alpha)


# --------------------------------------------------------------------------
# building blocks


def estimator(oracle: Oracle, i: int, u: int, x_cur, x_prev, agg) -> np.ndarray:
    """Variance-reduced estimate of ``grad g_i(x_cur)``; costs 3 FOs."""
    if i < 2:
        raise InvalidStageError("the estimator needs i >= 2")
    if not 1 <= u <= i - 1:
        raise InvalidInputError(f"u must lie in 1..{i - 1}, got {u}")
    w = 1.0 - 1.0 / i
    return (w * (oracle.gradient(u, x_cur) - oracle.gradient(u, x_prev) + agg)
            + oracle.gradient(i, x_cur) / i)


def aggregate_cheap_update(agg, grad_new, i: int) -> np.ndarray:
    """``(1 - 1/i) * agg + (1/i) * grad_new``."""
    if i < 2:
        raise InvalidStageError("the cheap update needs i >= 2")
    return (1.0 - 1.0 / i) * np.asarray(agg) + np.asarray(grad_new) / i


@dataclass
class RoundState:
    """Snapshot handed to taps: the state right before round ``t`` of stage ``i``."""

    i: int
    t: int
    x: np.ndarray
    agg: np.ndarray
    prev: int
    x_prev: np.ndarray


def _fast_ok(oracle: Oracle, fast: bool, tap) -> bool:
    return fast and tap is None and not oracle.ledger.keep_log and isinstance(oracle.stream, RidgeStream)


def fum_stage(oracle: Oracle, i: int, agg, params: FumParams, x_init, x_prev,
              rng: np.random.Generator, domain: Optional[Domain] = None, prev: int = 0,
              tap: Optional[Callable[[RoundState], None]] = None, fast: bool = True) -> np.ndarray:
    """Run ``T`` variance-reduced projected steps from ``x_init``; returns the weighted average.

    Charges exactly ``3 T`` FOs.
    """
    if i < 2:
        raise InvalidStageError("the inner solver needs i >= 2")
    stream = oracle.stream
    domain = domain or Domain.unconstrained()
    T = int(params.T)
    us = rng.integers(1, i, size=T)
    x_init = np.asarray(x_init, dtype=np.float64)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    agg = np.asarray(agg, dtype=np.float64)

    if _fast_ok(oracle, fast, tap):
        kind, lo, hi, c, r = domain.kernel_params(stream.dim)
        rule = _kernels.STEP_THEORETICAL if params.step_mode == "theoretical" else _kernels.STEP_PRACTICAL
        out = _kernels.ridge_fum(stream.A, stream.b, stream.lam, i, us, x_init, x_prev, agg,
                                 float(params.beta), rule, float(params.mu), float(params.base_step),
                                 kind, lo, hi, c, r)
        oracle.ledger.charge(3 * T)
        return out

    x = x_init.copy()
    acc = np.zeros(stream.dim)
    for t in range(T):
        if tap is not None:
            tap(RoundState(i, t, x.copy(), agg.copy(), prev, x_prev.copy()))
        g = estimator(oracle, i, int(us[t]), x, x_prev, agg)
        x = _project_unchecked(domain, x - params.step(i, t) * g)
        acc += (t + params.beta - 1.0) * x
    if params.Z == 0.0:
        return x
    return acc / params.Z


def stage1_descent(oracle: Oracle, domain: Domain, x0, tol: float) -> np.ndarray:
    """Projected gradient descent on ``f_1`` with step ``1/L_1``.

    Stops once ``||G||^2 / (2 mu) <= tol`` for the gradient mapping ``G`` or
    after ``ceil((L_1/mu) ln(L_1 D^2 / tol))`` iterations, where ``D`` bounds
    the distance from ``x0`` to the minimizer. One FO per iteration.
    """
    stream = oracle.stream
    mu = stream.constants.mu
    L1 = max(stream.component_smoothness(1), mu)
    x = np.asarray(x0, dtype=np.float64).copy()
    cap = None
    it = 0
    while True:
        g = oracle.gradient(1, x)
        if cap is None:
            D = min(float(np.linalg.norm(g)) / mu, domain.diameter)
            ratio = L1 * D * D / tol
            cap = 1 if ratio <= 1.0 else max(1, math.ceil(L1 / mu * math.log(ratio)))
        x_new = _project_unchecked(domain, x - g / L1)
        mapping = L1 * (x - x_new)
        x = x_new
        it += 1
        if float(mapping @ mapping) / (2.0 * mu) <= tol or it >= cap:
            return x


# --------------------------------------------------------------------------
# full run


@dataclass
class CsvrgResult:
    """Outputs and accounting of one CSVRG run.

    ``fos[i-1]`` is the cumulative FO count after stage ``i`` finished and
    ``wall[i-1]`` the seconds spent on stage ``i``.
    """

    outputs: np.ndarray
    fos: np.ndarray
    wall: np.ndarray
    T: np.ndarray
    alpha: float
    recompute_stages: list = field(default_factory=list)
    stage1_fos: int = 0
    cheap_updates: int = 0

    @property
    def total_fos(self) -> int:
        return int(self.fos[-1])

    def fo_decomposition(self) -> int:
        """Closed-form FO total: stage 1, ``3 sum T_i``, ``2i - 1`` per recompute, 1 per cheap update."""
        inner = 3 * int(np.sum(self.T[1:]))
        recompute = sum(2 * i - 1 for i in self.recompute_stages)
        return self.stage1_fos + inner + recompute + self.cheap_updates


def _stage_T(config: CsvrgConfig, constants, i: int) -> int:
    if config.schedule == "fixed":
        return int(config.T)
    if config.schedule == "custom":
        table = config.T_table
        return int(table[min(i, len(table)) - 1])
    return theoretical_schedule(constants.mu, constants.L, constants.G, config.epsilon, i)[0]


def csvrg_run(stream: ComponentStream, domain: Optional[Domain] = None,
              config: Optional[CsvrgConfig] = None, ledger: Optional[FoLedger] = None,
              stage_tap: Optional[Callable[[RoundState], None]] = None,
              round_tap: Optional[Callable[[RoundState], None]] = None) -> CsvrgResult:
    """Produce an output for every stage ``1..n`` of ``stream``.

    ``stage_tap`` sees the state on entry to each inner solve; ``round_tap``
    sees every inner round (and forces the uncompiled path).
    """
    config = config or CsvrgConfig()
    if stream.n < 1:
        raise InvalidInputError("empty stream")
    domain = domain or Domain.unconstrained()
    if domain.dim not in (None, stream.dim):
        raise InvalidInputError("domain dimension does not match the stream")
    c = stream.constants
    oracle = Oracle(stream, ledger)
    if config.schedule == "theoretical":
        if not math.isfinite(c.G):
            raise ConfigError("the theoretical schedule needs a finite gradient bound G")
        theory_alpha = theoretical_schedule(c.mu, c.L, c.G, config.epsilon, 1)[1]
    alpha = config.alpha if config.alpha is not None else theory_alpha
    beta = config.beta if config.beta is not None else 72.0 * c.L**2 / c.mu**2
    base_step = config.base_step if config.base_step is not None else 2.0 / c.mu
    tol = config.epsilon if config.epsilon is not None else config.stage1_tol

    n, d = stream.n, stream.dim
    outputs = np.empty((n, d))
    fos = np.zeros(n, dtype=np.int64)
    wall = np.zeros(n)
    Ts = np.zeros(n, dtype=np.int64)
    res = CsvrgResult(outputs, fos, wall, Ts, float(alpha))

    start = time.perf_counter()
    x0 = np.zeros(d) if config.x0 is None else as_vector(config.x0, d)
    x0 = domain.project(x0)
    base = oracle.count
    x_hat = stage1_descent(oracle, domain, x0, tol)
    res.stage1_fos = oracle.count - base + 1
    agg = oracle.gradient(1, x_hat)
    prev, x_prev = 1, x_hat
    outputs[0] = x_hat
    fos[0] = oracle.count - base
    wall[0] = time.perf_counter() - start

    for i in range(2, n + 1):
        start = time.perf_counter()
        update = False
        if recompute_due(i, prev, alpha):
            agg = prefix_gradient(oracle, i - 1, outputs[i - 2])
            prev, x_prev = i - 1, outputs[i - 2]
            update = True
            res.recompute_stages.append(i)
        T = _stage_T(config, c, i)
        Ts[i - 1] = T
        params = FumParams(T=T, beta=beta, mu=c.mu, step_mode=config.step_mode, base_step=base_step)
        if stage_tap is not None:
            stage_tap(RoundState(i, 0, outputs[i - 2].copy(), agg.copy(), prev, x_prev.copy()))
        x_hat = fum_stage(oracle, i, agg, params, outputs[i - 2], x_prev,
                          stage_rng(config.seed, i), domain, prev, round_tap, config.fast)
        if not np.all(np.isfinite(x_hat)):
            raise NumericError(f"non-finite output at stage {i}")
        outputs[i - 1] = x_hat
        if update:
            agg = prefix_gradient(oracle, i, x_hat)
            prev, x_prev = i, x_hat
        else:
            agg = aggregate_cheap_update(agg, oracle.gradient(i, x_prev), i)
            res.cheap_updates += 1
        fos[i - 1] = oracle.count - base
        wall[i - 1] = time.perf_counter() - start
    return res


def recompute_schedule(n: int, alpha: float) -> list[int]:
    """Stages at which a run of ``n`` stages recomputes full gradients.

    The pattern depends only on ``n`` and ``alpha``, so it can be listed
    without touching any data.
    """
    prev, out = 1, []
    for i in range(2, n + 1):
        if recompute_due(i, prev, alpha):
            out.append(i)
            prev = i
    return out
