"""Comparison solvers: per-stage SGD, sparse SGD, SVRG and Katyusha.

Every stage solver starts from the previous stage's output and works on the
prefix average ``g_i``. Index draws are made up front from the stage's RNG
so the compiled ridge kernels and the generic loops see the same samples.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

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
from .errors import ConfigError, InvalidInputError, NumericError
from .problems import RidgeStream


def _use_kernel(oracle: Oracle, fast: bool) -> bool:
    return fast and not oracle.ledger.keep_log and isinstance(oracle.stream, RidgeStream)


# --------------------------------------------------------------------------
# SGD


def sgd_draws(rng: np.random.Generator, i: int, T: int, exclude_last: bool = False) -> np.ndarray:
    """Component indices for one SGD stage: uniform on ``1..i`` (or ``1..i-1``)."""
    hi = i - 1 if exclude_last and i > 1 else i
    return rng.integers(1, hi + 1, size=T)


def sgd_stage(oracle: Oracle, domain: Optional[Domain], i: int, x_init, gamma: float, T: int,
              rng: np.random.Generator, exclude_last: bool = False, fast: bool = True) -> np.ndarray:
    """``T`` projected steps ``x <- P(x - gamma grad f_j(x) / t)``; returns the iterate average."""
    if not (int(T) == T and T >= 1):
        raise ConfigError(f"T must be a positive integer, got {T}")
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    stream = oracle.stream
    stream.check_index(i)
    domain = domain or Domain.unconstrained()
    js = sgd_draws(rng, i, int(T), exclude_last)
    x = np.asarray(x_init, dtype=np.float64)
    if _use_kernel(oracle, fast):
        kind, lo, hi, c, r = domain.kernel_params(stream.dim)
        out = _kernels.ridge_sgd(stream.A, stream.b, stream.lam, js, x, float(gamma), kind, lo, hi, c, r)
        oracle.ledger.charge(int(T))
        return out
    acc = np.zeros(stream.dim)
    for t in range(int(T)):
        g = oracle.gradient(int(js[t]), x)
        x = _project_unchecked(domain, x - (gamma / (t + 1.0)) * g)
        acc += x
    return acc / T


@dataclass(frozen=True)
class SgdConfig:
    """Per-stage SGD. ``T`` is an int or a per-stage table (entry ``i-1`` for stage ``i``)."""

    T: object = 300
    gamma: Optional[float] = None
    seed: int = 0
    exclude_last: bool = False
    fast: bool = True

    def __post_init__(self):
        _check_T(self.T)
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        check_seed(self.seed)


def _check_T(T):
    if isinstance(T, (int, np.integer)):
        if T < 1:
            raise ConfigError(f"T must be at least 1, got {T}")
    elif not len(T) or any(int(t) != t or t < 1 for t in T):
        raise ConfigError("per-stage T values must be positive integers")


def _T_at(T, i: int) -> int:
    if isinstance(T, (int, np.integer)):
        return int(T)
    return int(T[min(i, len(T)) - 1])


@dataclass
class StageRunResult:
    """Per-stage outputs, cumulative FOs and wall time of a baseline run."""

    outputs: np.ndarray
    fos: np.ndarray
    wall: np.ndarray
    invocations: list = field(default_factory=list)

    @property
    def total_fos(self) -> int:
        return int(self.fos[-1])


def _start(stream: ComponentStream, domain, x0):
    if stream.n < 1:
        raise InvalidInputError("empty stream")
    domain = domain or Domain.unconstrained()
    x = np.zeros(stream.dim) if x0 is None else as_vector(x0, stream.dim)
    return domain, domain.project(x)


def _new_result(stream):
    n = stream.n
    return StageRunResult(np.empty((n, stream.dim)), np.zeros(n, dtype=np.int64), np.zeros(n))


def sgd_run(stream: ComponentStream, domain: Optional[Domain] = None,
            config: Optional[SgdConfig] = None, ledger: Optional[FoLedger] = None,
            x0=None) -> StageRunResult:
    config = config or SgdConfig()
    domain, x = _start(stream, domain, x0)
    gamma = config.gamma if config.gamma is not None else 2.0 / stream.constants.mu
    oracle = Oracle(stream, ledger)
    res = _new_result(stream)
    base = oracle.count
    for i in range(1, stream.n + 1):
        t0 = time.perf_counter()
        x = sgd_stage(oracle, domain, i, x, gamma, _T_at(config.T, i), stage_rng(config.seed, i),
                      config.exclude_last, config.fast)
        _check_finite(x, i)
        res.outputs[i - 1] = x
        res.fos[i - 1] = oracle.count - base
        res.wall[i - 1] = time.perf_counter() - t0
        res.invocations.append(i)
    return res


# --------------------------------------------------------------------------
# sparse SGD


@dataclass(frozen=True)
class SgdSparseConfig:
    """SGD run only at stages with ``prev * (1 + alpha) < i``."""

    alpha: float = 0.002
    T: object = 414
    gamma: Optional[float] = None
    seed: int = 0
    exclude_last: bool = False
    fast: bool = True

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        _check_T(self.T)
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        check_seed(self.seed)


def sparse_alpha(epsilon: float, diameter: float, G: float) -> float:
    """Threshold ``eps / (2 |D| G)`` that keeps skipped stages eps/2-accurate."""
    if not (epsilon > 0 and G > 0 and 0 < diameter < math.inf):
        raise ConfigError("need epsilon > 0, G > 0 and a bounded domain")
    return epsilon / (2.0 * diameter * G)


def sparse_invocation_stages(n: int, alpha: float) -> list[int]:
    """Stages at which sparse SGD does work, by exact rational comparison."""
    a = Fraction(alpha)
    prev, out = 0, []
    for i in range(1, n + 1):
        if prev * (1 + a) < i:
            out.append(i)
            prev = i
    return out


def sgd_sparse_run(stream: ComponentStream, domain: Optional[Domain] = None,
                   config: Optional[SgdSparseConfig] = None, ledger: Optional[FoLedger] = None,
                   x0=None) -> StageRunResult:
    config = config or SgdSparseConfig()
    domain, x = _start(stream, domain, x0)
    gamma = config.gamma if config.gamma is not None else 2.0 / stream.constants.mu
    oracle = Oracle(stream, ledger)
    res = _new_result(stream)
    active = set(sparse_invocation_stages(stream.n, config.alpha))
    base = oracle.count
    for i in range(1, stream.n + 1):
        t0 = time.perf_counter()
        if i in active:
            x = sgd_stage(oracle, domain, i, x, gamma, _T_at(config.T, i), stage_rng(config.seed, i),
                          config.exclude_last, config.fast)
            _check_finite(x, i)
            res.invocations.append(i)
        res.outputs[i - 1] = x
        res.fos[i - 1] = oracle.count - base
        res.wall[i - 1] = time.perf_counter() - t0
    return res


# --------------------------------------------------------------------------
# SVRG and Katyusha


@dataclass(frozen=True)
class VrConfig:
    """Per-stage variance-reduced solver settings.

    ``step`` defaults to ``1 / (3 L)`` with ``L`` the stream's smoothness
    constant. ``inner = 0`` turns every epoch into one full-gradient step.
    ``tau1``/``tau2`` override Katyusha's momentum weights.
    """

    outer: int = 10
    inner: int = 100
    step: Optional[float] = None
    seed: int = 0
    tau1: Optional[float] = None
    tau2: Optional[float] = None
    fast: bool = True

    def __post_init__(self):
        if not (int(self.outer) == self.outer and self.outer >= 1):
            raise ConfigError("outer must be a positive integer")
        if not (int(self.inner) == self.inner and self.inner >= 0):
            raise ConfigError("inner must be a nonnegative integer")
        if self.step is not None and not self.step > 0:
            raise ConfigError("step must be positive")
        for name in ("tau1", "tau2"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.tau1 is not None and self.tau2 is not None and self.tau1 + self.tau2 > 1:
            raise ConfigError("tau1 + tau2 must not exceed 1")
        check_seed(self.seed)

    def resolved_step(self, stream: ComponentStream) -> float:
        return self.step if self.step is not None else 1.0 / (3.0 * stream.constants.L)


def vr_draws(rng: np.random.Generator, i: int, config: VrConfig) -> np.ndarray:
    return rng.integers(1, i + 1, size=(int(config.outer), int(config.inner)))


def svrg_stage(oracle: Oracle, domain: Optional[Domain], i: int, x_init, config: VrConfig,
               rng: np.random.Generator, monitor=None) -> np.ndarray:
    """SVRG on ``g_i``; returns the final snapshot. Costs ``outer * (i + 2 inner)`` FOs.

    ``monitor(epoch, snapshot)`` is called after every epoch (uncompiled path only).
    """
    stream = oracle.stream
    stream.check_index(i)
    domain = domain or Domain.unconstrained()
    step = config.resolved_step(stream)
    js = vr_draws(rng, i, config)
    snap = np.asarray(x_init, dtype=np.float64)
    if monitor is None and _use_kernel(oracle, config.fast):
        kind, lo, hi, c, r = domain.kernel_params(stream.dim)
        out = _kernels.ridge_svrg(stream.A, stream.b, stream.lam, i, js, snap, step, kind, lo, hi, c, r)
        oracle.ledger.charge(config.outer * (i + 2 * config.inner))
        return out
    for s in range(config.outer):
        full = prefix_gradient(oracle, i, snap)
        if config.inner == 0:
            snap = _project_unchecked(domain, snap - step * full)
        else:
            x = snap.copy()
            for m in range(config.inner):
                j = int(js[s, m])
                v = oracle.gradient(j, x) - oracle.gradient(j, snap) + full
                x = _project_unchecked(domain, x - step * v)
            snap = x
        if monitor is not None:
            monitor(s + 1, snap)
    return snap


def katyusha_params(config: VrConfig, sigma: float, step: float) -> tuple[float, float]:
    """``(tau1, tau2)``: ``tau2 = 1/2`` and ``tau1 = min(sqrt(m sigma / (3 L)), 1/2)``."""
    L = 1.0 / (3.0 * step)
    tau2 = 0.5 if config.tau2 is None else config.tau2
    if config.tau1 is None:
        tau1 = min(math.sqrt(config.inner * sigma / (3.0 * L)), 0.5)
        tau1 = min(tau1, 1.0 - tau2)
    else:
        tau1 = config.tau1
    return tau1, tau2


def katyusha_stage(oracle: Oracle, domain: Optional[Domain], i: int, x_init, config: VrConfig,
                   rng: np.random.Generator, monitor=None) -> np.ndarray:
    """Katyusha (strongly convex variant) on ``g_i``; same FO pattern as SVRG.

    Each inner step evaluates the estimator at the coupling point
    ``tau1 z + tau2 snap + (1 - tau1 - tau2) y``, moves ``z`` with step
    ``step / tau1`` and ``y`` with ``step``. The next snapshot averages the
    epoch's ``y`` iterates with weights ``(1 + step sigma / tau1)^j``; with
    ``tau1 = 0`` it is the last ``y``. ``monitor`` is as for :func:`svrg_stage`.
    """
    stream = oracle.stream
    stream.check_index(i)
    domain = domain or Domain.unconstrained()
    step = config.resolved_step(stream)
    sigma = stream.constants.mu
    tau1, tau2 = katyusha_params(config, sigma, step)
    js = vr_draws(rng, i, config)
    snap = np.asarray(x_init, dtype=np.float64)
    if monitor is None and _use_kernel(oracle, config.fast):
        kind, lo, hi, c, r = domain.kernel_params(stream.dim)
        out = _kernels.ridge_katyusha(stream.A, stream.b, stream.lam, i, js, snap, step, sigma,
                                      tau1, tau2, kind, lo, hi, c, r)
        oracle.ledger.charge(config.outer * (i + 2 * config.inner))
        return out
    a = step / tau1 if tau1 > 0 else 0.0
    ratio = 1.0 + a * sigma
    y = snap.copy()
    z = snap.copy()
    inner = config.inner
    for s in range(config.outer):
        full = prefix_gradient(oracle, i, snap)
        if inner == 0:
            snap = _project_unchecked(domain, snap - step * full)
            if monitor is not None:
                monitor(s + 1, snap)
            continue
        acc = np.zeros(stream.dim)
        wsum = 0.0
        for m in range(inner):
            xk = tau1 * z + tau2 * snap + (1.0 - tau1 - tau2) * y
            j = int(js[s, m])
            g = oracle.gradient(j, xk) - oracle.gradient(j, snap) + full
            z = _project_unchecked(domain, z - a * g)
            y = _project_unchecked(domain, xk - step * g)
            w = ratio ** (m - (inner - 1))
            wsum += w
            acc += w * y
        snap = acc / wsum if tau1 > 0 else y.copy()
        if monitor is not None:
            monitor(s + 1, snap)
    return snap


def _vr_run(stage_fn, stream, domain, config, ledger, x0) -> StageRunResult:
    config = config or VrConfig()
    domain, x = _start(stream, domain, x0)
    oracle = Oracle(stream, ledger)
    res = _new_result(stream)
    base = oracle.count
    for i in range(1, stream.n + 1):
        t0 = time.perf_counter()
        x = stage_fn(oracle, domain, i, x, config, stage_rng(config.seed, i))
        _check_finite(x, i)
        res.outputs[i - 1] = x
        res.fos[i - 1] = oracle.count - base
        res.wall[i - 1] = time.perf_counter() - t0
        res.invocations.append(i)
    return res


def svrg_run(stream, domain=None, config: Optional[VrConfig] = None,
             ledger: Optional[FoLedger] = None, x0=None) -> StageRunResult:
    return _vr_run(svrg_stage, stream, domain, config, ledger, x0)


def katyusha_run(stream, domain=None, config: Optional[VrConfig] = None,
                 ledger: Optional[FoLedger] = None, x0=None) -> StageRunResult:
    return _vr_run(katyusha_stage, stream, domain, config, ledger, x0)


def _check_finite(x, i):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite output at stage {i}")


def match_budget(total: int, n: int) -> list[int]:
    """Split ``total`` FOs into ``n`` per-stage counts that differ by at most one.

    Every count is at least one, so the sum is ``max(total, n)``.
    """
    if n < 1:
        raise ConfigError("n must be positive")
    base, extra = divmod(max(int(total), n), n)
    return [base + 1 if i < extra else base for i in range(n)]
