"""Brute-force oracles for the estimator, the aggregate and the optimum geometry.

Oracles enumerate every inner index instead of sampling, so the checked
identities are exact up to rounding. All gradients they need go through a
private shadow ledger; the FO counts of the run under test are never touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .baselines import sgd_stage
from .core import ComponentStream, Domain, FoLedger, Oracle, prefix_value, stage_rng
from .csvrg import (
    CsvrgConfig,
    RoundState,
    csvrg_run,
    estimator,
    recompute_bound,
    recompute_schedule,
)
from .errors import InvalidInputError, PreconditionError
from .problems import (
    AdversarialInstance,
    QuadraticStream,
    adversarial_gap,
    drift_bound,
    synthetic_ridge,
)

SUITES = ("unbias", "aggregate", "sparsity", "drift", "variance", "adversarial")


@dataclass(frozen=True)
class OracleReport:
    suite: str
    cases: int
    max_violation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_violation <= self.tolerance)

    def line(self) -> str:
        return f"{self.suite},{self.cases},{self.max_violation:.6e},{self.tolerance:.1e},{str(self.passed).lower()}"

    @staticmethod
    def header() -> str:
        return "suite,cases,max_violation,tolerance,pass"


def merge(suite: str, reports: Iterable[OracleReport], tolerance: Optional[float] = None) -> OracleReport:
    reports = list(reports)
    if not reports:
        return OracleReport(suite, 0, 0.0, tolerance or 0.0)
    tol = reports[0].tolerance if tolerance is None else tolerance
    worst = max(r.max_violation / r.tolerance for r in reports) * tol
    return OracleReport(suite, sum(r.cases for r in reports), worst, tol)


def _shadow(stream: ComponentStream) -> Oracle:
    return Oracle(stream, FoLedger())


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b)) / max(float(np.linalg.norm(b)), 1.0)


def direct_aggregate(stream: ComponentStream, i: int, x_prev) -> np.ndarray:
    """``(1/i) sum_{k<=i} grad f_k(x_prev)`` by plain summation, no ledger."""
    total = np.zeros(stream.dim)
    for k in range(1, i + 1):
        total += stream.component_gradient(k, x_prev)
    return total / i


def aggregate_violation(stream: ComponentStream, state: RoundState) -> float:
    """Relative distance between the state's aggregate and the direct sum at ``x_prev``."""
    return _rel(state.agg, direct_aggregate(stream, state.i - 1, state.x_prev))


def aggregate_check(stream: ComponentStream, state: RoundState, tol: float = 1e-10) -> OracleReport:
    return OracleReport("aggregate", 1, aggregate_violation(stream, state), tol)


def unbias_oracle(stream: ComponentStream, state: RoundState, tol: float = 1e-10,
                  check_reachable: bool = True) -> OracleReport:
    """Average the estimator over every ``u`` in ``1..i-1`` and compare with ``grad g_i``.

    With ``check_reachable`` a state whose aggregate disagrees with the direct
    sum raises :class:`PreconditionError`; without it such a state is simply
    measured (and fails).
    """
    i = state.i
    if i < 2:
        raise InvalidInputError("the estimator is defined for i >= 2")
    if check_reachable and aggregate_violation(stream, state) > tol:
        raise PreconditionError("aggregate is inconsistent with the direct sum at x_prev")
    shadow = _shadow(stream)
    mean = np.zeros(stream.dim)
    for u in range(1, i):
        mean += estimator(shadow, i, u, state.x, state.x_prev, state.agg)
    mean /= i - 1
    target = direct_aggregate(stream, i, state.x)
    return OracleReport("unbias", 1, _rel(mean, target), tol)


def variance_terms(stream: ComponentStream, state: RoundState, alpha: float) -> tuple[float, float]:
    """Exact second moment of the estimator error and the bound it must respect.

    The bound is ``8 L^2 ||x - x*_i||^2 + 64 L^2 G^2 alpha^2 / mu^2
    + 16 L^2 ||x*_prev - x_prev||^2``.
    """
    optimum = getattr(stream, "optimum", None)
    if optimum is None:
        raise PreconditionError("stream has no exact optima")
    c = stream.constants
    if not math.isfinite(c.G):
        raise PreconditionError("variance bound needs a finite G")
    i = state.i
    shadow = _shadow(stream)
    target = direct_aggregate(stream, i, state.x)
    second = 0.0
    for u in range(1, i):
        e = estimator(shadow, i, u, state.x, state.x_prev, state.agg) - target
        second += float(e @ e)
    second /= i - 1
    L2 = c.L * c.L
    dx = state.x - optimum(i)
    dp = optimum(state.prev) - state.x_prev
    bound = (8.0 * L2 * float(dx @ dx) + 64.0 * L2 * c.G**2 * alpha**2 / c.mu**2
             + 16.0 * L2 * float(dp @ dp))
    return second, bound


def variance_oracle(stream: ComponentStream, state: RoundState, alpha: float,
                    tol: float = 1e-10) -> OracleReport:
    second, bound = variance_terms(stream, state, alpha)
    return OracleReport("variance", 1, (second - bound) / max(bound, 1.0), tol)


# --------------------------------------------------------------------------
# reachable states


def collect_states(stream: ComponentStream, domain: Optional[Domain], config: CsvrgConfig,
                   count: int, rounds: bool = True) -> list[RoundState]:
    """Run CSVRG with a tap and keep ``count`` evenly spaced snapshots."""
    seen: list[RoundState] = []
    tap = seen.append
    if rounds:
        csvrg_run(stream, domain, config, round_tap=tap)
    else:
        csvrg_run(stream, domain, config, stage_tap=tap)
    if len(seen) <= count:
        return seen
    idx = np.linspace(0, len(seen) - 1, count).round().astype(int)
    return [seen[k] for k in idx]


def _quadratic_case(seed: int, n: int = 40, dim: int = 5):
    domain = Domain.ball(np.zeros(dim), 1.0)
    return QuadraticStream.random(n, dim, seed, scale=0.5, domain=domain), domain


# --------------------------------------------------------------------------
# lower-bound demonstration


@dataclass(frozen=True)
class LowerBoundDemo:
    stage: int
    hidden: int
    hidden_queried: bool
    output: tuple
    gap: float
    bound: float
    prefix_zero: bool

    @property
    def holds(self) -> bool:
        if not self.prefix_zero:
            return False
        if self.hidden_queried:
            return True
        return self.output[1] == 0.0 and self.gap >= self.bound - 1e-12


def lowerbound_demo(n: int, seed: int = 0) -> LowerBoundDemo:
    """Run per-stage SGD from the origin on the hard instance with target stage ``n``.

    Every stage ``j`` spends ``max(1, (j-1)//2)`` FOs, so at the target stage
    the method sees at most half of the earlier components.
    """
    if n < 4:
        raise InvalidInputError("the demonstration needs n >= 4")
    inst = AdversarialInstance.sample(n, n, seed)
    ledger = FoLedger(keep_log=True)
    oracle = Oracle(inst, ledger)
    x = np.zeros(2)
    prefix_zero = True
    for j in range(1, n + 1):
        if j == n:
            ledger.queries.clear()
        T = max(1, (j - 1) // 2)
        x = sgd_stage(oracle, inst.domain, j, x, 1.0 / inst.constants.mu, T, stage_rng(seed, j))
        if j < n and not (x[0] == 0.0 and x[1] == 0.0):
            prefix_zero = False
    queried = inst.k in ledger.queried_indices()
    gap = prefix_value(inst, n, x) - prefix_value(inst, n, inst.optimum(n))
    return LowerBoundDemo(n, inst.k, queried, (float(x[0]), float(x[1])), gap,
                          adversarial_gap(n), prefix_zero)


def numeric_adversarial_gap(i: int) -> float:
    """Gap between the best point on ``x2 = 0`` and the best point of the box, by Newton steps.

    Gradients come from the instance's components; the Hessian is formed by
    central differences of gradients. One Newton step is exact on quadratics;
    a second one polishes rounding.
    """
    inst = AdversarialInstance(max(i, 2), i, 1)
    box = inst.domain

    def grad(x):
        return sum(inst.component_gradient(j, x) for j in range(1, i + 1)) / i

    def hess(x, h=1e-3):
        H = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            H[:, k] = (grad(x + e) - grad(x - e)) / (2 * h)
        return 0.5 * (H + H.T)

    x = np.zeros(2)
    for _ in range(2):
        x = box.project(x - np.linalg.solve(hess(x), grad(x)))
    w = 0.0
    for _ in range(2):
        y = np.array([w, 0.0])
        w = float(np.clip(w - grad(y)[0] / hess(y)[0, 0], -1.0, 1.0))
    return prefix_value(inst, i, np.array([w, 0.0])) - prefix_value(inst, i, x)


# --------------------------------------------------------------------------
# suites


def suite_unbias(seed: int = 0, states: int = 50, tol: float = 1e-10) -> OracleReport:
    reports = []
    cfg = CsvrgConfig(alpha=0.3, T=4, seed=seed, step_mode="theoretical", beta=4.0)
    q, dom = _quadratic_case(seed)
    for s in collect_states(q, dom, cfg, states):
        reports.append(unbias_oracle(q, s, tol))
    r = synthetic_ridge(40, 5, 1e-3, seed=seed)
    for s in collect_states(r, None, CsvrgConfig(alpha=0.3, T=4, seed=seed), states):
        reports.append(unbias_oracle(r, s, tol))
    return merge("unbias", reports, tol)


def suite_aggregate(seed: int = 0, n: int = 200, tol: float = 1e-10) -> OracleReport:
    r = synthetic_ridge(n, 10, 1e-3, seed=seed)
    worst, cases = 0.0, 0

    def tap(state):
        nonlocal worst, cases
        worst = max(worst, aggregate_violation(r, state))
        cases += 1

    csvrg_run(r, None, CsvrgConfig(alpha=0.3, T=20, seed=seed), stage_tap=tap)
    return OracleReport("aggregate", cases, worst, tol)


def suite_sparsity(ns=(10, 100, 1000), alphas=(0.05, 0.1, 0.3, 0.5)) -> OracleReport:
    worst, cases = 0.0, 0
    for n in ns:
        for a in alphas:
            events = len(recompute_schedule(n, a))
            worst = max(worst, events - recompute_bound(n, a))
            cases += 1
    return OracleReport("sparsity", cases, max(worst, 0.0), 0.0)


def suite_drift(seed: int = 0, instances: int = 100, n: int = 50) -> OracleReport:
    worst, cases = -math.inf, 0
    rng = np.random.default_rng(seed)
    for _ in range(instances):
        dim = int(rng.integers(1, 6))
        q, _ = _quadratic_case(int(rng.integers(2**32)), n=n, dim=dim)
        c = q.constants
        opt = np.array([q.optimum(i) for i in range(1, n + 1)])
        for i in range(1, n):
            js = np.arange(1, n - i + 1)
            d = np.linalg.norm(opt[i - 1 + js] - opt[i - 1], axis=1)
            b = drift_bound(i, js, c.mu, c.G)
            worst = max(worst, float(np.max(d - b)))
            cases += len(js)
    return OracleReport("drift", cases, max(worst, 0.0), 1e-12)


def suite_variance(seed: int = 0, states: int = 200, tol: float = 1e-10) -> OracleReport:
    reports = []
    per = max(1, states // 4)
    for k in range(4):
        q, dom = _quadratic_case(seed + k, n=40, dim=4)
        cfg = CsvrgConfig(alpha=0.3, T=4, seed=seed + k, step_mode="theoretical", beta=4.0)
        for s in collect_states(q, dom, cfg, per):
            reports.append(variance_oracle(q, s, 0.3, tol))
    return merge("variance", reports, tol)


def suite_adversarial(seed: int = 0, stages=range(2, 51), demos: int = 10) -> OracleReport:
    worst, cases = 0.0, 0
    for i in stages:
        worst = max(worst, abs(numeric_adversarial_gap(i) - adversarial_gap(i)))
        cases += 1
    for r in range(demos):
        demo = lowerbound_demo(10 + r, seed + r)
        if not demo.holds:
            worst = math.inf
        cases += 1
    return OracleReport("adversarial", cases, worst, 1e-9)


SUITE_FUNCS: dict[str, Callable[..., OracleReport]] = {
    "unbias": suite_unbias,
    "aggregate": suite_aggregate,
    "sparsity": suite_sparsity,
    "drift": suite_drift,
    "variance": suite_variance,
    "adversarial": suite_adversarial,
}


def run_suites(selector: str = "all") -> list[OracleReport]:
    names = SUITES if selector == "all" else (selector,)
    for name in names:
        if name not in SUITE_FUNCS:
            raise InvalidInputError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    return [SUITE_FUNCS[name]() for name in names]
