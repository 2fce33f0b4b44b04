"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
"""

import contextlib
import csv
import functools
import io
import math
import time
from pathlib import Path

import numpy as np
import pytest

from cfsm import cli
from cfsm.core import Domain, FoLedger, prefix_value
from cfsm.csvrg import CsvrgConfig, csvrg_run, recompute_bound, recompute_schedule
from cfsm.problems import QuadraticStream, drift_bound, synthetic_ridge
from cfsm.verify import (
    aggregate_violation,
    collect_states,
    lowerbound_demo,
    numeric_adversarial_gap,
    unbias_oracle,
)

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic_ridge.toml"
METHODS = ("csvrg", "sgd", "sgd_sparse", "svrg", "katyusha")


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def check_unbias():
    def work():
        worst, cases = 0.0, 0
        quad = QuadraticStream.random(120, 6, seed=1, scale=0.5, domain=Domain.ball(np.zeros(6), 1.0))
        ridge = synthetic_ridge(150, 8, 1e-3, seed=2)
        cfg = CsvrgConfig(alpha=0.3, T=3, seed=0)
        for stream, dom in ((quad, quad.domain), (ridge, None)):
            for s in collect_states(stream, dom, cfg, 110):
                worst = max(worst, unbias_oracle(stream, s).max_violation)
                cases += 1
        return worst, cases

    (worst, cases), dt = _timed(work)
    ok = worst <= 1e-10 and cases >= 200 and dt < 10
    return ok, f"{cases} states, max rel err {worst:.2e} (tol 1e-10), {dt:.1f}s (< 10s)"


def check_aggregate():
    def work():
        r = synthetic_ridge(500, 10, 1e-3, seed=0)
        viol = []
        csvrg_run(r, None, CsvrgConfig(alpha=0.3, T=20, seed=0),
                  stage_tap=lambda s: viol.append(aggregate_violation(r, s)))
        return max(viol), len(viol)

    (worst, cases), dt = _timed(work)
    ok = worst <= 1e-10 and cases == 499 and dt < 30
    return ok, f"{cases} stages, max rel err {worst:.2e} (tol 1e-10), {dt:.1f}s (< 30s)"


def check_sparsity():
    def work():
        bad = []
        for n in (10, 100, 1000):
            stream = synthetic_ridge(n, 2, 1e-3, seed=n)
            for a in (0.05, 0.1, 0.3, 0.5):
                ledger = FoLedger()
                res = csvrg_run(stream, None, CsvrgConfig(alpha=a, T=1, seed=0), ledger=ledger)
                sched = recompute_schedule(n, a)
                closed = (res.stage1_fos + 3 * (n - 1) + sum(2 * i - 1 for i in sched)
                          + (n - 1 - len(sched)))
                if len(res.recompute_stages) > math.ceil(math.log(n) / a) \
                        or recompute_bound(n, a) != math.ceil(math.log(n) / a) \
                        or not (ledger.count == res.total_fos == closed == res.fo_decomposition()):
                    bad.append((n, a))
        return bad

    bad, dt = _timed(work)
    ok = not bad and dt < 60
    return ok, f"12 (n, alpha) pairs, mismatches {bad}, {dt:.1f}s (< 60s)"


def check_drift():
    def work():
        violations, pairs = 0, 0
        rng = np.random.default_rng(0)
        for _ in range(100):
            dim = int(rng.integers(1, 6))
            dom = Domain.ball(np.zeros(dim), 1.0)
            q = QuadraticStream.random(50, dim, int(rng.integers(2**32)), scale=0.5, domain=dom)
            c = q.constants
            opt = np.array([q.optimum(i) for i in range(1, 51)])
            for i in range(1, 50):
                js = np.arange(1, 51 - i)
                d = np.linalg.norm(opt[i - 1 + js] - opt[i - 1], axis=1)
                violations += int(np.sum(d > drift_bound(i, js, c.mu, c.G)))
                pairs += len(js)
        return violations, pairs

    (violations, pairs), dt = _timed(work)
    ok = violations == 0 and dt < 20
    return ok, f"{pairs} (i, j) pairs on 100 instances, {violations} violations, {dt:.1f}s (< 20s)"


def check_adversarial():
    def work():
        err = max(abs(numeric_adversarial_gap(i) - 1.0 / (i**4 + 5 * i**3 + 7 * i**2 + 2 * i))
                  for i in range(2, 51))
        demos = [lowerbound_demo(n, seed) for n in (10, 20, 40) for seed in range(4)]
        unqueried = [d for d in demos if not d.hidden_queried]
        demo_ok = all(d.holds for d in demos) and all(d.gap >= d.bound for d in unqueried)
        return err, demo_ok, len(unqueried), len(demos)

    (err, demo_ok, unq, total), dt = _timed(work)
    ok = err <= 1e-9 and demo_ok and unq > 0 and dt < 10
    return ok, (f"max |numeric - formula| {err:.2e} (tol 1e-9), demos hold {demo_ok} "
                f"({unq}/{total} with hidden component unqueried), {dt:.1f}s (< 10s)")


@functools.lru_cache(maxsize=None)
def _experiment(tag: str, out_dir: str):
    path = Path(out_dir) / f"{tag}.csv"
    t0 = time.perf_counter()
    with contextlib.redirect_stdout(io.StringIO()):
        code = cli.main(["run", str(CONFIG), "-o", str(path)])
    return code, path, time.perf_counter() - t0


def _final_quartile(path: Path) -> dict:
    rows = list(csv.DictReader(path.open()))
    n = max(int(r["stage"]) for r in rows)
    start = n - n // 4 + 1
    gaps = {m: [] for m in METHODS}
    fos = {}
    for r in rows:
        if int(r["stage"]) >= start:
            gaps[r["method"]].append(float(r["gap_mean"]))
        if int(r["stage"]) == n:
            fos[r["method"]] = float(r["cum_fos_mean"])
    return {m: float(np.mean(g)) for m, g in gaps.items()}, fos


def check_repro(part: str, out_dir: str):
    code, path, dt = _experiment("first", out_dir)
    if code != 0:
        return False, f"run exited with {code}"
    gaps, fos = _final_quartile(path)
    timing = f"{dt:.0f}s (< 600s)"
    if part == "a":
        ok = gaps["csvrg"] < gaps["sgd"]
        msg = f"final-quartile gap csvrg {gaps['csvrg']:.3e} < FO-matched sgd {gaps['sgd']:.3e}"
    elif part == "b":
        ratio = fos["csvrg"] / fos["svrg"]
        ok = ratio <= 0.10
        msg = f"FO ratio csvrg/svrg {ratio:.4f} (<= 0.10)"
    else:
        ratio = gaps["csvrg"] / gaps["svrg"] if gaps["svrg"] > 0 else math.inf
        ok = ratio <= 10.0
        msg = (f"final-quartile gap csvrg {gaps['csvrg']:.3e} vs svrg {gaps['svrg']:.3e}, "
               f"ratio {ratio:.2e} (<= 10)")
    return ok and dt < 600, f"{msg}, {timing}"


def check_theoretical():
    def work():
        good, worst = 0, []
        for seed in range(10):
            dom = Domain.ball(np.zeros(3), 1.0)
            q = QuadraticStream.random(30, 3, seed=100 + seed, scale=0.5, domain=dom)
            cfg = CsvrgConfig(alpha=None, schedule="theoretical", epsilon=0.05,
                              step_mode="theoretical", seed=seed)
            res = csvrg_run(q, dom, cfg)
            gaps = [prefix_value(q, i, res.outputs[i - 1]) - prefix_value(q, i, q.optimum(i))
                    for i in range(1, 31)]
            worst.append(max(gaps))
            good += max(gaps) <= 0.05
        return good, max(worst)

    (good, worst), dt = _timed(work)
    ok = good >= 9 and dt < 300
    return ok, f"{good}/10 seeds eps-optimal at every stage (worst gap {worst:.2e}, eps 0.05), {dt:.1f}s (< 300s)"


def check_determinism(out_dir: str):
    c1, p1, _ = _experiment("first", out_dir)
    c2, p2, _ = _experiment("second", out_dir)
    same = c1 == c2 == 0 and p1.read_bytes() == p2.read_bytes()
    return same, f"two `run` invocations on {CONFIG.name}: byte-identical {same}"


CRITERIA = [
    ("1", "estimator unbiasedness", lambda d: check_unbias()),
    ("2", "aggregate identity", lambda d: check_aggregate()),
    ("3", "recompute sparsity and FO accounting", lambda d: check_sparsity()),
    ("4", "optimum drift bound", lambda d: check_drift()),
    ("5", "hard-instance gap formula", lambda d: check_adversarial()),
    ("6a", "CSVRG beats FO-matched SGD", lambda d: check_repro("a", d)),
    ("6b", "CSVRG uses <= 10% of SVRG's FOs", lambda d: check_repro("b", d)),
    ("6c", "CSVRG gap within 10x of SVRG", lambda d: check_repro("c", d)),
    ("7", "theoretical schedule is eps-optimal", lambda d: check_theoretical()),
    ("8", "determinism of `run`", check_determinism),
]


def _line(cid, name, ok, detail):
    return f"{'PASS' if ok else 'FAIL'} criterion {cid} ({name}): {detail}"


@pytest.fixture(scope="module")
def out_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("acceptance"))


@pytest.mark.slow
@pytest.mark.parametrize("cid, name, check", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(cid, name, check, out_dir, capsys):
    ok, detail = check(out_dir)
    with capsys.disabled():
        print("\n" + _line(cid, name, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        results = []
        for cid, name, check in CRITERIA:
            ok, detail = check(d)
            print(_line(cid, name, ok, detail), flush=True)
            results.append(ok)
    raise SystemExit(0 if all(results) else 1)
