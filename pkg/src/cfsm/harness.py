"""Experiment orchestration: TOML config in, per-stage gap statistics out as CSV.

A config has three parts::

    [problem]            # synthetic | libsvm | quadratic
    kind = "synthetic"
    n = 2000
    dim = 20
    lam = 1e-3

    [methods.csvrg]      # table name is the method label; `type` defaults to it
    alpha = 0.3
    T = 100

    [methods.sgd]
    T = "match"          # spread CSVRG's total FOs over the stages

    [run]
    runs = 10
    seed = 0             # run r uses algorithm seed seed + r
    output = "results.csv"

Runs for different seeds are independent and may execute on a thread pool
(``CFSM_THREADS``); rows are assembled afterwards in a fixed order, so the
CSV does not depend on the degree of parallelism.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .baselines import (
    SgdConfig,
    SgdSparseConfig,
    VrConfig,
    katyusha_run,
    match_budget,
    sgd_run,
    sgd_sparse_run,
    sparse_invocation_stages,
    svrg_run,
)
from .core import ComponentStream, Domain, prefix_value
from .csvrg import CsvrgConfig, csvrg_run
from .errors import CfsmError, ConfigError, NumericError
from .problems import QuadraticStream, RidgeStream, load_libsvm_ridge, synthetic_ridge

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

METHOD_TYPES = ("csvrg", "sgd", "sgd_sparse", "svrg", "katyusha")
CSV_HEADER = ["stage", "method", "gap_mean", "gap_std", "cum_fos_mean", "wall_ms_mean"]


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class MethodSpec:
    name: str
    type: str
    params: dict


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    methods: tuple
    runs: int = 10
    seed: int = 0
    output: Optional[str] = None
    epsilon: Optional[float] = None
    timing: bool = False

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not (isinstance(self.runs, int) and self.runs >= 1):
            raise ConfigError("run.runs must be a positive integer")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError("method names must be unique")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        unknown = set(data) - {"problem", "methods", "run"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        problem = dict(data.get("problem", {}))
        if "path" in problem and base_dir is not None:
            p = Path(problem["path"])
            problem["path"] = str(p if p.is_absolute() else base_dir / p)
        methods = []
        for name, params in data.get("methods", {}).items():
            if not isinstance(params, dict):
                raise ConfigError(f"[methods.{name}] must be a table")
            params = dict(params)
            mtype = params.pop("type", name)
            if mtype not in METHOD_TYPES:
                raise ConfigError(f"unknown method type {mtype!r} for {name!r}")
            methods.append(MethodSpec(name, mtype, params))
        run = dict(data.get("run", {}))
        allowed = {"runs", "seed", "output", "epsilon", "timing"}
        if set(run) - allowed:
            raise ConfigError(f"unknown [run] keys: {sorted(set(run) - allowed)}")
        output = run.get("output")
        if output is not None and base_dir is not None and not Path(output).is_absolute():
            output = str(base_dir / output)
        return cls(problem=problem, methods=tuple(methods), runs=run.get("runs", 10),
                   seed=run.get("seed", 0), output=output, epsilon=run.get("epsilon"),
                   timing=bool(run.get("timing", False)))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data, path.parent)


# --------------------------------------------------------------------------
# problems


@dataclass
class Problem:
    stream: ComponentStream
    domain: Domain
    _gap_fn: Any = field(repr=False, default=None)

    def gaps(self, outputs: np.ndarray) -> np.ndarray:
        return self._gap_fn(outputs)


def _take(spec: dict, key: str, default=None, required=False):
    if key in spec:
        return spec[key]
    if required:
        raise ConfigError(f"[problem] needs {key!r}")
    return default


def build_problem(spec: dict) -> Problem:
    kind = spec.get("kind", "synthetic")
    known = {
        "synthetic": {"kind", "n", "dim", "lam", "seed", "row_norm", "flip", "standardize"},
        "libsvm": {"kind", "path", "lam", "standardize", "limit"},
        "quadratic": {"kind", "n", "dim", "seed", "scale", "radius"},
    }
    if kind not in known:
        raise ConfigError(f"unknown problem kind {kind!r}")
    extra = set(spec) - known[kind]
    if extra:
        raise ConfigError(f"unknown [problem] keys for {kind}: {sorted(extra)}")
    if kind == "quadratic":
        dim = int(_take(spec, "dim", 5))
        radius = float(_take(spec, "radius", 1.0))
        domain = Domain.ball(np.zeros(dim), radius)
        q = QuadraticStream.random(int(_take(spec, "n", required=True)), dim, int(_take(spec, "seed", 0)),
                                   scale=float(_take(spec, "scale", 0.5)), domain=domain, radius=radius)
        opt = np.array([q.optimum(i) for i in range(1, q.n + 1)])
        best = np.array([prefix_value(q, i, opt[i - 1]) for i in range(1, q.n + 1)])

        def qgaps(X):
            return np.array([prefix_value(q, i, X[i - 1]) for i in range(1, q.n + 1)]) - best

        return Problem(q, domain, qgaps)
    if kind == "synthetic":
        stream = synthetic_ridge(int(_take(spec, "n", required=True)), int(_take(spec, "dim", required=True)),
                                 float(_take(spec, "lam", 1e-3)), int(_take(spec, "seed", 0)),
                                 row_norm=float(_take(spec, "row_norm", 0.1)),
                                 flip=float(_take(spec, "flip", 0.1)),
                                 standardize=bool(_take(spec, "standardize", False)))
    else:
        limit = _take(spec, "limit")
        stream = load_libsvm_ridge(_take(spec, "path", required=True), float(_take(spec, "lam", 1e-3)),
                                   bool(_take(spec, "standardize", False)),
                                   None if limit is None else int(limit))
    opt = stream.optima()
    return Problem(stream, Domain.unconstrained(), lambda X: opt.gaps(stream, X))


# --------------------------------------------------------------------------
# runs


@dataclass(frozen=True)
class RunRecord:
    """One stage of one run of one method."""

    stage: int
    method: str
    gap: float
    cum_fos: int
    wall: float


@dataclass
class MethodRun:
    gaps: np.ndarray
    fos: np.ndarray
    wall: np.ndarray

    def records(self, method: str):
        for i in range(len(self.gaps)):
            yield RunRecord(i + 1, method, float(self.gaps[i]), int(self.fos[i]), float(self.wall[i]))


def _pick(params: dict, allowed: set, name: str) -> dict:
    extra = set(params) - allowed
    if extra:
        raise ConfigError(f"unknown keys for method {name!r}: {sorted(extra)}")
    return params


def _run_method(spec: MethodSpec, problem: Problem, seed: int, csvrg_total: Optional[int],
                epsilon: Optional[float]):
    p = dict(spec.params)
    stream, domain = problem.stream, problem.domain
    n = stream.n
    if spec.type == "csvrg":
        _pick(p, {"alpha", "T", "schedule", "T_table", "epsilon", "step_mode", "base_step", "beta",
                  "stage1_tol", "fast"}, spec.name)
        if epsilon is not None:
            p.setdefault("epsilon", epsilon)
        if "T_table" in p:
            p["T_table"] = tuple(p["T_table"])
        res = csvrg_run(stream, domain, CsvrgConfig(seed=seed, **p))
        return res.outputs, res.fos, res.wall
    if spec.type in ("sgd", "sgd_sparse"):
        keys = {"T", "gamma", "exclude_last", "fast"} | ({"alpha"} if spec.type == "sgd_sparse" else set())
        _pick(p, keys, spec.name)
        T = p.get("T", 300 if spec.type == "sgd" else 414)
        if T == "match":
            if csvrg_total is None:
                raise ConfigError(f"{spec.name}: T = 'match' needs a csvrg method in the same config")
            if spec.type == "sgd":
                T = match_budget(csvrg_total, n)
            else:
                stages = sparse_invocation_stages(n, p.get("alpha", 0.002))
                share = match_budget(csvrg_total, len(stages))
                T = [1] * n
                for s, t in zip(stages, share):
                    T[s - 1] = t
        elif isinstance(T, list):
            T = tuple(T)
        p["T"] = T
        if spec.type == "sgd":
            res = sgd_run(stream, domain, SgdConfig(seed=seed, **p))
        else:
            res = sgd_sparse_run(stream, domain, SgdSparseConfig(seed=seed, **p))
        return res.outputs, res.fos, res.wall
    _pick(p, {"outer", "inner", "step", "tau1", "tau2", "fast"}, spec.name)
    fn = svrg_run if spec.type == "svrg" else katyusha_run
    res = fn(stream, domain, VrConfig(seed=seed, **p))
    return res.outputs, res.fos, res.wall


def run_seed(config: ExperimentConfig, problem: Problem, seed: int) -> dict:
    """All methods for one algorithm seed; failures map to ``None``."""
    out: dict[str, Optional[MethodRun]] = {}
    csvrg_total = None
    order = sorted(config.methods, key=lambda m: m.type != "csvrg")
    for spec in order:
        try:
            X, fos, wall = _run_method(spec, problem, seed, csvrg_total, config.epsilon)
        except NumericError as exc:
            warnings.warn(f"{spec.name} seed {seed}: {exc}; run excluded", RuntimeWarning, stacklevel=2)
            out[spec.name] = None
            continue
        if spec.type == "csvrg" and csvrg_total is None:
            csvrg_total = int(fos[-1])
        if np.any(np.diff(fos) < 0):
            raise NumericError(f"{spec.name}: cumulative FOs decreased")
        out[spec.name] = MethodRun(problem.gaps(X), fos, wall)
    return out


def _threads() -> int:
    raw = os.environ.get("CFSM_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"CFSM_THREADS must be an integer, got {raw!r}") from None
    return max(1, k)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    n: int
    runs: list  # one dict per seed: method -> MethodRun | None

    def summary(self) -> dict:
        """``method -> (gap_mean, gap_std, fos_mean, wall_ms_mean)`` arrays over stages."""
        table = {}
        for spec in self.config.methods:
            ok = [r[spec.name] for r in self.runs if r[spec.name] is not None]
            if not ok:
                nan = np.full(self.n, np.nan)
                table[spec.name] = (nan, nan, nan, nan)
                continue
            G = np.array([m.gaps for m in ok])
            F = np.array([m.fos for m in ok], dtype=np.float64)
            W = np.array([m.wall for m in ok]) * 1e3
            wall = W.mean(0) if self.config.timing else np.full(self.n, np.nan)
            table[spec.name] = (G.mean(0), G.std(0), F.mean(0), wall)
        return table

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        table = self.summary()
        for i in range(self.n):
            for spec in self.config.methods:
                g, s, f, t = (a[i] for a in table[spec.name])
                w.writerow([i + 1, spec.name, _fmt(g), _fmt(s), _fmt(f), _fmt(t)])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else repr(float(v))


def run_experiment(config: ExperimentConfig, output: Optional[str] = None) -> ExperimentResult:
    problem = build_problem(config.problem)
    seeds = [config.seed + r for r in range(config.runs)]
    threads = min(_threads(), len(seeds))
    log.info("running %d seeds x %d methods on %d threads", len(seeds), len(config.methods), threads)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(lambda s: run_seed(config, problem, s), seeds))
    else:
        runs = [run_seed(config, problem, s) for s in seeds]
    result = ExperimentResult(config, problem.stream.n, runs)
    path = output or config.output
    if path is not None:
        Path(path).write_text(result.to_csv(), encoding="utf-8")
    return result


# --------------------------------------------------------------------------
# FO report


def read_final_fos(csv_path) -> dict:
    """``method -> cum_fos_mean`` at the last stage present in the CSV."""
    final: dict[str, tuple[int, float]] = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(CSV_HEADER) <= set(reader.fieldnames):
            raise ConfigError(f"{csv_path}: not a results CSV (expected header {','.join(CSV_HEADER)})")
        for row in reader:
            try:
                stage, fos = int(row["stage"]), float(row["cum_fos_mean"])
            except ValueError as exc:
                raise ConfigError(f"{csv_path}: bad row {row}") from exc
            name = row["method"]
            if name not in final or stage >= final[name][0]:
                final[name] = (stage, fos)
    return {k: v[1] for k, v in final.items()}


def fo_report(final_fos: dict) -> tuple[list, list]:
    """Per-method totals and pairwise ratios ``a / b`` (omitted with fewer than two methods)."""
    totals = list(final_fos.items())
    ratios = []
    if len(totals) >= 2:
        for a, fa in totals:
            for b, fb in totals:
                if a != b:
                    ratios.append((a, b, fa / fb if fb else math.inf))
    return totals, ratios


def format_fo_report(final_fos: dict) -> str:
    totals, ratios = fo_report(final_fos)
    lines = ["method,final_fos"]
    lines += [f"{m},{f:.0f}" for m, f in totals]
    if ratios:
        lines.append("numerator,denominator,ratio")
        lines += [f"{a},{b},{r:.6f}" for a, b, r in ratios]
    return "\n".join(lines)
