"""Command line entry point: ``cfsm run|verify|lower-bound|fo-report``.

Exit codes: 0 success, 1 failed invariant, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness, verify
from .errors import CfsmError, ConfigError, InvalidInputError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _cmd_run(args) -> int:
    cfg = harness.ExperimentConfig.load(args.config)
    if args.runs is not None:
        cfg = harness.ExperimentConfig(cfg.problem, cfg.methods, args.runs, cfg.seed,
                                       cfg.output, cfg.epsilon, cfg.timing)
    output = args.output or cfg.output
    result = harness.run_experiment(cfg, output)
    if output is None:
        sys.stdout.write(result.to_csv())
    else:
        final = {name: vals[2][-1] for name, vals in result.summary().items()}
        print(f"wrote {output}")
        print(harness.format_fo_report(final))
    return EXIT_OK


def _cmd_verify(args) -> int:
    reports = verify.run_suites(args.suite)
    print(verify.OracleReport.header())
    for r in reports:
        print(r.line())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def _cmd_lower_bound(args) -> int:
    demo = verify.lowerbound_demo(args.n, args.seed)
    print("stage,hidden,hidden_queried,x1,x2,gap,bound,holds")
    print(f"{demo.stage},{demo.hidden},{str(demo.hidden_queried).lower()},{demo.output[0]!r},"
          f"{demo.output[1]!r},{demo.gap!r},{demo.bound!r},{str(demo.holds).lower()}")
    return EXIT_OK if demo.holds else EXIT_FAIL


def _cmd_fo_report(args) -> int:
    print(harness.format_fo_report(harness.read_final_fos(args.csv)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfsm", description="Continual finite-sum minimization toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a TOML config")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="CSV path (overrides [run].output; stdout if neither)")
    p.add_argument("--runs", type=int, help="override the number of seeds")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("--suite", default="all", choices=list(verify.SUITES) + ["all"])
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("lower-bound", help="demonstrate the gap on the hard instance")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_lower_bound)

    p = sub.add_parser("fo-report", help="final FO totals and ratios from a results CSV")
    p.add_argument("csv")
    p.set_defaults(func=_cmd_fo_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CfsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
