"""Command-line front end.

Subcommands: ``solve`` runs a JSON config file, ``scenario`` runs one or
more bundled scenarios by name, ``verify`` runs the identity/refinement
battery.  Reports are emitted as JSON (stdout or ``--out``).  Exit codes:
0 when the outcome matched the scenario's expectation and every check
passed, 2 for validation problems, 3 when the solver diverged or ran out
of iterations, 4 for failed checks or a verdict that contradicts the
expectation.  No environment variables are consulted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .geometry import ConstructionError, GridMismatchError, ModelDomainError
from .formulas import FormulaError
from .scenarios import (
    BUILTIN_SCENARIOS,
    ValidationError,
    builtin_config,
    parse_config,
    run_scenario,
    run_verification_suite,
)

_CONFIG_ERRORS = (ValidationError, FormulaError, ConstructionError,
                  GridMismatchError, ModelDomainError)


def _emit(payload, out_path: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="ascii") as fh:
            fh.write(text)


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--out", metavar="REPORT.json", help="write the JSON report here")
    sub.add_argument("--dump-fields", metavar="DIR",
                     help="write final height/residual fields as CSV into DIR")
    sub.add_argument("--refine", type=int, default=0, metavar="K",
                     help="add K companion runs with axis counts doubled per level")
    sub.add_argument("--seed", type=int, default=None, metavar="N",
                     help="override the seed of a random(...) initial field")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmclab",
        description="Prescribed-mean-curvature graphs over warped-product fibers.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    solve = subs.add_parser("solve", help="run a scenario config file")
    solve.add_argument("config", metavar="CONFIG.json")
    _add_run_flags(solve)

    scenario = subs.add_parser("scenario", help="run bundled scenarios by name")
    scenario.add_argument("names", nargs="+", metavar="NAME",
                          help=f"one of: {', '.join(sorted(BUILTIN_SCENARIOS))}")
    scenario.add_argument("--parallel", action="store_true",
                          help="run independent scenarios concurrently")
    _add_run_flags(scenario)

    verify = subs.add_parser("verify", help="run the identity verification battery")
    verify.add_argument("--out", metavar="REPORT.json")
    return parser


def _scenario_report(name: str, args) -> "RunReport":
    config = builtin_config(name)
    dump = None
    if args.dump_fields is not None:
        dump = os.path.join(args.dump_fields, name) if len(args.names) > 1 \
            else args.dump_fields
    return run_scenario(config, scenario_name=name, dump_dir=dump,
                        refine=args.refine, seed_override=args.seed)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "solve":
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                config = parse_config(fh.read())
        except OSError as e:
            print(f"cannot read config: {e}", file=sys.stderr)
            return 2
        except _CONFIG_ERRORS as e:
            print(f"invalid config: {e}", file=sys.stderr)
            return 2
        report = run_scenario(config, dump_dir=args.dump_fields,
                              refine=args.refine, seed_override=args.seed)
        _emit(report.to_json_dict(), args.out)
        return report.exit_code()

    if args.command == "scenario":
        try:
            if args.parallel and len(args.names) > 1:
                with ThreadPoolExecutor(max_workers=len(args.names)) as pool:
                    reports = list(pool.map(lambda n: _scenario_report(n, args), args.names))
            else:
                reports = [_scenario_report(name, args) for name in args.names]
        except _CONFIG_ERRORS as e:
            print(f"invalid scenario: {e}", file=sys.stderr)
            return 2
        payload = reports[0].to_json_dict() if len(reports) == 1 \
            else [r.to_json_dict() for r in reports]
        _emit(payload, args.out)
        return max(r.exit_code() for r in reports)

    suite = run_verification_suite()
    _emit(suite, args.out)
    failing = [entry["suite"] for entry in suite if not entry["pass"]]
    if failing:
        print(f"verification failed: {', '.join(failing)}", file=sys.stderr)
        return 4
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
