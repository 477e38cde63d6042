"""Command line interface.

Exit codes are a stable contract for scripting: 0 means the command ran and
matched its expectation (when one applies), 1 means a mismatch, 2 means the
input was invalid. `run --exit-goals` instead exits with 10 plus a goal
bitmask (D=1, M=2, T=4) so scripts can branch on the outcome triple.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import harness
from .errors import ScenarioError, ValidationError
from .scenario import constants_from_dict, load_scenario


def _write(out_dir, name: str, text: str) -> None:
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_constants(path):
    if path is None:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return constants_from_dict(json.load(fh))


def cmd_run(args) -> int:
    spec = load_scenario(args.scenario)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    result = harness.run_scenario(spec)
    print(f"scenario={spec.name} seed={spec.seed} ticks={result.ticks} "
          f"manual_steps={result.manual_steps}")
    for step, outcome in result.step_results:
        print(f"  step {step}: {outcome}")
    print(f"goals: {result.report.goals()}")
    _write(args.out, "run.json", json.dumps(result.to_dict(), indent=2) + "\n")
    if args.trace:
        _write(args.out or ".", "trace.txt", "\n".join(result.trace_lines) + "\n")
    mismatches = harness.check_expectation(result)
    if mismatches is not None:
        if mismatches:
            for goal, diff in sorted(mismatches.items()):
                print(f"MISMATCH {goal}: expected {diff['expected']}, "
                      f"got {diff['actual']}")
            return 1
        print("expectation matched")
        return 0
    if args.exit_goals:
        mask = (1 * result.report.disruption + 2 * result.report.manipulation
                + 4 * result.report.takeover)
        return 10 + mask
    return 0


def cmd_matrix(args) -> int:
    constants = _load_constants(args.constants)
    report = harness.run_matrix(seed=args.seed, constants=constants)
    print(report.render())
    _write(args.out, "matrix.json", json.dumps(report.to_dict(), indent=2) + "\n")
    return 0 if report.matches else 1


def cmd_defaults(args) -> int:
    rows = harness.defaults_report()
    print(harness.render_defaults(rows))
    matches, diffs = harness.defaults_matches()
    _write(args.out, "defaults.json",
           json.dumps({"rows": rows, "matches": matches}, indent=2) + "\n")
    if not matches:
        print(f"defaults diverge from the expected capability table: {diffs}")
        return 1
    print("defaults match the expected capability table")
    return 0


def cmd_calibrate(args) -> int:
    constants = _load_constants(args.constants)
    counts = tuple(args.counts) if args.counts else harness.DEFAULT_SWEEP
    report = harness.calibrate(seed=args.seed, counts=counts, constants=constants)
    print(report.render())
    _write(args.out, "calibrate.json", json.dumps(report.to_dict(), indent=2) + "\n")
    ok = (report.monotone and report.threshold is not None
          and 10 <= report.threshold <= 25)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshsim",
        description="Deterministic service mesh security simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--trace", action="store_true")
    p_run.add_argument("--exit-goals", action="store_true",
                       help="exit with 10 + goal bitmask (D=1, M=2, T=4)")
    p_run.set_defaults(func=cmd_run)

    p_matrix = sub.add_parser("matrix", help="run all 20 level x mechanism cells")
    p_matrix.add_argument("--seed", type=int, default=42)
    p_matrix.add_argument("--out", default=None)
    p_matrix.add_argument("--constants", default=None)
    p_matrix.set_defaults(func=cmd_matrix)

    p_defaults = sub.add_parser("defaults", help="report mechanism defaults")
    p_defaults.add_argument("--out", default=None)
    p_defaults.set_defaults(func=cmd_defaults)

    p_cal = sub.add_parser("calibrate", help="sweep attacker counts for the "
                                             "flood disruption threshold")
    p_cal.add_argument("--seed", type=int, default=42)
    p_cal.add_argument("--out", default=None)
    p_cal.add_argument("--constants", default=None)
    p_cal.add_argument("--counts", type=int, nargs="*", default=None)
    p_cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ScenarioError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
