"""Scenario execution and reporting: single runs, the 4x5 adversarial-goal
matrix, the flood calibration sweep, and the mechanism defaults report.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from . import security, statestore
from .adversary import AdversaryController, GoalReport, parse_steps
from .cluster import Cluster
from .scenario import (LEVEL_ORDER, ScenarioSpec, SimConstants, AdversarySpec,
                       Topology, UNPRIVILEGED)
from .security import COLUMN_ORDER, COLUMNS, SecurityConfig


def _load_data(name: str) -> dict:
    with resources.files("meshsim").joinpath("data", name).open("r") as fh:
        return json.load(fh)


@dataclass
class RunResult:
    spec: ScenarioSpec
    report: GoalReport
    trace_lines: list[str]
    manual_steps: int
    ticks: int
    step_results: list
    cluster: Cluster

    def to_dict(self) -> dict:
        return {
            "name": self.spec.name,
            "seed": self.spec.seed,
            "goals": self.report.to_dict(),
            "manual_steps": self.manual_steps,
            "ticks": self.ticks,
            "steps": [{"step": s, "outcome": o} for s, o in self.step_results],
        }


def build_controller(cluster: Cluster, spec: ScenarioSpec) -> Optional[AdversaryController]:
    if spec.adversary is None:
        return None
    ctl = AdversaryController(cluster, spec.adversary.level,
                              sybil_count=spec.adversary.sybil_count)
    if spec.adversary.steps is not None:
        ctl.steps = parse_steps(spec.adversary.steps, ctl.sybil_ids)
    return ctl


def run_scenario(spec: ScenarioSpec) -> RunResult:
    cluster = Cluster(spec)
    cluster.run_setup()
    controller = build_controller(cluster, spec)
    while cluster.now < spec.max_ticks:
        cluster.step()
        if controller is not None and controller.finished:
            break
    mon = cluster.monitors
    if controller is not None:
        report = controller.goal_report(cluster)
        steps = controller.step_results
    else:
        report = GoalReport(mon.disruption, mon.manipulation, mon.takeover,
                            {k: list(v) for k, v in mon.evidence.items()})
        steps = []
    cluster.trace("-", "scenario_end", f"goals={report.goals().replace(' ', '')}"
                  if report.goals() != "---" else "goals=---")
    return RunResult(spec=spec, report=report, trace_lines=cluster.trace_log.lines(),
                     manual_steps=cluster.manual_steps, ticks=cluster.now,
                     step_results=steps, cluster=cluster)


def check_expectation(result: RunResult) -> Optional[dict]:
    """Compare a run against its scenario's expectation block, if present."""
    exp = result.spec.expectation
    if exp is None:
        return None
    mismatches = {}
    got = {"disruption": result.report.disruption,
           "manipulation": result.report.manipulation,
           "takeover": result.report.takeover}
    for key, want in exp.items():
        if got[key] != want:
            mismatches[key] = {"expected": want, "actual": got[key]}
    return mismatches


# -- goal matrix ------------------------------------------------------------

def matrix_spec(level: str, column: str, seed: int,
                constants: Optional[SimConstants] = None,
                sybil_count: int = 25) -> ScenarioSpec:
    return ScenarioSpec(
        seed=seed,
        name=f"{level}|{column}",
        security=COLUMNS[column],
        topology=Topology(),
        adversary=AdversarySpec(level=level, sybil_count=sybil_count),
        constants=constants if constants is not None else SimConstants(),
        max_ticks=400,
    )


@dataclass
class MatrixReport:
    seed: int
    cells: dict = field(default_factory=dict)      # (level, column) -> GoalReport
    expected: dict = field(default_factory=dict)   # (level, column) -> goal string
    mismatches: list = field(default_factory=list)
    manual_steps: dict = field(default_factory=dict)

    @property
    def matches(self) -> bool:
        return not self.mismatches

    def cell_goals(self, level: str, column: str) -> str:
        return self.cells[(level, column)].goals()

    def render(self) -> str:
        width = 22
        header = "".ljust(width) + "".join(c.ljust(8) for c in COLUMN_ORDER)
        lines = [header, "-" * len(header)]
        for level in LEVEL_ORDER:
            row = level.ljust(width)
            for column in COLUMN_ORDER:
                row += self.cell_goals(level, column).replace(" ", "").ljust(8)
            lines.append(row)
        verdict = ("all 20 cells match the expected goal matrix" if self.matches
                   else f"{len(self.mismatches)} cell(s) diverge: " +
                        ", ".join(f"{l}/{c} expected {e} got {g}"
                                  for l, c, e, g in self.mismatches))
        lines.append(verdict)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rows": list(LEVEL_ORDER),
            "columns": list(COLUMN_ORDER),
            "cells": {f"{l}|{c}": self.cells[(l, c)].to_dict()
                      for l in LEVEL_ORDER for c in COLUMN_ORDER},
            "expected": {f"{l}|{c}": self.expected[(l, c)]
                         for l in LEVEL_ORDER for c in COLUMN_ORDER},
            "mismatches": [{"level": l, "column": c, "expected": e, "actual": g}
                           for l, c, e, g in self.mismatches],
            "matches": self.matches,
        }


def expected_matrix() -> dict:
    data = _load_data("goal_matrix_expected.json")
    out = {}
    for level in LEVEL_ORDER:
        for column in COLUMN_ORDER:
            out[(level, column)] = data["cells"][level][column]
    return out


def run_matrix(seed: int = 42, constants: Optional[SimConstants] = None,
               sybil_count: int = 25) -> MatrixReport:
    report = MatrixReport(seed=seed, expected=expected_matrix())
    for level in LEVEL_ORDER:
        for column in COLUMN_ORDER:
            spec = matrix_spec(level, column, seed, constants, sybil_count)
            result = run_scenario(spec)
            report.cells[(level, column)] = result.report
            report.manual_steps[(level, column)] = result.manual_steps
            got = result.report.goals().replace(" ", "") or "---"
            want = report.expected[(level, column)]
            got_norm = got if got != "" else "---"
            if got_norm != want:
                report.mismatches.append((level, column, want, got_norm))
    return report


# -- flood calibration -------------------------------------------------------

DEFAULT_SWEEP = (1, 2, 3, 5, 8, 10, 12, 14, 15, 16, 17, 18, 20, 22, 25, 28, 30)


@dataclass
class CalibrationReport:
    seed: int
    rows: list = field(default_factory=list)  # (k, disrupted, ticks_into_flood)

    @property
    def threshold(self) -> Optional[int]:
        for k, disrupted, _ in self.rows:
            if disrupted:
                return k
        return None

    @property
    def monotone(self) -> bool:
        """Once a count disrupts, every larger count must too, and onset
        (measured from flood start) must never regress."""
        seen_true = False
        last_onset = None
        for _, disrupted, onset in self.rows:
            if seen_true and not disrupted:
                return False
            if disrupted and onset is not None and last_onset is not None:
                if onset > last_onset:
                    return False
            if disrupted:
                last_onset = onset
            seen_true = seen_true or disrupted
        return True

    def render(self) -> str:
        lines = ["attackers  disrupted  ticks_into_flood"]
        for k, disrupted, onset in self.rows:
            lines.append(f"{k:>9}  {str(disrupted).lower():>9}  "
                         f"{onset if onset is not None else '-':>16}")
        lines.append(f"threshold={self.threshold} monotone={self.monotone}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"seed": self.seed,
                "rows": [{"attackers": k, "disrupted": d, "ticks_into_flood": o}
                         for k, d, o in self.rows],
                "threshold": self.threshold, "monotone": self.monotone}


def _flood_start_tick(result: RunResult) -> Optional[int]:
    for tick, _, kind, _ in result.cluster.trace_log.events:
        if kind == "flood_started":
            return tick
    return None


def calibrate(seed: int = 42, counts=DEFAULT_SWEEP,
              constants: Optional[SimConstants] = None) -> CalibrationReport:
    """Sweep the ACL-only flood over attacker counts and report the
    disruption threshold curve."""
    report = CalibrationReport(seed=seed)
    for k in counts:
        spec = matrix_spec(UNPRIVILEGED, "acls", seed, constants, sybil_count=k)
        result = run_scenario(spec)
        mon = result.cluster.monitors
        onset = None
        start = _flood_start_tick(result)
        if result.report.disruption and start is not None:
            onset = mon.disruption_tick - start
        report.rows.append((k, result.report.disruption, onset))
    return report


# -- defaults report ----------------------------------------------------------

CREDENTIAL_TYPES = {
    "GossipKey": security.GossipKey,
    "Certificate": security.Certificate,
    "AclToken": statestore.AclToken,
}

ROTATION_VERBS = ("rotate", "redistribute", "reissue", "renew")


def _has_rotation_support(cls_name: str) -> bool:
    """True only if some rotation-style operation exists for the credential,
    either module-level or on the credential type itself. None do."""
    cls = CREDENTIAL_TYPES[cls_name]
    names = list(dir(cls))
    for module in (security, statestore):
        names.extend(dir(module))
    return any(name.startswith(verb) for name in names for verb in ROTATION_VERBS)


def defaults_report() -> list[dict]:
    """Introspect the mechanism registry: what exists, what is on by default,
    how long credentials live, and whether anything rotates them."""
    stock = SecurityConfig()
    rows = []
    for mech in security.MECHANISMS:
        cls = CREDENTIAL_TYPES[mech.credential_type]
        fields = {f.name for f in dataclasses.fields(cls)}
        rows.append({
            "mechanism": mech.name,
            "available": True,
            "enabled_by_default": getattr(stock, mech.config_attr),
            "default_lifetime": mech.lifetime_label,
            "revocation": "lifetime" in fields,
            "redistribution": _has_rotation_support(mech.credential_type),
        })
    return rows


def defaults_expected() -> list[dict]:
    return _load_data("mechanism_defaults_expected.json")["rows"]


def defaults_matches() -> tuple[bool, list[dict]]:
    actual = defaults_report()
    expected = defaults_expected()
    diffs = []
    for got, want in zip(actual, expected):
        if got != want:
            diffs.append({"actual": got, "expected": want})
    return (len(actual) == len(expected) and not diffs), diffs


def render_defaults(rows: list[dict]) -> str:
    cols = ("mechanism", "available", "enabled_by_default", "default_lifetime",
            "revocation", "redistribution")
    widths = {c: max(len(c), max(len(str(r[c])) for r in rows)) for c in cols}
    head = "  ".join(c.ljust(widths[c]) for c in cols)
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(widths[c]) for c in cols))
    return "\n".join(lines)
