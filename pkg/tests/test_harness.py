"""Scenario files, CLI contract, matrix and defaults reporting, traces."""

import json
import os

import pytest

from meshsim.cli import main
from meshsim.errors import ValidationError
from meshsim.harness import (defaults_matches, defaults_report, run_matrix,
                             run_scenario)
from meshsim.scenario import SimConstants, load_scenario, spec_from_dict

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")


def scenario_path(name):
    return os.path.join(SCENARIO_DIR, name)


def test_load_baseline_scenario():
    spec = load_scenario(scenario_path("baseline.json"))
    assert spec.seed == 42
    assert spec.topology.servers == 3 and spec.topology.clients == 1
    assert spec.adversary is None


def test_missing_seed_is_a_validation_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"schema_version": 1, "security": {}}')
    with pytest.raises(ValidationError, match="seed"):
        load_scenario(str(p))


def test_two_bootstrappers_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"schema_version": 1, "seed": 1,
                             "topology": {"servers": 3, "clients": 1,
                                          "bootstrappers": [1, 2]}}))
    with pytest.raises(ValidationError, match="bootstrapper"):
        load_scenario(str(p))


def test_parse_error_reports_line_context(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"seed": 42,\n  "security": }')
    with pytest.raises(ValidationError, match=r":2:"):
        load_scenario(str(p))


def test_unknown_fields_rejected():
    with pytest.raises(ValidationError, match="unknown fields"):
        spec_from_dict({"seed": 1, "wat": True})
    with pytest.raises(ValidationError, match="security"):
        spec_from_dict({"seed": 1, "security": "bogus-preset"})


def test_same_seed_runs_are_byte_identical(tmp_path):
    spec = load_scenario(scenario_path("default_config.json"))
    a = run_scenario(spec)
    b = run_scenario(spec)
    assert "\n".join(a.trace_lines) == "\n".join(b.trace_lines)


def test_trace_completeness_and_uniqueness():
    spec = load_scenario(scenario_path("default_config.json"))
    result = run_scenario(spec)
    lines = result.trace_lines
    # commits appear exactly once per index
    commits = [l.split("detail=")[1] for l in lines if "kind=commit" in l]
    indexes = [c.split()[0] for c in commits]
    assert len(indexes) == len(set(indexes)) and indexes
    # each eviction appears exactly once per member
    left = [l.split("node=")[1].split()[0] for l in lines if "kind=member_left" in l]
    assert len(left) == len(set(left))
    # each goal fires at most once
    for goal in ("disruption", "manipulation", "takeover"):
        fired = [l for l in lines if f"goal={goal}" in l and "goal_fired" in l]
        assert len(fired) == 1
    # availability flips alternate
    flips = [l.split("available=")[1] for l in lines if "availability_flip" in l]
    assert all(a != b for a, b in zip(flips, flips[1:]))
    # every line carries the stable four-field shape
    assert all(l.startswith("tick=") and " kind=" in l and " detail=" in l
               for l in lines)


def test_matrix_matches_expected_table(matrix_report):
    assert matrix_report.matches
    assert len(matrix_report.cells) == 20
    grid = matrix_report.render()
    assert "all 20 cells match" in grid


def test_matrix_mismatches_are_listed_under_miscalibration():
    """Free verification makes the flood harmless, so the three ACL-column
    disruption cells (and only those) must be flagged as mismatches."""
    rep = run_matrix(seed=42, constants=SimConstants(cost_verify=0.0))
    flagged = {(l, c) for l, c, _, _ in rep.mismatches}
    assert flagged == {("unprivileged", "acls"), ("client_compromise", "acls"),
                       ("server_compromise", "acls")}
    for level, column, expected, got in rep.mismatches:
        assert expected == "D" and got == "---"


def test_defaults_report_matches_capability_table():
    ok, diffs = defaults_matches()
    assert ok, diffs
    rows = {r["mechanism"]: r for r in defaults_report()}
    enc = rows["Cluster Message Encryption"]
    assert (enc["available"], enc["enabled_by_default"]) == (True, False)
    assert (enc["default_lifetime"], enc["revocation"], enc["redistribution"]) \
        == ("inf", False, False)
    tls = rows["Service Message Encryption"]
    assert (tls["default_lifetime"], tls["revocation"], tls["redistribution"]) \
        == ("1 year", True, False)
    sac = rows["Service Access Control"]
    assert (sac["enabled_by_default"], sac["default_lifetime"]) == (False, "inf")


def test_cli_run_expectation_match_exits_zero(tmp_path):
    rc = main(["run", scenario_path("default_config.json"),
               "--out", str(tmp_path), "--trace"])
    assert rc == 0
    assert (tmp_path / "run.json").exists()
    assert (tmp_path / "trace.txt").exists()
    payload = json.loads((tmp_path / "run.json").read_text())
    assert payload["goals"]["goals"] == "D M T"


def test_cli_run_expectation_mismatch_exits_one(tmp_path):
    p = tmp_path / "wrong.json"
    spec = json.loads(open(scenario_path("all_mechanisms.json")).read())
    spec["expectation"] = {"disruption": True}
    p.write_text(json.dumps(spec))
    assert main(["run", str(p)]) == 1


def test_cli_invalid_input_exits_two(tmp_path):
    p = tmp_path / "invalid.json"
    p.write_text('{"security": {}}')
    assert main(["run", str(p)]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_cli_exit_goals_encodes_triple(tmp_path):
    p = tmp_path / "noexp.json"
    spec = json.loads(open(scenario_path("open_registry.json")).read())
    del spec["expectation"]
    p.write_text(json.dumps(spec))
    rc = main(["run", str(p), "--exit-goals"])
    assert rc == 10 + 2  # manipulation only


def test_cli_defaults_exits_zero(tmp_path):
    assert main(["defaults", "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "defaults.json").read_text())
    assert payload["matches"]


def test_cli_calibrate_with_reduced_sweep(tmp_path):
    rc = main(["calibrate", "--counts", "3", "14", "16", "25",
               "--out", str(tmp_path)])
    assert rc == 0
    payload = json.loads((tmp_path / "calibrate.json").read_text())
    assert payload["monotone"] and 10 <= payload["threshold"] <= 25


def test_run_reports_manual_configuration_burden():
    spec = load_scenario(scenario_path("all_mechanisms.json"))
    result = run_scenario(spec)
    # four nodes x (label + key + cert) plus token authoring and handout
    assert result.manual_steps >= 3 * 4 + 4
    baseline = run_scenario(load_scenario(scenario_path("baseline.json")))
    assert baseline.manual_steps == 0
