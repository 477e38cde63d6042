"""Acceptance gate: one test per criterion, one printed verdict line each.

Run as `pytest tests/test_acceptance.py -v -s` to see the verdict lines.
"""

import itertools
import time

from meshsim import security
from meshsim.cluster import Cluster
from meshsim.harness import (calibrate, defaults_matches, run_matrix,
                             run_scenario, matrix_spec)
from meshsim.nodes import ADVERSARY, CLIENT, SERVER, NodeConfig, SecretStore
from meshsim.scenario import (AdversarySpec, ScenarioSpec, SimConstants,
                              Topology)
from meshsim.security import SecurityConfig
from meshsim.statestore import (MANAGEMENT, READ, WRITE, StateStore, kv_scope,
                                node_scope, service_scope)
from meshsim.util import stable_rng


def verdict(number: int, ok: bool, text: str) -> None:
    print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {text}")
    assert ok, f"acceptance criterion {number} failed: {text}"


def test_criterion_1_goal_matrix_reproduction():
    t0 = time.time()
    report = run_matrix(seed=42)
    elapsed = time.time() - t0
    ok = report.matches and len(report.cells) == 20 and elapsed < 30.0
    blanks = [report.cell_goals("unprivileged", c) for c in ("gossip", "tls", "all")]
    ok = ok and blanks == ["---", "---", "---"]
    ok = ok and report.cell_goals("client_compromise", "tls") == "M"
    ok = ok and report.cell_goals("server_compromise", "tls") == "M"
    verdict(1, ok, f"matrix reproduces all 20 cells exactly in {elapsed:.1f}s "
                   f"(mismatches: {report.mismatches})")


def test_criterion_2_flood_threshold_bracket():
    sweep = calibrate(seed=42, counts=(3, 10, 12, 14, 15, 16, 18, 20, 25))
    rows = {k: d for k, d, _ in sweep.rows}
    ok = (rows[3] is False and rows[25] is True and sweep.monotone
          and sweep.threshold is not None and 10 <= sweep.threshold <= 25)
    verdict(2, ok, f"flood fails at k=3, succeeds at k=25, monotone threshold "
                   f"k={sweep.threshold} in [10, 25]")


def test_criterion_3_default_configuration_attack_chain():
    spec = ScenarioSpec(seed=42, name="default-chain",
                        security=SecurityConfig(),
                        adversary=AdversarySpec(level="unprivileged",
                                                sybil_count=2),
                        max_ticks=400)
    result = run_scenario(spec)
    cl = result.cluster
    rep = result.report
    chain_ticks = result.ticks - cl.converged_tick
    benign = [nid for nid in cl.members if not cl.nodes[nid].adversary]
    all_left = all(cl.members[nid].left for nid in benign)
    kinds = [cl.trace_log.events[i][2] for i in rep.evidence["manipulation"]]
    m_ok = rep.manipulation and {"kv_read_ok", "kv_write_committed"} <= set(kinds)
    t_kinds = {cl.trace_log.events[i][2] for i in rep.evidence["takeover"]}
    t_ok = rep.takeover and "leader_adopted" in t_kinds
    ok = (rep.disruption and all_left and m_ok and t_ok and chain_ticks <= 200)
    verdict(3, ok, f"default config: force-leave dismantled all benign members "
                   f"(D), kv read+write fired M, bootstrap conflict fired T, "
                   f"chain took {chain_ticks} ticks (limit 200)")


def test_criterion_4_defaults_report():
    ok, diffs = defaults_matches()
    verdict(4, ok, f"defaults report matches the capability table "
                   f"field-for-field (diffs: {diffs})")


def test_criterion_5_raft_safety_suite():
    worst_gap = 0
    split_terms = 0
    runs = 0
    for seed in range(1, 101):
        cl = Cluster(ScenarioSpec(seed=seed, name="raft", max_ticks=90))
        cl.run_setup()
        cl.crash(1)
        h0 = len(cl.monitors.availability_history)
        recognized: dict = {}
        for _ in range(30):
            cl.step()
            for s in (2, 3):
                node = cl.nodes[s]
                lid = node.raft.recognized_leader
                if lid is not None:
                    recognized.setdefault(node.raft.term, set()).add(lid)
        hist = cl.monitors.availability_history[h0:]
        gap = cur = 0
        for a in hist:
            cur = 0 if a else cur + 1
            gap = max(gap, cur)
        worst_gap = max(worst_gap, gap)
        split_terms += sum(1 for leaders in recognized.values() if len(leaders) > 1)
        runs += 1
        assert hist[-1], f"seed {seed} never recovered"
    bound = 2 * SimConstants().election_timeout_max
    ok = runs >= 100 and split_terms == 0 and worst_gap <= bound
    verdict(5, ok, f"{runs} crash runs: election safety held "
                   f"({split_terms} split terms), worst availability gap "
                   f"{worst_gap} <= {bound}")


def test_criterion_6_determinism():
    spec = matrix_spec("client_compromise", "gossip", 7)
    a = run_scenario(spec)
    b = run_scenario(spec)
    byte_identical = "\n".join(a.trace_lines) == "\n".join(b.trace_lines)
    base = None
    invariant = True
    for seed in range(1, 11):
        rep = run_matrix(seed=seed)
        cells = {key: r.goals() for key, r in rep.cells.items()}
        if base is None:
            base = cells
        invariant = invariant and rep.matches and cells == base
    ok = byte_identical and invariant
    verdict(6, ok, "same-seed traces byte-identical; 20-cell matrix invariant "
                   "across 10 seeds")


CERT_KINDS = ("none", "server", "client", "foreign", "mismatch")
KEY_KINDS = ("none", "cluster", "foreign")


def _gates_allow(sec, label_ok, key_kind, cert_kind, role) -> bool:
    """Independent oracle: the gate chain evaluated straight from its
    definition, not through the simulator."""
    if not label_ok:
        return False
    if sec.gossip_encryption and key_kind != "cluster":
        return False
    if sec.tls:
        if cert_kind not in ("server", "client"):
            return False
        if role == SERVER and cert_kind != SERVER:
            return False
    return True


def _flag_combos():
    for bits in itertools.product((False, True), repeat=4):
        yield SecurityConfig(label_secret=bits[0], gossip_encryption=bits[1],
                             acls=bits[2], tls=bits[3])


def test_criterion_7_gate_soundness_exhaustive():
    checked = 0
    for sec in _flag_combos():
        for label_ok, key_kind, cert_kind, role in itertools.product(
                (True, False), KEY_KINDS, CERT_KINDS, (SERVER, CLIENT)):
            spec = ScenarioSpec(seed=97, name="gates", security=sec,
                                topology=Topology(servers=3, clients=1))
            cl = Cluster(spec)
            cl.run_setup()
            joiner = 200
            label = cl.label if label_ok else "dc-wrong"
            foreign_rng = stable_rng(1, "foreign")
            key = {"none": None, "cluster": cl.gossip_key,
                   "foreign": security.generate_gossip_key(foreign_rng)}[key_kind]
            cert = None
            if cert_kind in ("server", "client") and cl.ca is not None:
                cert = security.issue_cert(cl.ca.ca_key, cl.ca, joiner, cert_kind)
            elif cert_kind == "foreign":
                other = security.init_ca(9, foreign_rng)
                cert = security.issue_cert(other.ca_key, other, joiner, SERVER)
            elif cert_kind == "mismatch" and cl.ca is not None:
                cert = security.issue_cert(cl.ca.ca_key, cl.ca, 999, SERVER)
            cl.spawn_node(NodeConfig(role=role, dc_label=label,
                                     allegiance=ADVERSARY),
                          SecretStore(dc_label=label, gossip_key=key, cert=cert),
                          node_id=joiner)
            cl.issue_join(joiner, 1)
            cl.run_ticks(5)
            effective_cert = cert_kind if (cert is not None or cl.ca is None) else "none"
            expected = _gates_allow(sec, label_ok, key_kind, effective_cert, role)
            landed = any(
                joiner in cl.nodes[b].view and not cl.nodes[b].view[joiner].left
                for b in (1, 2, 3, 4))
            accepted = any(e["accepted"] for e in cl.join_log
                           if e["node"] == joiner)
            assert accepted == expected, (sec, label_ok, key_kind, cert_kind, role)
            assert landed == expected, (sec, label_ok, key_kind, cert_kind, role)
            checked += 1

    # default-deny: no credential subset short of a covering scope commits
    store = StateStore()
    store.apply({"kind": "acl_put", "token_id": "node", "scopes": [node_scope(4)],
                 "lifetime": float("inf"), "issued_at": 0})
    store.apply({"kind": "acl_put", "token_id": "other-kv",
                 "scopes": [kv_scope("/elsewhere/")], "lifetime": float("inf"),
                 "issued_at": 0})
    store.apply({"kind": "acl_put", "token_id": "other-svc",
                 "scopes": [service_scope("web")], "lifetime": float("inf"),
                 "issued_at": 0})
    store.apply({"kind": "acl_put", "token_id": "expired", "scopes": [MANAGEMENT],
                 "lifetime": 1, "issued_at": 0})
    denied = 0
    for tok in (None, "unknown", "node", "other-kv", "other-svc", "expired"):
        for verb in (READ, WRITE):
            assert not store.allows_kv(tok, verb, "/secrets/db-creds", now=10)
            assert not store.allows_service(tok, verb, "db", now=10)
            denied += 2
        assert not store.allows_admin(tok, now=10)
        denied += 1
    verdict(7, True, f"gate soundness: {checked} join combinations match the "
                     f"gate oracle and never land in a benign registry; "
                     f"{denied} non-covering statestore checks all denied")
