"""Attacker capability levels, composable attack steps, and the canonical
playbooks that exercise them.

The playbook is a fixed priority order, not a planner: acquire credentials
(tap sniffing, secret dumps, key replication, certificate minting), get a
foothold member, probe the data plane, contest leadership, then disrupt by
eviction when authorized or by flooding when not. Failed steps are recorded
and the chain continues, so every scenario yields a full trace of what the
position could and could not do. Goals are judged by the cluster monitors,
never by the steps themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import security
from .cluster import Cluster, VICTIM_KV_KEY, VICTIM_SERVICE
from .nodes import ADVERSARY, CLIENT, SERVER, NodeConfig, SecretStore
from .scenario import (CLIENT_COMPROMISE, LEVEL_ORDER, SERVER_COMPROMISE,
                       UNPRIVILEGED)
from .statestore import MANAGEMENT, AclToken, node_scope

SYBIL_BASE_ID = 100


@dataclass
class GoalReport:
    """The (D, M, T) outcome triple plus trace references backing each flag."""

    disruption: bool = False
    manipulation: bool = False
    takeover: bool = False
    evidence: dict = field(default_factory=dict)

    def goals(self) -> str:
        parts = [flag for flag, on in (("D", self.disruption),
                                       ("M", self.manipulation),
                                       ("T", self.takeover)) if on]
        return " ".join(parts) if parts else "---"

    def as_set(self) -> frozenset:
        return frozenset(g for g, on in (("D", self.disruption),
                                         ("M", self.manipulation),
                                         ("T", self.takeover)) if on)

    def to_dict(self) -> dict:
        return {"disruption": self.disruption, "manipulation": self.manipulation,
                "takeover": self.takeover, "goals": self.goals(),
                "evidence": {k: list(v) for k, v in self.evidence.items()}}


@dataclass
class Wallet:
    """Credentials the adversary currently holds, from dumps or sniffing."""

    labels: set = field(default_factory=set)
    gossip_key: object = None
    certs: dict = field(default_factory=dict)   # subject id -> Certificate
    tokens: dict = field(default_factory=dict)  # node id -> AclToken
    mgmt_token: Optional[str] = None
    ca_key: Optional[str] = None

    def absorb(self, owner_id: int, dump: SecretStore) -> None:
        if dump.dc_label:
            self.labels.add(dump.dc_label)
        if dump.gossip_key is not None:
            self.gossip_key = dump.gossip_key
        if dump.cert is not None:
            self.certs[dump.cert.subject] = dump.cert
        if dump.acl_token is not None:
            self.tokens[owner_id] = dump.acl_token
            if MANAGEMENT in dump.acl_token.scopes:
                self.mgmt_token = dump.acl_token.token_id
        if dump.ca_key is not None:
            self.ca_key = dump.ca_key

    def best_label(self) -> str:
        return sorted(self.labels)[0] if self.labels else ""

    def best_token_id(self, node_id: Optional[int] = None) -> Optional[str]:
        if self.mgmt_token is not None:
            return self.mgmt_token
        if node_id is not None and node_id in self.tokens:
            return self.tokens[node_id].token_id
        for nid in sorted(self.tokens):
            return self.tokens[nid].token_id
        return None


class Step:
    name = "step"

    def __init__(self) -> None:
        self.started = False
        self.outcome = "pending"

    def start(self, ctl: "AdversaryController", cl: Cluster) -> None:
        pass

    def tick(self, ctl: "AdversaryController", cl: Cluster) -> bool:
        return True


class EstablishPosition(Step):
    name = "establish_position"

    def start(self, ctl, cl):
        level = ctl.level
        if not cl.security.label_secret:
            ctl.wallet.labels.add(cl.label)
        if level == UNPRIVILEGED:
            topo = cl.spec.topology
            servers = topo.server_ids()
            clients = topo.client_ids()
            a = servers[1] if len(servers) > 1 else servers[0]
            b = clients[0] if clients else servers[-1]
            ctl.tap_id = cl.net.attach_tap(a, b)
            cl.trace("-", "tap_attached", f"link={a},{b}")
            self.outcome = "tapped"
            return
        target = ctl.compromise_target(cl)
        dump = cl.compromise(target)
        ctl.wallet.absorb(target, dump)
        ctl.compromised.append(target)
        self.outcome = f"compromised:{target}"


class SniffLabel(Step):
    name = "sniff_label"

    def __init__(self) -> None:
        super().__init__()
        self.offset = 0
        self.deadline = 0

    def start(self, ctl, cl):
        self.deadline = cl.now + 6

    def tick(self, ctl, cl):
        if ctl.tap_id is None:
            self.outcome = "no-tap"
            return True
        captures = cl.net.read_tap(ctl.tap_id)
        for cap in captures[self.offset:]:
            payload = cap.get("payload")
            if payload and "dc_label" in payload:
                ctl.wallet.labels.add(payload["dc_label"])
                cl.trace("-", "label_sniffed", f"label={payload['dc_label']}")
                self.outcome = "sniffed"
                return True
        self.offset = len(captures)
        if cl.now >= self.deadline:
            self.outcome = "opaque"  # captures sealed, nothing readable
            return True
        return False


class ReplicateKey(Step):
    name = "replicate_key"

    def start(self, ctl, cl):
        if ctl.wallet.gossip_key is not None:
            cl.trace("-", "key_replicated",
                     f"key={ctl.wallet.gossip_key.key_id} sybils={len(ctl.sybil_ids)}")
            self.outcome = "replicated"
        else:
            self.outcome = "no-key"


class MintCerts(Step):
    name = "mint_cert"

    def __init__(self, role: str = SERVER, count: Optional[int] = None):
        super().__init__()
        self.role = role
        self.count = count

    def start(self, ctl, cl):
        if ctl.wallet.ca_key is None or cl.ca is None:
            self.outcome = "no-ca-key"
            return
        ids = ctl.sybil_ids if self.count is None else ctl.sybil_ids[:self.count]
        for sid in ids:
            cert = security.issue_cert(ctl.wallet.ca_key, cl.ca, sid, self.role,
                                       now=cl.now)
            ctl.wallet.certs[sid] = cert
            cl.trace("-", "cert_minted", f"subject={sid} role={self.role}")
        self.outcome = f"minted:{len(ids)}"


class MintTokens(Step):
    name = "mint_tokens"

    def __init__(self) -> None:
        super().__init__()
        self.requests = []

    def start(self, ctl, cl):
        if not cl.security.acls or ctl.wallet.mgmt_token is None:
            self.outcome = "no-management-token"
            return
        issuer = ctl.best_member(cl)
        if issuer is None:
            self.outcome = "no-member"
            return
        for sid in ctl.sybil_ids:
            req = cl.api_request(issuer, {"op": "acl_mint",
                                          "scopes": [node_scope(sid)],
                                          "token_id": f"tok-adv-{sid}"},
                                 token=ctl.wallet.mgmt_token)
            self.requests.append((sid, req))

    def tick(self, ctl, cl):
        if self.outcome != "pending":
            return True
        if not all(req.resolved for _, req in self.requests):
            return False
        minted = 0
        for sid, req in self.requests:
            if req.status == "committed":
                ctl.wallet.tokens[sid] = AclToken(f"tok-adv-{sid}",
                                                  (node_scope(sid),))
                minted += 1
        self.outcome = f"minted:{minted}"
        return True


class JoinNodes(Step):
    """Spawn sybil nodes and attempt membership with the held credentials."""

    name = "join_as"

    def __init__(self, ids: list[int], role: str = SERVER,
                 bootstrapper_first: bool = False):
        super().__init__()
        self.ids = ids
        self.role = role
        self.bootstrapper_first = bootstrapper_first
        self.issued: list[int] = []
        self.deadline = 0

    def start(self, ctl, cl):
        self.deadline = cl.now + 20
        for sid in self.ids:
            if sid in cl.nodes:
                continue
            ctl.spawn_sybil(cl, sid, self.role,
                            bootstrapper=(self.bootstrapper_first and sid == self.ids[0]))

    def tick(self, ctl, cl):
        batch = cl.constants.join_batch
        contact = cl.default_contact()
        pending = [sid for sid in self.ids if sid not in self.issued]
        if contact is not None and pending:
            for sid in pending[:batch]:
                cl.issue_join(sid, contact)
                self.issued.append(sid)
        accepted = {e["node"] for e in cl.join_log if e["accepted"]}
        attempted = {e["node"] for e in cl.join_log}
        all_issued = len(self.issued) == len(self.ids)
        settled = (all_issued
                   and all(sid in attempted for sid in self.issued)
                   and all(cl.nodes[sid].member for sid in self.issued
                           if sid in accepted))
        if settled or cl.now >= self.deadline:
            joined = sum(1 for sid in self.ids if cl.nodes[sid].member)
            self.outcome = f"joined:{joined}/{len(self.ids)}"
            return True
        return False


class Probes(Step):
    """Manipulation probes against victim resources the adversary does not own."""

    name = "manipulation_probes"

    def __init__(self) -> None:
        super().__init__()
        self.requests = []

    def start(self, ctl, cl):
        member = ctl.best_member(cl)
        if member is None:
            self.outcome = "no-member"
            return
        token = ctl.wallet.best_token_id(member)
        self.requests = [
            cl.api_request(member, {"op": "kv_get", "key": VICTIM_KV_KEY},
                           token=token),
            cl.api_request(member, {"op": "kv_put", "key": VICTIM_KV_KEY,
                                    "value": "tampered-by-adversary"},
                           token=token),
            cl.api_request(member, {"op": "service_register", "name": VICTIM_SERVICE,
                                    "endpoint": [member, 4444], "config": {}},
                           token=token),
        ]

    def tick(self, ctl, cl):
        if self.outcome != "pending":
            return True
        if not all(r.resolved for r in self.requests):
            return False
        ok = sum(1 for r in self.requests if r.status in ("ok", "committed"))
        self.outcome = f"succeeded:{ok}/3"
        return True


class Takeover(Step):
    """Leadership contest: claim with a bootstrapper-flagged server, then
    evict the legitimate leader so the survivors adopt the claimant."""

    name = "takeover"

    def __init__(self) -> None:
        super().__init__()
        self.phase = "claim"
        self.fl_request = None
        self.deadline = 0

    def start(self, ctl, cl):
        if cl.monitors.takeover:
            self.outcome = "already-achieved"
            return
        leader = cl.benign_leader_id()
        if leader is None and cl.monitors.current_adversary_leader() is not None:
            self.outcome = "holds-leadership"
            return
        claimant = ctl.choose_claimant(cl)
        if claimant is None:
            self.outcome = "no-claimant"
            return
        ctl.claimant = claimant
        ctl.claiming = True
        cl.trace(claimant, "leadership_claim", f"term={ctl.claim_term(cl)}")
        self.deadline = cl.now + 3

    def tick(self, ctl, cl):
        if self.outcome != "pending":
            return True
        if self.phase == "claim":
            if cl.now < self.deadline:
                return False
            leader = cl.benign_leader_id()
            if leader is None:
                self.phase = "await"
                self.deadline = cl.now + 15
                return False
            issuer = ctl.best_member(cl) or ctl.claimant
            cert = ctl.wallet.certs.get(leader)
            self.fl_request = cl.api_request(
                issuer, {"op": "force_leave", "target": leader},
                token=ctl.wallet.best_token_id(issuer), evidence_cert=cert)
            self.phase = "force_leave"
            return False
        if self.phase == "force_leave":
            if not self.fl_request.resolved:
                return False
            if self.fl_request.status != "granted":
                self.outcome = f"blocked:{self.fl_request.reason}"
                ctl.claiming = False
                return True
            ctl.force_leave_granted = True
            self.phase = "await"
            self.deadline = cl.now + 15
            return False
        if cl.monitors.takeover:
            self.outcome = "takeover"
            return True
        if cl.now >= self.deadline:
            self.outcome = "timeout"
            ctl.claiming = False
            return True
        return False


class Disrupt(Step):
    """Dismantle by eviction when force-leave is authorized, otherwise flood
    the quorum with junk the servers must pay to reject."""

    name = "disrupt"

    def __init__(self) -> None:
        super().__init__()
        self.phase = "probe"
        self.request = None
        self.flood_until = 0

    def _targets(self, cl):
        out = []
        for nid in sorted(cl.members):
            m = cl.members[nid]
            node = cl.nodes[nid]
            if m.left or node.adversary:
                continue
            out.append((0 if m.role == CLIENT else 1, nid))
        return [nid for _, nid in sorted(out)]

    def _issue(self, ctl, cl, target):
        issuer = ctl.best_member(cl) or min(ctl.sybil_ids, default=None)
        if issuer is None:
            return None
        leader = cl.benign_leader_id()
        cert = None
        adv_leader = cl.monitors.current_adversary_leader()
        if adv_leader is not None:
            cert = ctl.wallet.certs.get(adv_leader)
        elif leader is not None:
            cert = ctl.wallet.certs.get(leader)
        return cl.api_request(issuer, {"op": "force_leave", "target": target},
                              token=ctl.wallet.best_token_id(issuer),
                              evidence_cert=cert)

    def tick(self, ctl, cl):
        if self.phase == "probe":
            targets = self._targets(cl)
            if not targets:
                self.outcome = "nothing-left"
                return True
            if ctl.force_leave_granted:
                self.phase = "evict"
                return False
            self.request = self._issue(ctl, cl, targets[0])
            if self.request is None:
                self.phase = "flood"
                return False
            self.phase = "probe_wait"
            return False
        if self.phase == "probe_wait":
            if not self.request.resolved:
                return False
            if self.request.status == "granted":
                ctl.force_leave_granted = True
                self.phase = "evict"
            else:
                self.phase = "flood"
                cl.trace("-", "adversary_step",
                         f"step=force_leave outcome=denied:{self.request.reason}")
            return False
        if self.phase == "evict":
            if self.request is not None:
                if not self.request.resolved:
                    return False
                if self.request.status != "granted":
                    self.outcome = f"stalled:{self.request.reason}"
                    return True
            targets = self._targets(cl)
            if not targets:
                self.outcome = "dismantled"
                return True
            self.request = self._issue(ctl, cl, targets[0])
            if self.request is None:
                self.outcome = "no-issuer"
                return True
            return False
        if self.phase == "flood":
            if not ctl.flooding:
                ctl.flooding = True
                self.flood_until = cl.now + cl.constants.flood_ticks
                cl.trace("-", "flood_started",
                         f"attackers={len(ctl.flooders(cl))} rate={cl.constants.adversary_rate}")
            if cl.now >= self.flood_until:
                ctl.flooding = False
                cl.trace("-", "flood_ended", "")
                self.outcome = "flooded"
                return True
            return False
        return True


class FloodOnly(Step):
    """Explicit flood step for scripted scenarios and calibration sweeps."""

    name = "flood"

    def __init__(self, duration: Optional[int] = None):
        super().__init__()
        self.duration = duration
        self.until = 0

    def start(self, ctl, cl):
        ctl.flooding = True
        self.until = cl.now + (self.duration or cl.constants.flood_ticks)
        cl.trace("-", "flood_started",
                 f"attackers={len(ctl.flooders(cl))} rate={cl.constants.adversary_rate}")

    def tick(self, ctl, cl):
        if cl.now >= self.until:
            ctl.flooding = False
            cl.trace("-", "flood_ended", "")
            self.outcome = "flooded"
            return True
        return False


class OpenRegistryProbe(Step):
    """Unauthenticated rogue write plus configuration read against an open
    registry endpoint."""

    name = "open_registry_write"

    def __init__(self) -> None:
        super().__init__()
        self.requests = []

    def start(self, ctl, cl):
        origin = ctl.sybil_ids[0]
        if origin not in cl.nodes:
            ctl.spawn_sybil(cl, origin, CLIENT)
        self.requests = [
            cl.api_request(origin, {"op": "service_register", "name": "rogue-svc",
                                    "endpoint": [origin, 9999], "config": {}}),
            cl.api_request(origin, {"op": "service_read", "name": VICTIM_SERVICE}),
        ]

    def tick(self, ctl, cl):
        if not all(r.resolved for r in self.requests):
            return False
        ok = sum(1 for r in self.requests if r.status in ("ok", "committed"))
        self.outcome = f"succeeded:{ok}/{len(self.requests)}"
        return True


class Settle(Step):
    name = "settle"

    def __init__(self) -> None:
        super().__init__()
        self.until = 0

    def start(self, ctl, cl):
        self.until = cl.now + cl.constants.settle_ticks

    def tick(self, ctl, cl):
        return cl.now >= self.until


class AdversaryController:
    """Drives one adversary position through its step list, one tick at a
    time, using only credentials it has acquired in-simulation."""

    def __init__(self, cluster: Cluster, level: str, sybil_count: int = 25,
                 steps: Optional[list] = None):
        assert level in LEVEL_ORDER
        self.level = level
        self.sybil_count = sybil_count
        self.wallet = Wallet()
        self.compromised: list[int] = []
        self.sybil_ids = list(range(SYBIL_BASE_ID, SYBIL_BASE_ID + sybil_count))
        self.tap_id: Optional[int] = None
        self.claimant: Optional[int] = None
        self.claiming = False
        self.flooding = False
        self.force_leave_granted = False
        self.finished = False
        self.observed_term = 0
        self.step_results: list[tuple[str, str]] = []
        self.steps = steps if steps is not None else self.canonical_steps(cluster)
        self._index = 0
        cluster.controller = self

    # -- playbook construction ------------------------------------------

    def canonical_steps(self, cl: Cluster) -> list[Step]:
        if cl.spec.open_registry:
            return [EstablishPosition(), OpenRegistryProbe(), Settle()]
        steps: list[Step] = [EstablishPosition()]
        if self.level == UNPRIVILEGED:
            steps.append(SniffLabel())
        steps.append(ReplicateKey())
        steps.append(MintCerts(SERVER))
        steps.append(MintTokens())
        steps.append(JoinNodes(self.sybil_ids[:1], SERVER, bootstrapper_first=True))
        steps.append(Probes())
        if len(self.sybil_ids) > 1:
            steps.append(JoinNodes(self.sybil_ids[1:], SERVER))
        steps.append(Takeover())
        steps.append(Disrupt())
        steps.append(Settle())
        return steps

    def compromise_target(self, cl: Cluster) -> int:
        topo = cl.spec.topology
        if self.level == CLIENT_COMPROMISE:
            return topo.client_ids()[0]
        if self.level == SERVER_COMPROMISE:
            servers = [s for s in topo.server_ids() if s != topo.bootstrappers[0]]
            return servers[0] if servers else topo.server_ids()[0]
        return topo.bootstrappers[0]

    # -- engine hooks -----------------------------------------------------

    def on_tick(self, cl: Cluster) -> None:
        if self.finished or self._index >= len(self.steps):
            self.finished = True
            return
        step = self.steps[self._index]
        if not step.started:
            step.started = True
            step.start(self, cl)
        done = step.tick(self, cl)
        if done:
            if step.outcome == "pending":
                step.outcome = "done"
            cl.trace("-", "adversary_step", f"step={step.name} outcome={step.outcome}")
            self.step_results.append((step.name, step.outcome))
            self._index += 1
            if self._index >= len(self.steps):
                self.finished = True

    def observe(self, node, env) -> None:
        kind = env.payload.get("kind")
        if kind == "append_entries":
            self.observed_term = max(self.observed_term, env.payload["term"])

    def on_member(self, node, raft_term: int) -> None:
        self.observed_term = max(self.observed_term, raft_term)

    def claim_term(self, cl: Cluster) -> int:
        seen = self.observed_term
        for nid in self.flooders(cl):
            node = cl.nodes.get(nid)
            if node is not None and node.member:
                seen = max(seen, node.raft.term)
        return seen + 1

    def best_member(self, cl: Cluster) -> Optional[int]:
        for nid in self.compromised:
            if cl.nodes[nid].member and cl.nodes[nid].proc_alive:
                return nid
        for sid in self.sybil_ids:
            if sid in cl.nodes and cl.nodes[sid].member and cl.nodes[sid].proc_alive:
                return sid
        return None

    def choose_claimant(self, cl: Cluster) -> Optional[int]:
        first = self.sybil_ids[0] if self.sybil_ids else None
        if first is not None and first in cl.nodes and cl.nodes[first].member:
            return first
        for nid in self.compromised:
            node = cl.nodes[nid]
            if node.member and node.is_server and node.proc_alive:
                return nid
        return None

    def spawn_sybil(self, cl: Cluster, sid: int, role: str,
                    bootstrapper: bool = False) -> None:
        secrets = SecretStore(dc_label=self.wallet.best_label() or None,
                              gossip_key=self.wallet.gossip_key,
                              acl_token=self.wallet.tokens.get(sid),
                              cert=self.wallet.certs.get(sid))
        config = NodeConfig(role=role, dc_label=self.wallet.best_label(),
                            bootstrapper=bootstrapper, allegiance=ADVERSARY)
        cl.spawn_node(config, secrets, node_id=sid)

    def flooders(self, cl: Cluster) -> list[int]:
        ids = [sid for sid in self.sybil_ids if sid in cl.nodes]
        ids.extend(self.compromised)
        return sorted(set(ids))

    def flood_targets(self, cl: Cluster) -> list[int]:
        return [nid for nid in sorted(cl.members)
                if cl.members[nid].role == SERVER and not cl.members[nid].left
                and not cl.nodes[nid].adversary and cl.nodes[nid].proc_alive]

    def timer_emit(self, cl: Cluster, node) -> None:
        """Per-tick emissions for one adversary node: leadership claims from
        the claimant, junk at the configured rate from every flooder."""
        if self.claiming and node.node_id == self.claimant and node.member:
            term = self.claim_term(cl)
            for pid in sorted(node.view):
                entry = node.view[pid]
                if entry.left or entry.role != SERVER or pid == node.node_id:
                    continue
                cl.send_rpc(node, pid, {
                    "kind": "append_entries", "term": term,
                    "leader": node.node_id, "prev_index": -1, "prev_term": -1,
                    "entries": [], "commit_index": -1})
        if self.flooding:
            targets = self.flood_targets(cl)
            if not targets:
                return
            rate = cl.constants.adversary_rate
            base = (node.node_id * 7 + cl.now) % len(targets)
            for i in range(rate):
                dst = targets[(base + i) % len(targets)]
                cl.send_rpc(node, dst, {
                    "kind": "vote_request", "term": 10_000_000 + cl.now,
                    "last_log_index": -1, "last_log_term": -1,
                    "token": None, "flood": 1})

    def goal_report(self, cl: Cluster) -> GoalReport:
        mon = cl.monitors
        return GoalReport(disruption=mon.disruption,
                          manipulation=mon.manipulation,
                          takeover=mon.takeover,
                          evidence={k: list(v) for k, v in mon.evidence.items()})


def parse_steps(tokens, sybil_ids) -> list[Step]:
    """Translate explicit scenario step strings into step objects."""
    steps: list[Step] = [EstablishPosition()]
    for tok in tokens:
        parts = str(tok).split(":")
        verb = parts[0]
        if verb == "sniff_label":
            steps.append(SniffLabel())
        elif verb == "replicate_key":
            steps.append(ReplicateKey())
        elif verb == "mint_cert":
            role = parts[1] if len(parts) > 1 else SERVER
            count = int(parts[2]) if len(parts) > 2 else None
            steps.append(MintCerts(role, count))
        elif verb == "mint_tokens":
            steps.append(MintTokens())
        elif verb == "join_as":
            count = int(parts[2]) if len(parts) > 2 else len(sybil_ids)
            steps.append(JoinNodes(sybil_ids[:count],
                                   parts[1] if len(parts) > 1 else SERVER,
                                   bootstrapper_first=True))
        elif verb == "probes":
            steps.append(Probes())
        elif verb == "bootstrap_conflict" or verb == "takeover":
            steps.append(Takeover())
        elif verb == "disrupt" or verb == "force_leave":
            steps.append(Disrupt())
        elif verb == "flood":
            steps.append(FloodOnly(int(parts[1]) if len(parts) > 1 else None))
        elif verb == "open_registry_write":
            steps.append(OpenRegistryProbe())
        else:
            raise ValueError(f"unknown attack step {tok!r}")
    steps.append(Settle())
    return steps
