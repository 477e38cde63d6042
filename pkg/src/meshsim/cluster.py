"""The simulation engine: one deterministic event loop that owns the nodes,
the network, the replicated state, and the per-tick observables.

Each tick runs in a fixed order: deliver due envelopes, let scripted actors
schedule work, drain every inbox under the processing budget, run timer work
for nodes that were not starved, then evaluate the cluster-level monitors
(availability, membership status, adversarial goal predicates). Everything
that randomizes draws from per-node seeded streams, so a (scenario, seed)
pair fully determines the trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from . import consensus, membership, security, statestore
from .consensus import CONSENSUS_KINDS, LEADER, LogEntry, RaftState
from .errors import ScenarioError
from .nodes import (ADVERSARY, BENIGN, CLIENT, SERVER, Node, NodeConfig,
                    SecretStore, ViewEntry)
from .scenario import ScenarioSpec
from .simnet import GOSSIP, RPC, Network
from .statestore import MANAGEMENT, READ, WRITE, StateStore, kv_scope, node_scope, service_scope
from .util import stable_rng

VICTIM_KV_KEY = "/secrets/db-creds"
VICTIM_SERVICE = "db"


class Trace:
    """Append-only event log; one line per state transition."""

    def __init__(self) -> None:
        self.events: list[tuple[int, str, str, str]] = []

    def emit(self, tick: int, node, kind: str, detail: str) -> int:
        self.events.append((tick, str(node), kind, detail))
        return len(self.events) - 1

    def lines(self) -> list[str]:
        return [f"tick={t} node={n} kind={k} detail={d}"
                for t, n, k, d in self.events]


@dataclass
class MemberFact:
    """Ground-truth membership ledger entry (views converge toward this)."""

    role: str
    left: bool = False


@dataclass
class PendingRequest:
    req_id: int
    origin: int
    op: dict
    issued: int
    status: str = "pending"
    value: object = None
    reason: str = ""
    token_id: Optional[str] = None

    @property
    def resolved(self) -> bool:
        return self.status != "pending"


class Monitors:
    """Per-tick observables and the three adversarial goal predicates.

    Disruption fires when the cluster has been unavailable for
    disruption_window consecutive ticks after first coming up, or when at
    least half of the benign members have been evicted. Manipulation fires
    when an adversary identity succeeds at a data operation its own
    credentials do not legitimately cover. Takeover fires when a majority of
    the surviving benign servers recognize an adversary node as leader for
    takeover_window consecutive ticks.
    """

    def __init__(self, cluster: "Cluster") -> None:
        self.cluster = cluster
        self.available = False
        self.seen_available = False
        self.unavailable_streak = 0
        self.first_unavailable_tick: Optional[int] = None
        self.takeover_streak = 0
        self.disruption = False
        self.disruption_tick: Optional[int] = None
        self.manipulation = False
        self.takeover = False
        self.evidence: dict[str, list[int]] = {"disruption": [], "manipulation": [],
                                               "takeover": []}
        self.availability_history: list[bool] = []
        self._left_events: list[int] = []
        self._adoption_events: list[tuple[int, int]] = []
        self._compromise_events: list[int] = []
        self._last_down_idx: Optional[int] = None

    # hooks called from the engine at trace emission points
    def note_member_left(self, idx: int) -> None:
        self._left_events.append(idx)

    def note_adoption(self, idx: int, leader_id: int) -> None:
        self._adoption_events.append((idx, leader_id))

    def note_compromise(self, idx: int) -> None:
        self._compromise_events.append(idx)

    def note_manipulation(self, idx: int) -> None:
        if not self.manipulation:
            self.manipulation = True
            self.evidence["manipulation"].append(idx)
            self.cluster.trace("-", "goal_fired", f"goal=manipulation evidence={idx}")
        else:
            self.evidence["manipulation"].append(idx)

    def _fire_disruption(self, why: str, evidence: list[int]) -> None:
        if self.disruption:
            return
        self.disruption = True
        self.disruption_tick = self.cluster.now
        self.evidence["disruption"] = list(evidence)
        self.cluster.trace("-", "goal_fired", f"goal=disruption cause={why}")

    def _fire_takeover(self, leader_id: int) -> None:
        if self.takeover:
            return
        self.takeover = True
        ev = [idx for idx, lid in self._adoption_events if lid == leader_id]
        if not ev:
            ev = list(self._compromise_events)
        self.evidence["takeover"] = ev
        self.cluster.trace("-", "goal_fired", f"goal=takeover leader={leader_id}")

    def compute_available(self) -> bool:
        cl = self.cluster
        server_ids = [nid for nid, m in cl.members.items()
                      if m.role == SERVER and not m.left]
        if not server_ids:
            return False
        need = consensus.majority(len(server_ids))
        for lid in sorted(server_ids):
            leader = cl.nodes[lid]
            if not leader.proc_alive or leader.starved:
                continue
            if leader.raft.role != LEADER:
                continue
            recognized = 0
            for sid in server_ids:
                peer = cl.nodes[sid]
                if (peer.proc_alive and peer.raft.recognized_leader == lid
                        and peer.raft.term == leader.raft.term):
                    recognized += 1
            if recognized >= need:
                return True
        return False

    def current_adversary_leader(self) -> Optional[int]:
        cl = self.cluster
        benign_servers = [n for n in cl.nodes.values()
                          if n.is_server and n.member and n.proc_alive
                          and not n.adversary]
        if not benign_servers:
            return None
        counts: dict[int, int] = {}
        for s in benign_servers:
            lid = s.raft.recognized_leader
            if lid is not None and lid in cl.nodes and cl.nodes[lid].adversary:
                counts[lid] = counts.get(lid, 0) + 1
        for lid in sorted(counts):
            if counts[lid] * 2 > len(benign_servers):
                return lid
        return None

    def on_tick(self) -> None:
        cl = self.cluster
        consts = cl.constants
        avail = self.compute_available()
        self.availability_history.append(avail)
        if avail != self.available:
            idx = cl.trace("-", "availability_flip", f"available={int(avail)}")
            if not avail:
                self._last_down_idx = idx
                self.first_unavailable_tick = cl.now
        self.available = avail
        if avail:
            self.seen_available = True
            self.unavailable_streak = 0
        elif self.seen_available and cl.setup.done:
            self.unavailable_streak += 1
            if self.unavailable_streak >= consts.disruption_window:
                ev = [self._last_down_idx] if self._last_down_idx is not None else []
                self._fire_disruption("availability-gap", ev)

        benign_total = sum(1 for nid, m in cl.members.items()
                           if not cl.nodes[nid].adversary)
        benign_left = sum(1 for nid, m in cl.members.items()
                          if m.left and not cl.nodes[nid].adversary)
        if benign_total and benign_left * 2 >= benign_total:
            self._fire_disruption("mass-removal", list(self._left_events))

        leader_id = self.current_adversary_leader()
        if leader_id is not None:
            self.takeover_streak += 1
            if self.takeover_streak >= consts.takeover_window:
                self._fire_takeover(leader_id)
        else:
            self.takeover_streak = 0


class SetupDriver:
    """Scripted administrator: founds the cluster, joins the benign nodes,
    seeds the application data, and declares convergence."""

    def __init__(self, cluster: "Cluster") -> None:
        self.cluster = cluster
        self.state = "joins"
        self.requests: list[PendingRequest] = []
        self.done = False

    def benign_ids(self) -> list[int]:
        topo = self.cluster.spec.topology
        return topo.server_ids() + topo.client_ids()

    def on_tick(self) -> None:
        cl = self.cluster
        if self.done:
            return
        if cl.now > 90:
            raise ScenarioError("cluster setup failed to converge")
        if self.state == "joins":
            boot = cl.spec.topology.bootstrappers[0]
            for nid in self.benign_ids():
                if nid != boot:
                    cl.issue_join(nid, boot)
            self.state = "wait_members"
        elif self.state == "wait_members":
            if all(cl.nodes[nid].member for nid in self.benign_ids()):
                self.state = "wait_leader"
        elif self.state == "wait_leader":
            if cl.monitors.available:
                self.state = "seed_data"
        elif self.state == "seed_data":
            leader = cl.benign_leader_id()
            if leader is None:
                return
            token = cl.nodes[leader].secrets.acl_token
            tok_id = token.token_id if token else None
            client = cl.spec.topology.client_ids()[0] if cl.spec.topology.clients else leader
            self.requests = [
                cl.api_request(leader, {"op": "kv_put", "key": VICTIM_KV_KEY,
                                        "value": "s3cr3t-db-pass",
                                        "owner_scope": MANAGEMENT},
                               token=tok_id, contact=leader),
                cl.api_request(leader, {"op": "service_register", "name": VICTIM_SERVICE,
                                        "endpoint": [client, 5432],
                                        "config": {"password": "db-pass-123"},
                                        "owner_scope": MANAGEMENT},
                               token=tok_id, contact=leader),
                cl.api_request(leader, {"op": "service_register", "name": "web",
                                        "endpoint": [client, 8080],
                                        "config": {},
                                        "owner_scope": service_scope("web")},
                               token=tok_id, contact=leader),
            ]
            self.state = "wait_seed"
        elif self.state == "wait_seed":
            if any(r.status not in ("pending", "committed") for r in self.requests):
                raise ScenarioError("setup data seeding was rejected")
            if all(r.resolved for r in self.requests):
                self.state = "converge"
        elif self.state == "converge":
            benign = self.benign_ids()
            views_ok = all(
                set(benign) <= {nid for nid, e in cl.nodes[b].view.items() if not e.left}
                for b in benign)
            if views_ok and cl.monitors.available and not cl.has_pending():
                self.done = True
                cl.converged_tick = cl.now
                cl.trace("-", "setup_complete", f"manual_steps={cl.manual_steps}")


class Cluster:
    """Deterministic simulation of one mesh deployment under one scenario."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.constants = spec.constants
        self.security = spec.security
        self.net = Network()
        self.nodes: dict[int, Node] = {}
        self.members: dict[int, MemberFact] = {}
        self.trace_log = Trace()
        self.monitors = Monitors(self)
        self.pending: dict[int, PendingRequest] = {}
        self._next_req = 0
        self.join_log: list[dict] = []
        self.manual_steps = 0
        self.converged_tick: Optional[int] = None
        self.controller = None  # adversary controller, attached by the harness
        self._conflicts_seen: set = set()
        self._member_status: dict[int, str] = {}

        setup_rng = stable_rng(spec.seed, "setup")
        self.label = security.generate_label(setup_rng)
        self.gossip_key = (security.generate_gossip_key(setup_rng)
                           if spec.security.gossip_encryption else None)
        self.ca = (security.init_ca(spec.topology.bootstrappers[0], setup_rng)
                   if spec.security.tls else None)
        self.setup = SetupDriver(self)
        self._spawn_benign()
        self.trace("-", "scenario_start",
                   f"seed={spec.seed} security={self._security_tag()} "
                   f"open_registry={int(spec.open_registry)}")

    # -- construction ---------------------------------------------------

    def _security_tag(self) -> str:
        s = self.security
        return (f"label:{int(s.label_secret)},gossip:{int(s.gossip_encryption)},"
                f"acls:{int(s.acls)},tls:{int(s.tls)}")

    def _initial_tokens(self) -> dict[int, statestore.AclToken]:
        """Genesis token set, modeling the operator-only bootstrap done from
        the leader and distributed over a side channel before exposure."""
        topo = self.spec.topology
        boot = topo.bootstrappers[0]
        tokens: dict[int, statestore.AclToken] = {}
        for sid in topo.server_ids():
            if sid == boot:
                tokens[sid] = statestore.AclToken("tok-mgmt", (MANAGEMENT,))
            else:
                tokens[sid] = statestore.AclToken(f"tok-node-{sid}", (node_scope(sid),))
        for cid in topo.client_ids():
            tokens[cid] = statestore.AclToken(
                f"tok-node-{cid}",
                (node_scope(cid), kv_scope(f"/app/{cid}/"), service_scope("web")))
        return tokens

    def _spawn_benign(self) -> None:
        topo = self.spec.topology
        sec = self.security
        boot = topo.bootstrappers[0]
        tokens = self._initial_tokens() if sec.acls else {}
        genesis = []
        if sec.acls:
            # node bindings must be visible in every replica from the start
            genesis = [statestore.AclToken(f"tok-node-{boot}", (node_scope(boot),))]
            genesis.extend(tokens.values())
            self.manual_steps += len(tokens) + 1  # policy authoring + handout
        for nid in topo.server_ids() + topo.client_ids():
            role = SERVER if nid in topo.server_ids() else CLIENT
            cert = None
            if sec.tls:
                cert = security.issue_cert(self.ca.ca_key, self.ca, nid, role)
                self.manual_steps += 1
            secrets = SecretStore(
                dc_label=self.label,
                gossip_key=self.gossip_key,
                acl_token=tokens.get(nid),
                cert=cert,
                ca_key=self.ca.ca_key if (sec.tls and nid == boot) else None,
            )
            if sec.gossip_encryption:
                self.manual_steps += 1
            if sec.label_secret:
                self.manual_steps += 1
            config = NodeConfig(role=role, dc_label=self.label,
                                bootstrapper=(nid == boot),
                                verify_server_hostname=sec.tls)
            self.spawn_node(config, secrets, node_id=nid)
            if sec.acls and self.nodes[nid].store is not None:
                for tok in genesis:
                    self.nodes[nid].store.tokens[tok.token_id] = tok
        self.found(boot)

    def spawn_node(self, config: NodeConfig, secrets: SecretStore,
                   node_id: Optional[int] = None) -> int:
        if node_id is None:
            node_id = max([99] + [n for n in self.nodes]) + 1
        if node_id in self.nodes:
            raise ScenarioError(f"duplicate node id {node_id}")
        node = Node(node_id, config, secrets, stable_rng(self.spec.seed, "node", node_id))
        node.raft = RaftState()
        if config.role == SERVER and config.allegiance == BENIGN:
            node.store = StateStore()
        self.nodes[node_id] = node
        self.net.register_node(node_id)
        self.trace(node_id, "node_spawned",
                   f"role={config.role} allegiance={config.allegiance} "
                   f"bootstrapper={int(config.bootstrapper)}")
        return node_id

    def found(self, node_id: int) -> None:
        """The bootstrapper self-founds the cluster and triggers the first
        election by starting with an already-expired timeout."""
        node = self.nodes[node_id]
        node.member = True
        node.view[node_id] = ViewEntry(role=node.config.role, last_alive=0,
                                       server_validated=node.is_server)
        self.members[node_id] = MemberFact(role=node.config.role)
        node.raft.last_contact = 0
        node.raft.timeout = 0

    # -- lifecycle operations --------------------------------------------

    def compromise(self, node_id: int) -> SecretStore:
        node = self.nodes[node_id]
        if not node.proc_alive:
            raise ScenarioError(f"cannot compromise crashed node {node_id}")
        dump = node.secrets.dump()
        node.config.allegiance = ADVERSARY
        idx = self.trace(node_id, "compromise", f"role={node.config.role}")
        self.monitors.note_compromise(idx)
        return dump

    def crash(self, node_id: int) -> None:
        node = self.nodes[node_id]
        if not node.proc_alive:
            raise ScenarioError(f"node {node_id} already crashed")
        node.proc_alive = False
        self.trace(node_id, "node_crashed", "")

    def restart(self, node_id: int) -> None:
        node = self.nodes[node_id]
        if node.proc_alive:
            raise ScenarioError(f"node {node_id} is not crashed")
        node.proc_alive = True
        node.starved = False
        self.trace(node_id, "node_restarted", "")
        node.member = False
        contact = self.default_contact(exclude=node_id)
        if contact is not None:
            self.issue_join(node_id, contact)

    # -- messaging helpers -----------------------------------------------

    @property
    def now(self) -> int:
        return self.net.tick

    def trace(self, node, kind: str, detail: str) -> int:
        return self.trace_log.emit(self.now, node, kind, detail)

    def send_gossip(self, node: Node, dst: int, payload: dict) -> None:
        sealed = False
        seal_key = None
        if self.security.gossip_encryption and node.secrets.gossip_key is not None:
            sealed = True
            seal_key = node.secrets.gossip_key.key_id
        self.net.send(node.node_id, dst, GOSSIP, payload,
                      sealed=sealed, seal_key=seal_key)

    def send_rpc(self, node: Node, dst: int, payload: dict) -> None:
        cert = node.secrets.cert if self.security.tls else None
        if (self.security.acls and "token" not in payload
                and node.secrets.acl_token is not None):
            payload = dict(payload)
            payload["token"] = node.secrets.acl_token.token_id
        self.net.send(node.node_id, dst, RPC, payload,
                      sealed=cert is not None, cert=cert)

    def issue_join(self, node_id: int, seed_id: int,
                   dc_label: Optional[str] = None, cert=None,
                   role: Optional[str] = None) -> None:
        """Send a join request using the node's stored secrets by default."""
        node = self.nodes[node_id]
        label = dc_label if dc_label is not None else (node.secrets.dc_label or "")
        use_cert = cert if cert is not None else node.secrets.cert
        payload = membership.build_join_request(node, label, use_cert)
        if role is not None:
            payload["role"] = role
        sealed = node.secrets.gossip_key is not None and self.security.gossip_encryption
        self.net.send(node_id, seed_id, GOSSIP, payload,
                      sealed=sealed,
                      seal_key=node.secrets.gossip_key.key_id if sealed else None)

    def admit_member(self, joiner: int, role: str, incarnation: int) -> None:
        fact = self.members.get(joiner)
        if fact is None:
            self.members[joiner] = MemberFact(role=role)
        else:
            fact.left = False
            fact.role = role

    def record_join(self, joiner: int, seed: int, accepted: bool, reason) -> None:
        self.join_log.append({"node": joiner, "seed": seed, "tick": self.now,
                              "accepted": accepted, "reason": reason})
        if accepted:
            self.trace(joiner, "join_accepted", f"seed={seed}")
        else:
            self.trace(joiner, "join_rejected", f"seed={seed} reason={reason}")

    def on_membership_gained(self, node: Node, raft_term: int) -> None:
        if self.controller is not None and node.adversary:
            self.controller.on_member(node, raft_term)

    def note_leader_conflict(self, node: Node, claimant: int, term: int) -> None:
        key = (node.node_id, claimant)
        if key in self._conflicts_seen:
            return
        self._conflicts_seen.add(key)
        self.trace(node.node_id, "leader_conflict",
                   f"claimant={claimant} term={term}")

    def on_leader_adopted(self, node: Node, leader: int, term: int) -> None:
        idx = self.trace(node.node_id, "leader_adopted",
                         f"leader={leader} term={term}")
        if (leader in self.nodes and self.nodes[leader].adversary
                and not node.adversary):
            self.monitors.note_adoption(idx, leader)

    def on_entry_applied(self, node: Node, index: int, entry: LogEntry) -> None:
        if node.raft.role != LEADER:
            return
        op = entry.op
        self.trace(node.node_id, "commit", f"index={index} op={op['kind']}")
        if entry.req_id >= 0 and entry.req_id in self.pending:
            req = self.pending[entry.req_id]
            extra = {}
            if op["kind"] == "acl_put":
                extra = {"token_id": op["token_id"], "scopes": list(op["scopes"])}
            if entry.origin in self.nodes:
                origin = self.nodes[entry.origin]
                self.send_rpc(node, entry.origin,
                              {"kind": "api_reply", "req_id": entry.req_id,
                               "status": "committed", **extra})
        if entry.origin in self.nodes and self.nodes[entry.origin].adversary:
            if op["kind"] == "kv_put":
                idx = self.trace(entry.origin, "kv_write_committed",
                                 f"key={op['key']} adversary=1")
                if self._is_manipulation(entry.origin, "kv", op["key"]):
                    self.monitors.note_manipulation(idx)
            elif op["kind"] == "service_register":
                idx = self.trace(entry.origin, "service_registered",
                                 f"name={op['name']} adversary=1")
                if self._is_manipulation(entry.origin, "service", op["name"]):
                    self.monitors.note_manipulation(idx)

    def _is_manipulation(self, origin_id: int, kind: str, name: str) -> bool:
        """A data access is manipulation when the adversary's own legitimate
        scopes do not cover the resource; stolen operator credentials do not
        launder access."""
        origin = self.nodes[origin_id]
        tok = origin.secrets.acl_token
        scopes = tuple(s for s in (tok.scopes if tok else ())
                       if s != MANAGEMENT)
        if kind == "kv":
            if name.startswith(f"/app/{origin_id}/"):
                return False
            return not any(s.startswith("kv:") and name.startswith(s[3:])
                           for s in scopes)
        if kind == "service":
            return service_scope(name) not in scopes
        return True

    # -- API requests ----------------------------------------------------

    def benign_leader_id(self) -> Optional[int]:
        for nid in sorted(self.members):
            m = self.members[nid]
            node = self.nodes[nid]
            if (m.role == SERVER and not m.left and node.proc_alive
                    and node.raft.role == LEADER and not node.adversary):
                return nid
        return None

    def default_contact(self, exclude: Optional[int] = None) -> Optional[int]:
        candidates = []
        for nid in sorted(self.members):
            m = self.members[nid]
            node = self.nodes[nid]
            if m.left or not node.proc_alive or nid == exclude:
                continue
            rank = (0 if (m.role == SERVER and not node.adversary) else
                    1 if m.role == SERVER else 2)
            candidates.append((rank, nid))
        if not candidates:
            return None
        return min(candidates)[1]

    def api_request(self, origin_id: int, op: dict, token: Optional[str] = None,
                    evidence_cert=None, contact: Optional[int] = None) -> PendingRequest:
        origin = self.nodes[origin_id]
        contact_id = contact if contact is not None else self.default_contact()
        req = PendingRequest(req_id=self._next_req, origin=origin_id, op=op,
                             issued=self.now)
        self._next_req += 1
        self.pending[req.req_id] = req
        if contact_id is None:
            req.status, req.reason = "unavailable", "no-contact"
            return req
        payload = {"kind": "api_request", "req_id": req.req_id, "op": op,
                   "token": token, "evidence_cert": evidence_cert}
        self.send_rpc(origin, contact_id, payload)
        return req

    def has_pending(self) -> bool:
        return any(not r.resolved for r in self.pending.values())

    def _pending_timeouts(self) -> None:
        for req_id in sorted(self.pending):
            req = self.pending[req_id]
            if not req.resolved and self.now - req.issued > self.constants.request_timeout:
                req.status, req.reason = "unavailable", "timeout"
                self.trace(req.origin, "api_timeout",
                           f"req={req_id} op={req.op.get('op')}")

    def any_server_store(self) -> Optional[StateStore]:
        for nid in sorted(self.nodes):
            if self.nodes[nid].store is not None:
                return self.nodes[nid].store
        return None

    # -- API handling (runs on a contacted server) ------------------------

    def _reply(self, server: Node, origin: int, req_id: int, status: str,
               **extra) -> None:
        self.send_rpc(server, origin, {"kind": "api_reply", "req_id": req_id,
                                       "status": status, **extra})

    def _handle_api_request(self, server: Node, env) -> None:
        p = env.payload
        op = p["op"]
        kind = op["op"]
        req_id = p["req_id"]
        origin = env.src
        token = p.get("token")
        now = self.now
        open_mode = self.spec.open_registry and kind in (
            "kv_get", "kv_put", "service_register", "service_read")
        if server.store is None:
            return  # clients do not serve the API
        if not open_mode:
            entry = server.view.get(origin)
            if entry is None or entry.left:
                self._reply(server, origin, req_id, "denied", reason="not-a-member")
                return

        if kind == "kv_get":
            key = op["key"]
            if self.security.acls and not open_mode and not server.store.allows_kv(
                    token, READ, key, now):
                self.trace(origin, "kv_read_denied", f"key={key}")
                self._reply(server, origin, req_id, "denied", reason="acl")
                return
            e = server.store.kv.get(key)
            value = e.value if e is not None else None
            idx = self.trace(origin, "kv_read_ok",
                             f"key={key} adversary={int(self.nodes[origin].adversary)}")
            if (e is not None and self.nodes[origin].adversary
                    and self._is_manipulation(origin, "kv", key)):
                self.monitors.note_manipulation(idx)
            self._reply(server, origin, req_id, "ok", value=value)

        elif kind == "kv_put":
            key = op["key"]
            if self.security.acls and not open_mode and not server.store.allows_kv(
                    token, WRITE, key, now):
                self.trace(origin, "kv_write_denied", f"key={key}")
                self._reply(server, origin, req_id, "denied", reason="acl")
                return
            entry_op = {"kind": "kv_put", "key": key, "value": op["value"],
                        "owner_scope": op.get("owner_scope", node_scope(origin))}
            self._submit_write(server, entry_op, req_id, origin, token)

        elif kind == "service_read":
            rec = server.store.services.get(op["name"])
            if rec is None:
                self._reply(server, origin, req_id, "ok", value=None)
                return
            idx = self.trace(origin, "service_read_ok",
                             f"name={op['name']} adversary={int(self.nodes[origin].adversary)}")
            if open_mode and self.nodes[origin].adversary:
                self.monitors.note_manipulation(idx)
            self._reply(server, origin, req_id, "ok",
                        value={"endpoint": list(rec.endpoint),
                               "config": dict(rec.config)})

        elif kind == "service_register":
            name = op["name"]
            if self.security.acls and not open_mode and not server.store.allows_service(
                    token, WRITE, name, now):
                self.trace(origin, "service_register_denied", f"name={name}")
                self._reply(server, origin, req_id, "denied", reason="acl")
                return
            entry_op = {"kind": "service_register", "name": name,
                        "endpoint": list(op["endpoint"]),
                        "config": dict(op.get("config", {})),
                        "owner_scope": op.get("owner_scope", node_scope(origin))}
            self._submit_write(server, entry_op, req_id, origin, token)

        elif kind == "acl_mint":
            if not self.security.acls:
                self._reply(server, origin, req_id, "denied", reason="acls-off")
                return
            if not server.store.allows_admin(token, now):
                self.trace(origin, "acl_mint_denied", "")
                self._reply(server, origin, req_id, "denied", reason="acl")
                return
            token_id = op.get("token_id") or f"tok-r{req_id}"
            lifetime = op.get("lifetime")
            entry_op = {"kind": "acl_put", "token_id": token_id,
                        "scopes": list(op["scopes"]),
                        "lifetime": math.inf if lifetime is None else lifetime,
                        "issued_at": now}
            self.trace(origin, "acl_mint", f"token={token_id}")
            self._submit_write(server, entry_op, req_id, origin, token)

        elif kind == "force_leave":
            target = op["target"]
            if target not in self.members:
                self._reply(server, origin, req_id, "denied", reason="unknown-target")
                return
            ok, reason = membership.authorize_force_leave(self, server, p)
            if not ok:
                self.trace(origin, "force_leave_denied",
                           f"target={target} reason={reason}")
                self._reply(server, origin, req_id, "denied", reason=reason)
                return
            self._execute_force_leave(server, origin, target)
            self._reply(server, origin, req_id, "granted")

        else:
            self._reply(server, origin, req_id, "denied", reason="unknown-op")

    def _execute_force_leave(self, server: Node, issuer: int, target: int) -> None:
        self.members[target].left = True
        self.trace(issuer, "force_leave_granted", f"target={target}")
        idx = self.trace(target, "member_left", f"by={issuer}")
        self.monitors.note_member_left(idx)
        for pid in sorted(server.view):
            if server.view[pid].left or pid == server.node_id:
                continue
            self.send_rpc(server, pid, {"kind": "member_leave", "target": target})
        membership.apply_member_leave(self, server, target)

    def _submit_write(self, server: Node, entry_op: dict, req_id: int,
                      origin: int, token) -> None:
        st = server.raft
        if st.role == LEADER:
            st.log.append(LogEntry(term=st.term, op=entry_op, req_id=req_id,
                                   origin=origin))
            consensus.advance_commit(self, server)  # self-ack may suffice
            return
        lid = st.recognized_leader
        if lid is None or lid not in self.nodes or not self.nodes[lid].proc_alive:
            self._reply(server, origin, req_id, "unavailable", reason="no-leader")
            return
        self.send_rpc(server, lid, {"kind": "submit_forward", "entry": entry_op,
                                    "req_id": req_id, "origin": origin,
                                    "auth_token": token})

    def _handle_submit_forward(self, leader: Node, env) -> None:
        if leader.raft.role != LEADER:
            return  # stale forward; the request will time out and retry
        p = env.payload
        entry_op, origin, token = p["entry"], p["origin"], p.get("auth_token")
        if self.security.acls and not self.spec.open_registry:
            store = leader.store
            ok = True
            if entry_op["kind"] == "kv_put":
                ok = store.allows_kv(token, WRITE, entry_op["key"], self.now)
            elif entry_op["kind"] == "service_register":
                ok = store.allows_service(token, WRITE, entry_op["name"], self.now)
            elif entry_op["kind"] == "acl_put":
                ok = store.allows_admin(token, self.now)
            if not ok:
                self._reply(leader, origin, p["req_id"], "denied", reason="acl")
                return
        leader.raft.log.append(LogEntry(term=leader.raft.term, op=entry_op,
                                        req_id=p["req_id"], origin=origin))
        consensus.advance_commit(self, leader)

    def _handle_api_reply(self, node: Node, env) -> None:
        p = env.payload
        req = self.pending.get(p["req_id"])
        if req is None or req.resolved or req.origin != node.node_id:
            return
        req.status = p["status"]
        req.value = p.get("value")
        req.reason = p.get("reason", "")
        req.token_id = p.get("token_id")

    # -- inbox processing --------------------------------------------------

    def classify(self, node: Node, env) -> tuple[float, bool]:
        """Cost model and envelope-layer screening for one inbound message."""
        c = self.constants
        kind = env.payload.get("kind")
        if node.adversary:
            if env.channel == GOSSIP and env.sealed:
                key = node.secrets.gossip_key
                if key is None or env.seal_key != key.key_id:
                    return c.cost_drop, False
            return c.cost_consensus, True
        if env.channel == GOSSIP:
            if kind == "join_request":
                return c.cost_verify, True
            if self.security.gossip_encryption:
                if (self.gossip_key is None or env.seal_key is None
                        or env.seal_key != self.gossip_key.key_id):
                    return c.cost_drop, False
            if kind in ("join_ack", "join_reject"):
                return c.cost_consensus, True
            entry = node.view.get(env.src)
            if entry is None or entry.left:
                return c.cost_drop, False
            return c.cost_consensus, True
        # rpc channel
        if self.security.tls and not security.verify_cert(
                env.cert, self.ca, self.now, expected_subject=env.src):
            return c.cost_drop, False
        base = c.cost_verify if self.security.acls else c.cost_consensus
        if kind in CONSENSUS_KINDS or kind == "submit_forward":
            entry = node.view.get(env.src)
            if entry is None or entry.left:
                return c.cost_drop, False
            return base, True
        if kind in ("api_request", "api_reply", "member_leave"):
            return base, True
        return base, False

    def _dispatch(self, node: Node, env) -> None:
        kind = env.payload.get("kind")
        if node.adversary:
            # compromised and sybil members keep speaking the protocol
            # (stealth); they just never initiate elections on their own
            if kind == "heartbeat":
                membership.handle_heartbeat(self, node, env)
            elif kind == "join_ack":
                membership.handle_join_ack(self, node, env)
            elif kind in CONSENSUS_KINDS:
                if node.member and node.is_server:
                    consensus.handle(self, node, env)
            elif kind == "api_reply":
                self._handle_api_reply(node, env)
            elif kind == "member_leave":
                membership.apply_member_leave(self, node, env.payload["target"])
            elif self.controller is not None:
                self.controller.observe(node, env)
            return
        if kind == "heartbeat":
            membership.handle_heartbeat(self, node, env)
        elif kind == "join_request":
            membership.handle_join_request(self, node, env)
        elif kind == "join_ack":
            membership.handle_join_ack(self, node, env)
        elif kind == "join_reject":
            pass  # benign joiners simply retry on the next setup pass
        elif kind in CONSENSUS_KINDS:
            if node.member and node.is_server:
                consensus.handle(self, node, env)
        elif kind == "submit_forward":
            self._handle_submit_forward(node, env)
        elif kind == "api_request":
            self._handle_api_request(node, env)
        elif kind == "api_reply":
            self._handle_api_reply(node, env)
        elif kind == "member_leave":
            membership.apply_member_leave(self, node, env.payload["target"])

    def _process_inbox(self, node: Node) -> dict:
        c = self.constants
        spent = 0.0
        processed = 0
        while node.inbox and spent < c.budget_capacity:
            env = node.inbox.popleft()
            cost, deliver = self.classify(node, env)
            spent += cost
            processed += 1
            if deliver:
                self._dispatch(node, env)
        starved = bool(node.inbox)
        if starved != node.starved:
            self.trace(node.node_id, "starved_flip", f"starved={int(starved)}")
        node.starved = starved
        node.last_budget = {"spent": round(spent, 4), "processed": processed,
                            "starved": starved}
        return node.last_budget

    # -- main loop ----------------------------------------------------------

    def step(self) -> None:
        deliveries = self.net.step(lambda nid: self.nodes[nid].proc_alive)
        for dst, env in deliveries:
            self.nodes[dst].inbox.append(env)
        if not self.setup.done:
            self.setup.on_tick()
        elif self.controller is not None:
            self.controller.on_tick(self)
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if node.proc_alive:
                self._process_inbox(node)
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if not node.proc_alive or node.starved:
                continue
            if node.member:
                membership.emit_gossip(self, node)
            if node.adversary:
                if self.controller is not None:
                    self.controller.timer_emit(self, node)
                # a compromised leader keeps leading until told otherwise
                if (node.member and node.is_server
                        and node.raft.role == consensus.LEADER):
                    consensus.emit_heartbeat(self, node)
            elif node.member and node.is_server:
                consensus.timer(self, node)
        self._pending_timeouts()
        self._emit_status_changes()
        self.monitors.on_tick()

    def _emit_status_changes(self) -> None:
        observers = [n for n in self.nodes.values()
                     if not n.adversary and n.member and n.proc_alive]
        if not observers:
            return
        consts = self.constants
        for nid in sorted(self.members):
            votes: dict[str, int] = {}
            for obs in observers:
                entry = obs.view.get(nid)
                if entry is None:
                    continue
                st = membership.entry_status(entry, self.now, consts)
                votes[st] = votes.get(st, 0) + 1
            if not votes:
                continue
            best = max(sorted(votes), key=lambda s: votes[s])
            if self._member_status.get(nid) != best:
                self._member_status[nid] = best
                self.trace(nid, "member_status", f"status={best}")

    def run_ticks(self, count: int) -> None:
        for _ in range(count):
            self.step()

    def run_until(self, predicate, limit: int) -> bool:
        while self.now < limit:
            self.step()
            if predicate():
                return True
        return False

    def run_setup(self) -> None:
        if not self.run_until(lambda: self.setup.done, limit=90):
            raise ScenarioError("cluster setup failed to converge")

    def state_fingerprint(self) -> str:
        """Digest of all benign replica states; equal prefixes must agree."""
        parts = []
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if node.store is not None:
                parts.append(f"{nid}:{node.store.fingerprint()}")
        return "||".join(parts)
