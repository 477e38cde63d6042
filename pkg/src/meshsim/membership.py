"""Gossip membership: gated joins, heartbeat dissemination, failure
suspicion, and the force-leave eviction path.

Joins pass a three-gate chain: the datacenter label must match, the request
must be sealed with the cluster gossip key when encryption is on, and a
CA-signed certificate must back the claimed role when TLS is on. Member
views converge epidemically because every heartbeat piggybacks the sender's
full view. A node is suspected after its liveness evidence ages past
suspect_after ticks and considered failed past failed_after; eviction via
force-leave is the only way a member becomes "left".
"""

from __future__ import annotations

from . import security
from .nodes import SERVER, Node, ViewEntry

REJECT_LABEL = "label"
REJECT_KEY = "key"
REJECT_CERT = "cert"
REJECT_ACL = "acl"
REJECT_CERT_AUTHORITY = "cert-authority"

STATUS_ALIVE = "alive"
STATUS_SUSPECT = "suspect"
STATUS_FAILED = "failed"
STATUS_LEFT = "left"


def entry_status(entry: ViewEntry, now: int, consts) -> str:
    if entry.left:
        return STATUS_LEFT
    age = now - entry.last_alive
    if age >= consts.failed_after:
        return STATUS_FAILED
    if age >= consts.suspect_after:
        return STATUS_SUSPECT
    return STATUS_ALIVE


def view_wire(node: Node) -> list:
    """Serialize a view for piggybacking on a heartbeat."""
    return [(nid, e.role, e.incarnation, e.last_alive, e.left, e.server_validated)
            for nid, e in sorted(node.view.items())]


def merge_view(node: Node, wire: list) -> None:
    for nid, role, inc, last_alive, left, validated in wire:
        mine = node.view.get(nid)
        if mine is None or inc > mine.incarnation:
            node.view[nid] = ViewEntry(role, inc, last_alive, left, validated)
            continue
        if inc == mine.incarnation:
            mine.last_alive = max(mine.last_alive, last_alive)
            mine.left = mine.left or left
            mine.server_validated = mine.server_validated or validated


def gossip_targets(node: Node, now: int, fanout: int) -> list[int]:
    peers = sorted(nid for nid, e in node.view.items()
                   if nid != node.node_id and not e.left)
    if len(peers) <= fanout:
        return peers
    return sorted(node.rng.sample(peers, fanout))


def emit_gossip(cluster, node: Node) -> None:
    """One heartbeat round: refresh own liveness, gossip the view."""
    now = cluster.now
    self_entry = node.view.get(node.node_id)
    if self_entry is None:
        return
    self_entry.last_alive = now
    payload = {
        "kind": "heartbeat",
        "dc_label": node.secrets.dc_label or node.config.dc_label,
        "view": view_wire(node),
    }
    for target in gossip_targets(node, now, cluster.constants.gossip_fanout):
        cluster.send_gossip(node, target, payload)


def handle_heartbeat(cluster, node: Node, env) -> None:
    src_entry = node.view.get(env.src)
    if src_entry is None or src_entry.left:
        return
    merge_view(node, env.payload["view"])


def build_join_request(node: Node, dc_label, cert) -> dict:
    return {
        "kind": "join_request",
        "node": node.node_id,
        "role": node.config.role,
        "dc_label": dc_label,
        "cert": cert,
        "incarnation": node.incarnation,
    }


def evaluate_join(cluster, seed: Node, env):
    """Run the gate chain; returns (accepted, reason)."""
    p = env.payload
    sec = cluster.security
    if p.get("dc_label") != cluster.label:
        return False, REJECT_LABEL
    if sec.gossip_encryption:
        key = cluster.gossip_key
        if env.seal_key is None or key is None or env.seal_key != key.key_id:
            return False, REJECT_KEY
    if sec.tls:
        cert = p.get("cert")
        if not security.verify_cert(cert, cluster.ca, cluster.now,
                                    expected_subject=p["node"]):
            return False, REJECT_CERT
        if (seed.config.verify_server_hostname and p["role"] == SERVER
                and cert.role != SERVER):
            return False, REJECT_CERT
    return True, None


def handle_join_request(cluster, seed: Node, env) -> None:
    p = env.payload
    joiner = p["node"]
    accepted, reason = evaluate_join(cluster, seed, env)
    if not accepted:
        cluster.record_join(joiner, seed.node_id, False, reason)
        cluster.send_gossip(seed, joiner,
                            {"kind": "join_reject", "reason": reason})
        return
    old = seed.view.get(joiner)
    incarnation = old.incarnation + 1 if old is not None else 0
    validated = p["role"] == SERVER and (not cluster.security.tls
                                         or p["cert"].role == SERVER)
    seed.view[joiner] = ViewEntry(role=p["role"], incarnation=incarnation,
                                  last_alive=cluster.now, left=False,
                                  server_validated=validated)
    cluster.admit_member(joiner, p["role"], incarnation)
    cluster.record_join(joiner, seed.node_id, True, None)
    cluster.send_gossip(seed, joiner, {
        "kind": "join_ack",
        "view": view_wire(seed),
        "raft_term": seed.raft.term if seed.raft else 0,
        "incarnation": incarnation,
    })


def handle_join_ack(cluster, node: Node, env) -> None:
    node.member = True
    node.evicted = False
    node.incarnation = env.payload["incarnation"]
    merge_view(node, env.payload["view"])
    cluster.on_membership_gained(node, env.payload.get("raft_term", 0))


def authorize_force_leave(cluster, contact: Node, payload) -> tuple[bool, str]:
    """Rule chain guarding eviction.

    With ACLs on the issuer needs a management token; with TLS on the
    request must additionally be signed with the certificate of the leader
    the contact currently recognizes. With neither, anyone who can reach a
    member may evict anyone.
    """
    sec = cluster.security
    now = cluster.now
    if sec.acls:
        store = contact.store if contact.store is not None else cluster.any_server_store()
        if store is None or not store.allows_admin(payload.get("token"), now):
            return False, REJECT_ACL
    if sec.tls:
        evidence = payload.get("evidence_cert")
        leader = contact.raft.recognized_leader if contact.raft else None
        if leader is None or not security.verify_cert(
                evidence, cluster.ca, now, expected_subject=leader):
            return False, REJECT_CERT_AUTHORITY
    return True, ""


def apply_member_leave(cluster, node: Node, target: int) -> None:
    entry = node.view.get(target)
    if entry is not None:
        entry.left = True
    if target == node.node_id:
        node.member = False
        node.evicted = True
    if node.raft is not None and node.raft.recognized_leader == target:
        from . import consensus
        consensus.lose_leader(cluster, node)
