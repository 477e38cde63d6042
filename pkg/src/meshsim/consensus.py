"""Leader election and log replication over the member views, plus the
per-tick processing budget that floods exhaust.

Two deliberate deviations from textbook behavior keep a hostile minority
from stealing or wrecking leadership with nothing but term inflation:

* Stickiness: a node that can still hear its recognized leader ignores vote
  requests and rival leadership claims outright. Leadership only changes
  hands once the incumbent is evicted, crashes, or goes silent past the
  election timeout.
* Deterministic tie-break: a candidate that receives a same-term vote
  request from a lower-id candidate abandons its own candidacy and grants.
  Split votes therefore resolve in one extra round trip instead of a
  rerandomized retry, which keeps worst-case election gaps inside twice the
  maximum election timeout.

Whether a peer counts as a consensus participant at all depends on the
active mechanisms: with ACLs on it must have a live token binding it into
the cluster, with TLS on it must have joined on a server certificate.
Messages that fail those checks still cost budget to reject, which is
exactly the lever a flood pulls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .nodes import Node, SERVER
from .statestore import MANAGEMENT, node_scope

FOLLOWER = "follower"
CANDIDATE = "candidate"
LEADER = "leader"

CONSENSUS_KINDS = ("vote_request", "vote_grant", "append_entries", "append_ack")


@dataclass
class LogEntry:
    term: int
    op: dict
    req_id: int = -1
    origin: int = -1


@dataclass
class RaftState:
    term: int = 0
    role: str = FOLLOWER
    voted_for: int | None = None
    voted_term: int = -1
    log: list = field(default_factory=list)
    commit_index: int = -1
    recognized_leader: int | None = None
    last_contact: int = 0
    timeout: int = 0
    votes: set = field(default_factory=set)
    next_index: dict = field(default_factory=dict)
    match_index: dict = field(default_factory=dict)


def majority(n: int) -> int:
    return n // 2 + 1


def draw_timeout(cluster, node: Node) -> int:
    c = cluster.constants
    return node.rng.randint(c.election_timeout_min, c.election_timeout_max)


def counted_server(cluster, observer: Node, peer_id: int) -> bool:
    """Does the observer count this peer as a legitimate consensus voter?"""
    entry = observer.view.get(peer_id)
    if entry is None:
        return False
    if peer_id != observer.node_id and (entry.left or entry.role != SERVER):
        return False
    if cluster.security.tls and not entry.server_validated:
        return False
    if cluster.security.acls:
        store = observer.store if observer.store is not None else cluster.any_server_store()
        if store is None or not store.has_node_token(peer_id, cluster.now):
            return False
    return True


def voter_set(cluster, node: Node) -> list[int]:
    return sorted(pid for pid, e in node.view.items()
                  if e.role == SERVER and not e.left
                  and counted_server(cluster, node, pid))


def authentic_consensus_sender(cluster, observer: Node, env) -> bool:
    """Per-message authenticity: sender must be a counted server and, under
    ACLs, present a live token bound to itself."""
    if not counted_server(cluster, observer, env.src):
        return False
    if cluster.security.acls:
        store = observer.store if observer.store is not None else cluster.any_server_store()
        if store is None:
            return False
        tok = store.token(env.payload.get("token"), cluster.now)
        if tok is None:
            return False
        if node_scope(env.src) not in tok.scopes and MANAGEMENT not in tok.scopes:
            return False
    return True


def leader_present(cluster, node: Node) -> bool:
    st = node.raft
    if st.recognized_leader is None:
        return False
    if st.recognized_leader == node.node_id:
        return st.role == LEADER
    entry = node.view.get(st.recognized_leader)
    if entry is None or entry.left:
        return False
    return cluster.now - st.last_contact < st.timeout


def lose_leader(cluster, node: Node) -> None:
    st = node.raft
    if st.recognized_leader is None and st.role != LEADER:
        return
    st.recognized_leader = None
    if st.role == LEADER:
        st.role = FOLLOWER
    st.last_contact = cluster.now
    st.timeout = draw_timeout(cluster, node)


def become_follower(cluster, node: Node, term: int, leader=None) -> None:
    st = node.raft
    st.term = term
    st.role = FOLLOWER
    st.recognized_leader = leader
    st.last_contact = cluster.now
    st.timeout = draw_timeout(cluster, node)


def broadcast_vote_requests(cluster, node: Node) -> None:
    st = node.raft
    last_index = len(st.log) - 1
    last_term = st.log[last_index].term if st.log else -1
    for pid in voter_set(cluster, node):
        if pid == node.node_id:
            continue
        cluster.send_rpc(node, pid, {
            "kind": "vote_request", "term": st.term,
            "last_log_index": last_index, "last_log_term": last_term,
        })


def start_election(cluster, node: Node) -> None:
    st = node.raft
    st.term += 1
    st.role = CANDIDATE
    st.voted_for = node.node_id
    st.voted_term = st.term
    st.votes = {node.node_id}
    st.recognized_leader = None
    st.last_contact = cluster.now
    st.timeout = draw_timeout(cluster, node)
    cluster.trace(node.node_id, "election_started", f"term={st.term}")
    broadcast_vote_requests(cluster, node)
    maybe_win(cluster, node)


def log_up_to_date(st: RaftState, last_log_term: int, last_log_index: int) -> bool:
    my_index = len(st.log) - 1
    my_term = st.log[my_index].term if st.log else -1
    return (last_log_term, last_log_index) >= (my_term, my_index)


def maybe_win(cluster, node: Node) -> None:
    st = node.raft
    voters = voter_set(cluster, node)
    if node.node_id not in voters:
        voters.append(node.node_id)
    if len(st.votes & set(voters)) >= majority(len(voters)):
        st.role = LEADER
        st.recognized_leader = node.node_id
        st.next_index = {pid: len(st.log) for pid in voters if pid != node.node_id}
        st.match_index = {pid: -1 for pid in voters if pid != node.node_id}
        cluster.trace(node.node_id, "leader_elected", f"term={st.term}")
        emit_heartbeat(cluster, node)


def emit_heartbeat(cluster, node: Node) -> None:
    """Leader side: append-entries to every server-role peer in view."""
    st = node.raft
    for pid, entry in sorted(node.view.items()):
        if pid == node.node_id or entry.left or entry.role != SERVER:
            continue
        nxt = st.next_index.get(pid, len(st.log))
        prev_index = nxt - 1
        prev_term = st.log[prev_index].term if 0 <= prev_index < len(st.log) else -1
        entries = [(e.term, e.op, e.req_id, e.origin) for e in st.log[nxt:nxt + 8]]
        cluster.send_rpc(node, pid, {
            "kind": "append_entries", "term": st.term, "leader": node.node_id,
            "prev_index": prev_index, "prev_term": prev_term,
            "entries": entries, "commit_index": st.commit_index,
        })


def timer(cluster, node: Node) -> None:
    """Consensus timer work for one tick; skipped entirely when starved."""
    st = node.raft
    if not node.member or not node.is_server:
        return
    if st.role == LEADER:
        emit_heartbeat(cluster, node)
        return
    if st.recognized_leader is not None and not leader_present(cluster, node):
        # silence past the timeout: clear without re-drawing, so candidacy
        # starts now and the election gap stays inside 2x the max timeout
        st.recognized_leader = None
    if st.recognized_leader is None:
        if cluster.now - st.last_contact >= st.timeout:
            start_election(cluster, node)
        elif st.role == CANDIDATE:
            # keep asking: a request swallowed by a peer still detecting the
            # dead leader must not cost a whole extra timeout round
            broadcast_vote_requests(cluster, node)


def handle(cluster, node: Node, env) -> None:
    kind = env.payload["kind"]
    if not authentic_consensus_sender(cluster, node, env):
        return
    if kind == "vote_request":
        handle_vote_request(cluster, node, env)
    elif kind == "vote_grant":
        handle_vote_grant(cluster, node, env)
    elif kind == "append_entries":
        handle_append_entries(cluster, node, env)
    elif kind == "append_ack":
        handle_append_ack(cluster, node, env)


def handle_vote_request(cluster, node: Node, env) -> None:
    st = node.raft
    p = env.payload
    term = p["term"]
    if st.role == LEADER or leader_present(cluster, node):
        return  # sticky: a live leadership ignores challengers
    if term < st.term:
        cluster.send_rpc(node, env.src, {"kind": "vote_grant", "term": st.term,
                                         "granted": False})
        return
    if term > st.term:
        become_follower(cluster, node, term)
    granted = False
    up_to_date = log_up_to_date(st, p["last_log_term"], p["last_log_index"])
    if up_to_date:
        if st.voted_term < term or st.voted_for in (None, env.src):
            granted = True
        elif (st.role == CANDIDATE and st.voted_for == node.node_id
              and env.src < node.node_id):
            # candidate tie-break: defer to the lower id, drop own candidacy
            become_follower(cluster, node, term)
            granted = True
    if granted:
        st.voted_for = env.src
        st.voted_term = term
        st.term = term
        st.last_contact = cluster.now
        st.timeout = draw_timeout(cluster, node)
        if st.role == CANDIDATE:
            st.role = FOLLOWER
    cluster.send_rpc(node, env.src, {"kind": "vote_grant", "term": term,
                                     "granted": granted})


def handle_vote_grant(cluster, node: Node, env) -> None:
    st = node.raft
    p = env.payload
    if p["term"] > st.term:
        become_follower(cluster, node, p["term"])
        return
    if st.role != CANDIDATE or not p["granted"] or p["term"] != st.term:
        return
    st.votes.add(env.src)
    maybe_win(cluster, node)


def handle_append_entries(cluster, node: Node, env) -> None:
    st = node.raft
    p = env.payload
    term, leader = p["term"], p["leader"]
    if st.recognized_leader not in (None, leader) and leader_present(cluster, node):
        cluster.note_leader_conflict(node, leader, term)
        return
    if st.role == LEADER and leader != node.node_id:
        cluster.note_leader_conflict(node, leader, term)
        return
    if term < st.term:
        cluster.send_rpc(node, env.src, {"kind": "append_ack", "term": st.term,
                                         "success": False, "match_index": -1})
        return
    adopted = st.recognized_leader != leader or st.term != term
    become_follower(cluster, node, term, leader=leader)
    if adopted:
        cluster.on_leader_adopted(node, leader, term)
    prev_index, prev_term = p["prev_index"], p["prev_term"]
    ok = prev_index == -1 or (prev_index < len(st.log)
                              and st.log[prev_index].term == prev_term)
    if ok:
        idx = prev_index + 1
        for eterm, op, req_id, origin in p["entries"]:
            if idx < len(st.log) and st.log[idx].term != eterm:
                del st.log[idx:]
            if idx >= len(st.log):
                st.log.append(LogEntry(term=eterm, op=op, req_id=req_id,
                                       origin=origin))
            idx += 1
        new_commit = min(p["commit_index"], len(st.log) - 1)
        if new_commit > st.commit_index:
            apply_committed(cluster, node, new_commit)
        match = prev_index + len(p["entries"])
    else:
        match = -1
    cluster.send_rpc(node, env.src, {"kind": "append_ack", "term": term,
                                     "success": ok, "match_index": match})


def handle_append_ack(cluster, node: Node, env) -> None:
    st = node.raft
    p = env.payload
    if p["term"] > st.term:
        become_follower(cluster, node, p["term"])
        return
    if st.role != LEADER or p["term"] != st.term:
        return
    if not p["success"]:
        st.next_index[env.src] = max(0, st.next_index.get(env.src, 1) - 1)
        return
    match = p["match_index"]
    if match > st.match_index.get(env.src, -1):
        st.match_index[env.src] = match
    st.next_index[env.src] = max(st.next_index.get(env.src, 0), match + 1)
    advance_commit(cluster, node)


def advance_commit(cluster, node: Node) -> None:
    st = node.raft
    voters = voter_set(cluster, node)
    if node.node_id not in voters:
        voters.append(node.node_id)
    need = majority(len(voters))
    for idx in range(st.commit_index + 1, len(st.log)):
        if st.log[idx].term != st.term:
            continue
        acks = 1 + sum(1 for pid in voters
                       if pid != node.node_id and st.match_index.get(pid, -1) >= idx)
        if acks >= need:
            apply_committed(cluster, node, idx)
        else:
            break


def apply_committed(cluster, node: Node, upto: int) -> None:
    st = node.raft
    while st.commit_index < upto:
        st.commit_index += 1
        entry = st.log[st.commit_index]
        if node.store is not None:
            node.store.apply(entry.op)
        cluster.on_entry_applied(node, st.commit_index, entry)
