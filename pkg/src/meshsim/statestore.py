"""Replicated application state: key/value entries, service records, and the
token table that enforces default-deny access control.

Mutations only ever arrive through committed log entries, so applying the
same log prefix on any replica yields an identical store. Authorization is
checked where a request enters the mesh, before it is submitted to the log.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

MANAGEMENT = "management"

READ = "read"
WRITE = "write"
ADMIN = "admin"


def node_scope(node_id: int) -> str:
    return f"node:{node_id}"


def service_scope(name: str) -> str:
    return f"service:{name}"


def kv_scope(prefix: str) -> str:
    return f"kv:{prefix}"


@dataclass(frozen=True)
class AclToken:
    """Bearer credential. Default lifetime is infinite; nothing renews it."""

    token_id: str
    scopes: tuple[str, ...]
    lifetime: float = math.inf
    issued_at: int = 0

    def live(self, now: int) -> bool:
        return now < self.issued_at + self.lifetime


@dataclass(frozen=True)
class AclPolicy:
    """Effective rule table: allow rules derived from token scopes, default
    deny, and policy edits restricted to the management scope."""

    default_deny: bool = True
    admin_scope: str = MANAGEMENT


@dataclass
class KvEntry:
    key: str
    value: str
    owner_scope: str


@dataclass
class ServiceRecord:
    name: str
    endpoint: tuple[int, int]  # (node id, port)
    config: dict = field(default_factory=dict)
    owner_scope: str = MANAGEMENT


class StateStore:
    """One replica of the consensus-applied state machine."""

    def __init__(self) -> None:
        self.kv: dict[str, KvEntry] = {}
        self.services: dict[str, ServiceRecord] = {}
        self.tokens: dict[str, AclToken] = {}
        self.policy = AclPolicy()
        self.applied = 0

    def apply(self, op: dict) -> None:
        """Apply one committed mutation. Must stay deterministic."""
        kind = op["kind"]
        if kind == "kv_put":
            self.kv[op["key"]] = KvEntry(key=op["key"], value=op["value"],
                                         owner_scope=op.get("owner_scope", MANAGEMENT))
        elif kind == "kv_delete":
            self.kv.pop(op["key"], None)
        elif kind == "service_register":
            self.services[op["name"]] = ServiceRecord(
                name=op["name"], endpoint=tuple(op["endpoint"]),
                config=dict(op.get("config", {})),
                owner_scope=op.get("owner_scope", MANAGEMENT))
        elif kind == "acl_put":
            tok = AclToken(token_id=op["token_id"], scopes=tuple(op["scopes"]),
                           lifetime=op.get("lifetime", math.inf),
                           issued_at=op.get("issued_at", 0))
            self.tokens[tok.token_id] = tok
        else:
            raise ValueError(f"unknown state mutation {kind!r}")
        self.applied += 1

    # -- authorization -------------------------------------------------

    def token(self, token_id, now: int):
        tok = self.tokens.get(token_id)
        if tok is not None and tok.live(now):
            return tok
        return None

    def allows_kv(self, token_id, verb: str, key: str, now: int) -> bool:
        tok = self.token(token_id, now)
        if tok is None:
            return False
        if MANAGEMENT in tok.scopes:
            return True
        for scope in tok.scopes:
            if scope.startswith("kv:") and key.startswith(scope[3:]):
                return True
        return False

    def allows_service(self, token_id, verb: str, name: str, now: int) -> bool:
        tok = self.token(token_id, now)
        if tok is None:
            return False
        return MANAGEMENT in tok.scopes or service_scope(name) in tok.scopes

    def allows_admin(self, token_id, now: int) -> bool:
        tok = self.token(token_id, now)
        return tok is not None and self.policy.admin_scope in tok.scopes

    def has_node_token(self, node_id: int, now: int) -> bool:
        """True when some live token binds the node into the cluster."""
        want = node_scope(node_id)
        for tok in self.tokens.values():
            if tok.live(now) and (want in tok.scopes or MANAGEMENT in tok.scopes):
                return True
        return False

    def fingerprint(self) -> str:
        state = {
            "kv": {k: (e.value, e.owner_scope) for k, e in sorted(self.kv.items())},
            "services": {n: (list(r.endpoint), sorted(r.config.items()), r.owner_scope)
                         for n, r in sorted(self.services.items())},
            "tokens": {t: sorted(tok.scopes) for t, tok in sorted(self.tokens.items())},
        }
        return json.dumps(state, sort_keys=True)
