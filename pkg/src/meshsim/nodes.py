"""Node identity, configuration, and the plaintext-at-rest secret store.

Compromising a node discloses its entire secret store and flips its
allegiance while leaving its cluster-visible state untouched; everything an
attacker gains afterwards comes from using those secrets.
"""

from __future__ import annotations

import copy
import random
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .security import Certificate, GossipKey
from .statestore import AclToken

BENIGN = "benign"
ADVERSARY = "adversary"

SERVER = "server"
CLIENT = "client"

ALIVE = "alive"
CRASHED = "crashed"
LEFT = "left"


@dataclass
class NodeConfig:
    role: str
    dc_label: str = ""
    bootstrapper: bool = False
    verify_server_hostname: bool = False
    allegiance: str = BENIGN


@dataclass
class SecretStore:
    """Everything on disk, readable in full by whoever owns the box."""

    dc_label: Optional[str] = None
    gossip_key: Optional[GossipKey] = None
    acl_token: Optional[AclToken] = None
    cert: Optional[Certificate] = None
    ca_key: Optional[str] = None  # present only on the CA host

    def dump(self) -> "SecretStore":
        return copy.deepcopy(self)


@dataclass
class ViewEntry:
    """One member as seen from one node's registry."""

    role: str
    incarnation: int = 0
    last_alive: int = 0
    left: bool = False
    server_validated: bool = False

    def copy(self) -> "ViewEntry":
        return ViewEntry(self.role, self.incarnation, self.last_alive,
                         self.left, self.server_validated)


class Node:
    """Process state for one simulated agent; owned by the event loop."""

    def __init__(self, node_id: int, config: NodeConfig, secrets: SecretStore,
                 rng: random.Random):
        self.node_id = node_id
        self.config = config
        self.secrets = secrets
        self.rng = rng
        self.proc_alive = True
        self.member = False
        self.evicted = False
        self.incarnation = 0
        self.inbox: deque = deque()
        self.view: dict[int, ViewEntry] = {}
        self.raft = None   # consensus.RaftState, attached by the cluster
        self.store = None  # statestore.StateStore on servers
        self.starved = False
        self.last_budget: dict = {}

    @property
    def is_server(self) -> bool:
        return self.config.role == SERVER

    @property
    def adversary(self) -> bool:
        return self.config.allegiance == ADVERSARY

    def status(self) -> str:
        if not self.proc_alive:
            return CRASHED
        if self.evicted and not self.member:
            return LEFT
        return ALIVE
