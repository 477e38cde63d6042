"""The four toggleable defense layers and their symbolic credentials.

Key material is symbolic: holding the right identifier stands in for the
ability to decrypt or sign, so equality checks replace real cryptography.
Deliberately, no credential type here has a rotate, revoke, or redistribute
operation; the defaults report introspects this module to confirm their
absence.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

# One year of one-second heartbeats; effectively infinite at simulation scale.
CERT_LIFETIME_TICKS = 31_536_000

SERVER = "server"
CLIENT = "client"


@dataclass(frozen=True)
class SecurityConfig:
    """Independent mechanism switches; all off is the stock configuration."""

    label_secret: bool = False
    gossip_encryption: bool = False
    acls: bool = False
    tls: bool = False


# The five studied defense columns, in canonical report order.
COLUMN_ORDER = ("label", "gossip", "acls", "tls", "all")
COLUMNS: dict[str, SecurityConfig] = {
    "label": SecurityConfig(label_secret=True),
    "gossip": SecurityConfig(gossip_encryption=True),
    "acls": SecurityConfig(acls=True),
    "tls": SecurityConfig(tls=True),
    "all": SecurityConfig(label_secret=True, gossip_encryption=True,
                          acls=True, tls=True),
}


@dataclass(frozen=True)
class GossipKey:
    """Single symmetric key shared by every member; never rotated."""

    key_id: str


@dataclass(frozen=True)
class Certificate:
    subject: int
    role: str  # server | client | ca
    signer: str
    issued_at: int = 0
    lifetime: int = CERT_LIFETIME_TICKS

    def expired(self, now: int) -> bool:
        return now >= self.issued_at + self.lifetime


@dataclass(frozen=True)
class CaState:
    """Single certificate authority; signing requires possession of ca_key."""

    ca_key: str
    host: int


def generate_gossip_key(rng: random.Random) -> GossipKey:
    return GossipKey(key_id=f"gossip-{rng.getrandbits(64):016x}")


def generate_label(rng: random.Random) -> str:
    return f"dc-{rng.getrandbits(32):08x}"


def init_ca(host: int, rng: random.Random) -> CaState:
    return CaState(ca_key=f"ca-{rng.getrandbits(64):016x}", host=host)


def issue_cert(held_key, ca: CaState, subject: int, role: str, now: int = 0):
    """Sign a certificate; returns None unless the caller holds the CA key."""
    if held_key != ca.ca_key:
        return None
    return Certificate(subject=subject, role=role, signer=ca.ca_key, issued_at=now)


def verify_cert(cert, ca, now: int, expected_subject=None) -> bool:
    if cert is None or ca is None:
        return False
    if cert.signer != ca.ca_key or cert.expired(now):
        return False
    if expected_subject is not None and cert.subject != expected_subject:
        return False
    return True


@dataclass(frozen=True)
class Sealed:
    """A payload sealed under a gossip key; opens only with the same key."""

    key_id: str
    payload: dict


def seal(payload: dict, key: GossipKey) -> Sealed:
    return Sealed(key_id=key.key_id, payload=payload)


def open_sealed(sealed: Sealed, key: GossipKey):
    """Returns the payload, or None when the keys do not match."""
    if key is None or sealed.key_id != key.key_id:
        return None
    return sealed.payload


@dataclass(frozen=True)
class MechanismInfo:
    """Registry row for one defense layer, used by the defaults report."""

    name: str
    config_attr: str
    credential_type: str  # class name, resolved by the report
    lifetime_label: str


MECHANISMS = (
    MechanismInfo("Cluster Message Encryption", "gossip_encryption", "GossipKey", "inf"),
    MechanismInfo("Service Message Encryption", "tls", "Certificate", "1 year"),
    MechanismInfo("Cluster Access Control", "acls", "AclToken", "inf"),
    MechanismInfo("Service Access Control", "acls", "AclToken", "inf"),
)
