"""Scenario definitions: topology, security mechanisms, adversary position,
tuning constants, and the seed that pins every run down to the byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import ValidationError
from .security import COLUMNS, SecurityConfig

UNPRIVILEGED = "unprivileged"
CLIENT_COMPROMISE = "client_compromise"
SERVER_COMPROMISE = "server_compromise"
LEADER_COMPROMISE = "leader_compromise"
LEVEL_ORDER = (UNPRIVILEGED, CLIENT_COMPROMISE, SERVER_COMPROMISE, LEADER_COMPROMISE)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SimConstants:
    """Tunable model constants.

    The flood-related defaults are calibrated so that, with ACLs as the only
    active mechanism, quorum disruption needs between 10 and 25 attacker
    members: each attacker emits adversary_rate messages per tick spread
    round-robin over the benign servers, every unauthorized message costs
    cost_verify to reject, and a server that burns through budget_capacity
    before clearing its inbox skips that tick's heartbeats and timers.
    """

    budget_capacity: float = 40.0
    cost_drop: float = 0.05
    cost_verify: float = 1.0
    cost_consensus: float = 1.0
    adversary_rate: int = 6
    election_timeout_min: int = 3
    election_timeout_max: int = 6
    gossip_fanout: int = 3
    suspect_after: int = 3
    failed_after: int = 5
    disruption_window: int = 10
    takeover_window: int = 3
    request_timeout: int = 12
    flood_ticks: int = 30
    join_batch: int = 5
    settle_ticks: int = 15


@dataclass(frozen=True)
class Topology:
    servers: int = 3
    clients: int = 1
    bootstrappers: tuple = (1,)

    def server_ids(self) -> list[int]:
        return list(range(1, self.servers + 1))

    def client_ids(self) -> list[int]:
        return list(range(self.servers + 1, self.servers + self.clients + 1))


@dataclass(frozen=True)
class AdversarySpec:
    level: str = UNPRIVILEGED
    sybil_count: int = 25
    steps: Optional[tuple] = None  # explicit step strings override the playbook


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    security: SecurityConfig = field(default_factory=SecurityConfig)
    topology: Topology = field(default_factory=Topology)
    adversary: Optional[AdversarySpec] = None
    open_registry: bool = False
    constants: SimConstants = field(default_factory=SimConstants)
    max_ticks: int = 400
    expectation: Optional[dict] = None
    name: str = "scenario"
    schema_version: int = SCHEMA_VERSION


def _pick(data: dict, allowed: set, where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown fields {sorted(unknown)}")


def constants_from_dict(data: dict) -> SimConstants:
    fields = {f.name: f.type for f in dataclasses.fields(SimConstants)}
    _pick(data, set(fields), "constants")
    return SimConstants(**data)


def spec_from_dict(data: dict, name: str = "scenario") -> ScenarioSpec:
    _pick(data, {"schema_version", "seed", "security", "topology", "adversary",
                 "open_registry", "constants", "max_ticks", "expectation",
                 "name"}, name)
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"schema_version {version} unsupported")
    if "seed" not in data or not isinstance(data["seed"], int):
        raise ValidationError("seed: required integer (determinism needs an explicit seed)")

    sec_data = data.get("security", {})
    if isinstance(sec_data, str):
        if sec_data not in COLUMNS:
            raise ValidationError(f"security: unknown preset {sec_data!r}")
        sec = COLUMNS[sec_data]
    else:
        _pick(sec_data, {"label_secret", "gossip_encryption", "acls", "tls"},
              "security")
        sec = SecurityConfig(**sec_data)

    topo_data = dict(data.get("topology", {}))
    _pick(topo_data, {"servers", "clients", "bootstrappers"}, "topology")
    topo_data["bootstrappers"] = tuple(topo_data.get("bootstrappers", (1,)))
    topo = Topology(**topo_data)
    if topo.servers < 1 or topo.clients < 0:
        raise ValidationError("topology: need at least one server")
    if len(topo.bootstrappers) != 1:
        raise ValidationError("topology: exactly one benign bootstrapper required")
    if topo.bootstrappers[0] not in topo.server_ids():
        raise ValidationError("topology: bootstrapper must be a server")

    adv = None
    if data.get("adversary") is not None:
        adv_data = dict(data["adversary"])
        _pick(adv_data, {"level", "sybil_count", "steps"}, "adversary")
        if adv_data.get("level", UNPRIVILEGED) not in LEVEL_ORDER:
            raise ValidationError(f"adversary.level: unknown {adv_data.get('level')!r}")
        if adv_data.get("steps") is not None:
            adv_data["steps"] = tuple(adv_data["steps"])
        adv = AdversarySpec(**adv_data)

    consts = constants_from_dict(dict(data.get("constants", {})))
    expectation = data.get("expectation")
    if expectation is not None:
        _pick(expectation, {"disruption", "manipulation", "takeover"}, "expectation")

    return ScenarioSpec(seed=data["seed"], security=sec, topology=topo,
                        adversary=adv, open_registry=bool(data.get("open_registry", False)),
                        constants=consts, max_ticks=int(data.get("max_ticks", 400)),
                        expectation=expectation, name=data.get("name", name))


def load_scenario(path: str) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: scenario must be a JSON object")
    try:
        return spec_from_dict(data, name=path)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def spec_to_dict(spec: ScenarioSpec) -> dict:
    out = {
        "schema_version": spec.schema_version,
        "name": spec.name,
        "seed": spec.seed,
        "security": dataclasses.asdict(spec.security),
        "topology": {"servers": spec.topology.servers,
                     "clients": spec.topology.clients,
                     "bootstrappers": list(spec.topology.bootstrappers)},
        "open_registry": spec.open_registry,
        "constants": dataclasses.asdict(spec.constants),
        "max_ticks": spec.max_ticks,
    }
    if spec.adversary is not None:
        out["adversary"] = {"level": spec.adversary.level,
                            "sybil_count": spec.adversary.sybil_count}
        if spec.adversary.steps is not None:
            out["adversary"]["steps"] = list(spec.adversary.steps)
    if spec.expectation is not None:
        out["expectation"] = dict(spec.expectation)
    return out
