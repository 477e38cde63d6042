"""Replicated state machine and the default-deny access control engine."""

import itertools
import math

from meshsim.statestore import (MANAGEMENT, READ, WRITE, AclToken, StateStore,
                                kv_scope, node_scope, service_scope)
from meshsim.security import COLUMNS
from meshsim.cluster import VICTIM_KV_KEY

from conftest import converged_cluster


def ops_fixture():
    return [
        {"kind": "kv_put", "key": "/a/b", "value": "1", "owner_scope": MANAGEMENT},
        {"kind": "service_register", "name": "svc", "endpoint": [4, 80],
         "config": {"x": "y"}, "owner_scope": MANAGEMENT},
        {"kind": "acl_put", "token_id": "t1", "scopes": [node_scope(9)],
         "lifetime": math.inf, "issued_at": 0},
        {"kind": "kv_put", "key": "/a/b", "value": "2", "owner_scope": MANAGEMENT},
        {"kind": "kv_delete", "key": "/a/b"},
    ]


def test_apply_is_deterministic():
    a, b = StateStore(), StateStore()
    for op in ops_fixture():
        a.apply(op)
        b.apply(op)
    assert a.fingerprint() == b.fingerprint()


def test_replicas_agree_after_live_run():
    cl = converged_cluster(seed=3)
    cl.api_request(4, {"op": "kv_put", "key": "/app/4/x", "value": "v"})
    cl.run_ticks(10)
    prints = {n.store.fingerprint() for n in cl.nodes.values() if n.store}
    assert len(prints) == 1


def test_default_deny_exhaustive():
    """With ACLs on, an identity with no token can do nothing at all."""
    store = StateStore()
    store.apply({"kind": "acl_put", "token_id": "tok", "scopes": [node_scope(2)],
                 "lifetime": math.inf, "issued_at": 0})
    keys = ["/a", "/a/b", "/secrets/x", ""]
    names = ["web", "db"]
    for token in (None, "missing-token"):
        for verb, key in itertools.product((READ, WRITE), keys):
            assert not store.allows_kv(token, verb, key, now=5)
        for verb, name in itertools.product((READ, WRITE), names):
            assert not store.allows_service(token, verb, name, now=5)
        assert not store.allows_admin(token, now=5)
    # a node-scoped token binds consensus identity but grants no data access
    for verb, key in itertools.product((READ, WRITE), keys):
        assert not store.allows_kv("tok", verb, key, now=5)
    for verb, name in itertools.product((READ, WRITE), names):
        assert not store.allows_service("tok", verb, name, now=5)
    assert not store.allows_admin("tok", now=5)


def test_scope_coverage_rules():
    store = StateStore()
    store.apply({"kind": "acl_put", "token_id": "kv", "scopes": [kv_scope("/app/4/")],
                 "lifetime": math.inf, "issued_at": 0})
    store.apply({"kind": "acl_put", "token_id": "svc", "scopes": [service_scope("web")],
                 "lifetime": math.inf, "issued_at": 0})
    store.apply({"kind": "acl_put", "token_id": "mgmt", "scopes": [MANAGEMENT],
                 "lifetime": math.inf, "issued_at": 0})
    assert store.allows_kv("kv", WRITE, "/app/4/settings", now=0)
    assert not store.allows_kv("kv", READ, "/secrets/x", now=0)
    assert store.allows_service("svc", WRITE, "web", now=0)
    assert not store.allows_service("svc", WRITE, "db", now=0)
    for key in ("/app/4/settings", "/secrets/x"):
        assert store.allows_kv("mgmt", WRITE, key, now=0)
    assert store.allows_service("mgmt", WRITE, "db", now=0)
    assert store.allows_admin("mgmt", now=0)


def test_token_lifetime_expiry_without_renewal():
    store = StateStore()
    store.apply({"kind": "acl_put", "token_id": "short", "scopes": [MANAGEMENT],
                 "lifetime": 5, "issued_at": 10})
    assert store.allows_admin("short", now=14)
    assert not store.allows_admin("short", now=15)  # expired, nothing renews it
    tok = store.tokens["short"]
    assert (tok.issued_at, tok.lifetime) == (10, 5)


def test_infinite_lifetime_is_the_default():
    tok = AclToken("t", (MANAGEMENT,))
    assert tok.lifetime == math.inf
    assert tok.live(10**9)


def test_kv_roundtrip_empty_value_without_acls():
    cl = converged_cluster(seed=8)
    put = cl.api_request(4, {"op": "kv_put", "key": "/app/4/empty", "value": ""})
    cl.run_ticks(8)
    assert put.status == "committed"
    get = cl.api_request(4, {"op": "kv_get", "key": "/app/4/empty"})
    cl.run_ticks(4)
    assert get.status == "ok" and get.value == ""


def test_default_config_adversary_reads_secret():
    cl = converged_cluster(seed=10)
    cl.compromise(4)
    req = cl.api_request(4, {"op": "kv_get", "key": VICTIM_KV_KEY})
    cl.run_ticks(4)
    assert req.status == "ok" and req.value == "s3cr3t-db-pass"
    assert cl.monitors.manipulation


def test_acl_denies_tokenless_and_out_of_scope():
    cl = converged_cluster(security=COLUMNS["acls"], seed=12)
    cl.compromise(4)
    tok = cl.nodes[4].secrets.acl_token.token_id
    denied = cl.api_request(4, {"op": "kv_get", "key": VICTIM_KV_KEY}, token=tok)
    in_scope = cl.api_request(4, {"op": "kv_put", "key": "/app/4/v", "value": "1"},
                              token=tok)
    no_token = cl.api_request(4, {"op": "kv_get", "key": VICTIM_KV_KEY})
    cl.run_ticks(10)
    assert denied.status == "denied" and denied.reason == "acl"
    assert in_scope.status == "committed"
    assert no_token.status == "denied"
    assert not cl.monitors.manipulation  # own-scope writes are not manipulation


def test_tls_alone_leaves_kv_open_to_a_compromised_client():
    cl = converged_cluster(security=COLUMNS["tls"], seed=13)
    cl.compromise(4)
    req = cl.api_request(4, {"op": "kv_put", "key": VICTIM_KV_KEY,
                             "value": "tampered"})
    cl.run_ticks(8)
    assert req.status == "committed"
    assert cl.monitors.manipulation


def test_management_token_reads_any_key():
    cl = converged_cluster(security=COLUMNS["acls"], seed=14)
    mgmt = cl.nodes[1].secrets.acl_token.token_id
    req = cl.api_request(1, {"op": "kv_get", "key": VICTIM_KV_KEY}, token=mgmt)
    cl.run_ticks(4)
    assert req.status == "ok" and req.value == "s3cr3t-db-pass"


def test_service_registration_scopes():
    cl = converged_cluster(security=COLUMNS["acls"], seed=16)
    tok = cl.nodes[4].secrets.acl_token.token_id
    ok = cl.api_request(4, {"op": "service_register", "name": "web",
                            "endpoint": [4, 8081], "config": {}}, token=tok)
    bad = cl.api_request(4, {"op": "service_register", "name": "db",
                             "endpoint": [4, 4444], "config": {}}, token=tok)
    cl.run_ticks(10)
    assert ok.status == "committed"
    assert bad.status == "denied" and bad.reason == "acl"


def test_service_hijack_redirects_resolution_without_acls():
    cl = converged_cluster(seed=18)
    cl.compromise(4)
    hijack = cl.api_request(4, {"op": "service_register", "name": "db",
                                "endpoint": [4, 4444], "config": {}})
    cl.run_ticks(8)
    assert hijack.status == "committed"
    look = cl.api_request(3, {"op": "service_read", "name": "db"})
    cl.run_ticks(4)
    assert look.value["endpoint"] == [4, 4444]
    assert cl.monitors.manipulation


def test_acl_mint_requires_management():
    cl = converged_cluster(security=COLUMNS["acls"], seed=20)
    client_tok = cl.nodes[4].secrets.acl_token.token_id
    denied = cl.api_request(4, {"op": "acl_mint", "scopes": [MANAGEMENT]},
                            token=client_tok)
    granted = cl.api_request(1, {"op": "acl_mint", "scopes": [node_scope(50)],
                                 "token_id": "tok-extra"},
                             token=cl.nodes[1].secrets.acl_token.token_id)
    cl.run_ticks(10)
    assert denied.status == "denied"
    assert granted.status == "committed" and granted.token_id == "tok-extra"
    assert cl.nodes[1].store.tokens["tok-extra"].scopes == (node_scope(50),)


def test_acl_mint_denied_when_acls_off():
    cl = converged_cluster(seed=22)
    req = cl.api_request(1, {"op": "acl_mint", "scopes": [MANAGEMENT]})
    cl.run_ticks(4)
    assert req.status == "denied" and req.reason == "acls-off"
