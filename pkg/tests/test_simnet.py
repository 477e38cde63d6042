"""Transport-level behavior: unit latency, deterministic ordering, crash
drops, tap passivity, and envelope conservation."""

import pytest

from meshsim.cluster import Cluster
from meshsim.errors import ScenarioError
from meshsim.simnet import GOSSIP, RPC, Network

from conftest import benign_spec, converged_cluster


def make_net(ids=(1, 2, 3)):
    net = Network()
    for nid in ids:
        net.register_node(nid)
    return net


def test_unit_latency():
    net = make_net()
    for _ in range(5):
        net.step(lambda n: True)
    assert net.tick == 5
    env = net.send(1, 2, GOSSIP, {"kind": "heartbeat"})
    assert env.deliver_at == 6
    out = net.step(lambda n: True)
    assert [(d, e.payload["kind"]) for d, e in out] == [(2, "heartbeat")]


def test_self_loop_delivers_next_tick():
    net = make_net()
    net.send(1, 1, RPC, {"kind": "x"})
    out = net.step(lambda n: True)
    assert [(d, e.src) for d, e in out] == [(1, 1)]


def test_same_tick_delivery_sorted_by_src_dst_seq():
    net = make_net()
    net.send(2, 3, GOSSIP, {"kind": "b"})
    net.send(1, 3, GOSSIP, {"kind": "a"})
    net.send(1, 2, GOSSIP, {"kind": "c"})
    out = net.step(lambda n: True)
    assert [e.payload["kind"] for _, e in out] == ["c", "a", "b"]


def test_crashed_recipient_drops_silently():
    net = make_net()
    net.send(1, 2, GOSSIP, {"kind": "x"})
    net.send(1, 3, GOSSIP, {"kind": "y"})
    out = net.step(lambda n: n != 2)
    assert [d for d, _ in out] == [3]
    assert net.dropped_dead == 1


def test_send_unknown_node_is_scenario_error():
    net = make_net()
    with pytest.raises(ScenarioError):
        net.send(1, 99, GOSSIP, {"kind": "x"})


def test_read_unknown_tap_is_scenario_error():
    net = make_net()
    with pytest.raises(ScenarioError):
        net.read_tap(7)


def test_tap_records_without_altering_delivery():
    net = make_net()
    tap = net.attach_tap(2, 1)  # unordered pair
    net.send(1, 2, GOSSIP, {"kind": "heartbeat", "dc_label": "dc-x"})
    out = net.step(lambda n: True)
    assert len(out) == 1
    captured = net.read_tap(tap)
    assert len(captured) == 1
    assert captured[0]["payload"]["dc_label"] == "dc-x"


def test_tap_on_idle_link_is_empty():
    net = make_net()
    tap = net.attach_tap(1, 3)
    net.send(1, 2, GOSSIP, {"kind": "x"})
    net.step(lambda n: True)
    assert net.read_tap(tap) == []


def test_sealed_capture_is_opaque():
    net = make_net()
    tap = net.attach_tap(1, 2)
    net.send(1, 2, GOSSIP, {"kind": "heartbeat", "dc_label": "dc-x"},
             sealed=True, seal_key="k1")
    cap = net.read_tap(tap)[0]
    assert cap["sealed"] is True
    assert "payload" not in cap


def test_tap_transparency_full_scenario():
    """State trajectories must be identical with and without extra taps."""
    a = Cluster(benign_spec(seed=11, max_ticks=60))
    b = Cluster(benign_spec(seed=11, max_ticks=60))
    b.net.attach_tap(1, 4)
    b.net.attach_tap(2, 3)
    a.run_setup()
    b.run_setup()
    a.run_ticks(20)
    b.run_ticks(20)
    assert a.trace_log.lines() == b.trace_log.lines()
    assert a.state_fingerprint() == b.state_fingerprint()


def test_conservation_every_send_delivered_or_dropped():
    cl = converged_cluster(seed=13)
    cl.crash(4)
    cl.run_ticks(20)
    net = cl.net
    in_flight = sum(len(v) for v in net._pending.values())
    assert net.sent == net.delivered + net.dropped_dead + in_flight
    assert net.dropped_dead > 0  # traffic to the crashed client was dropped
