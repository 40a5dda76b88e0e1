"""Event engine behaviour: links, queues, flows, pipelines, applications."""

import re

import pytest

from repdp import (
    Link,
    SimulationError,
    Simulator,
    Topology,
    build_simulation,
    parse_scenario,
)

MS = 1_000_000


def line_topo(capacity_bps=1_000_000, delay_ns=MS):
    links = [
        Link("hA", "sw", delay_ns, capacity_bps),
        Link("sw", "hB", delay_ns, capacity_bps),
    ]
    return Topology(("sw",), ("hA", "hB"), links)


def fwd_events(sim):
    out = []
    for line in sim.trace:
        m = re.match(r"(\d+) fwd (\S+) uid=(-?\d+) out=(\S+)", line)
        if m:
            out.append((int(m.group(1)), m.group(2), int(m.group(3)), m.group(4)))
    return out


def write_scenario(tmp_path, text, name="mini.scn"):
    p = tmp_path / name
    p.write_text(text)
    return parse_scenario(str(p))


# ---------------------------------------------------------------------------
# Link timing and queueing.


def test_store_and_forward_timing():
    # 1000 bits at 1 Mb/s is 1 ms serialization; plus 1 ms propagation
    # the packet reaches the switch at exactly 2 ms.
    sim = Simulator(line_topo(), t_end_s=1.0, collect_trace=True)
    sim.add_flow("f", "hA", "hB", 1000, False, [(0.0, 1.0)], stop_s=0.5)
    log = sim.run_until()
    assert fwd_events(sim) == [(2 * MS, "sw", 0, "hB")]
    assert log.flow_sent[0] == 1
    assert log.flow_delivered[0] == 1


def test_serialization_queues_back_to_back_packets():
    sim = Simulator(line_topo(), t_end_s=1.0, collect_trace=True)
    # Two packets 1 us apart share a 1 ms serialization pipe.
    sim.add_flow("f", "hA", "hB", 1000, False, [(0.0, 1_000_000.0)], stop_s=1.5e-6)
    sim.run_until()
    times = [t for t, _, _, _ in fwd_events(sim)]
    # The second packet waits out the first's serialization: it departs
    # at 2 ms, not 1 us after its own enqueue.
    assert times == [2 * MS, 3 * MS]


def test_queue_overflow_drops_excess():
    sim = Simulator(line_topo(), t_end_s=1.0, queue_limit=5)
    # Twelve packets 1 us apart; five fit the egress queue while the
    # first still serializes, the rest are dropped at the host uplink.
    sim.add_flow("f", "hA", "hB", 1000, False, [(0.0, 1_000_000.0)], stop_s=11.5e-6)
    log = sim.run_until()
    assert log.flow_sent[0] == 12
    assert log.flow_queue_drops[0] == 7
    assert log.flow_delivered[0] == 5
    assert log.queue_drops.sum() == 7


def test_sent_equals_delivered_plus_drops():
    sim = Simulator(line_topo(), t_end_s=2.0, queue_limit=5)
    sim.add_flow("f", "hA", "hB", 1000, False, [(0.0, 1_000_000.0)], stop_s=11.5e-6)
    sim.add_flow("g", "hB", "hA", 600, False, [(0.1, 40.0)], stop_s=1.0)
    log = sim.run_until()
    for row in range(2):
        assert log.flow_sent[row] == (
            log.flow_delivered[row]
            + log.flow_queue_drops[row]
            + log.flow_app_drops[row]
        )


def test_emission_count_is_exact():
    sim = Simulator(line_topo(capacity_bps=1_000_000_000), t_end_s=12.0)
    sim.add_flow("steady", "hA", "hB", 1000, False, [(0.0, 100.0)], stop_s=10.0)
    sim.add_flow("stepped", "hB", "hA", 1000, False, [(0.0, 100.0), (5.0, 200.0)], stop_s=10.0)
    log = sim.run_until()
    assert log.flow_sent[0] == 1000
    assert log.flow_sent[1] == 500 + 1000
    assert log.flow_delivered[0] == 1000
    assert log.flow_delivered[1] == 1500


def test_flow_validation_errors():
    sim = Simulator(line_topo(), t_end_s=1.0)
    with pytest.raises(SimulationError):
        sim.add_flow("f", "hA", "hB", 256, False, [(0.0, 1.0)], stop_s=0.5)
    with pytest.raises(SimulationError):
        sim.add_flow("f", "ghost", "hB", 1000, False, [(0.0, 1.0)], stop_s=0.5)
    with pytest.raises(SimulationError):
        sim.add_flow("f", "hA", "ghost", 1000, False, [(0.0, 1.0)], stop_s=0.5)
    with pytest.raises(SimulationError):
        sim.add_flow("f", "hA", "hB", 1000, False, [(0.5, 1.0), (0.5, 2.0)], stop_s=1.0)
    with pytest.raises(SimulationError):
        sim.add_flow("f", "hA", "hB", 1000, False, [(0.5, 1.0)], stop_s=0.5)
    sim.run_until()
    with pytest.raises(SimulationError):
        sim.add_flow("late", "hA", "hB", 1000, False, [(0.0, 1.0)], stop_s=0.5)


def test_run_until_stays_inside_horizon():
    sim = Simulator(line_topo(), t_end_s=1.0)
    with pytest.raises(SimulationError):
        sim.run_until(2.0)


# ---------------------------------------------------------------------------
# Scenario-driven runs (full pipeline).

MINI_DDOS = """
format_version = 1

[scenario]
name = mini_ddos
seed = 3
t_end = 4
metrics_bin = 0.5
queue_limit = 100

[topology]
switches = sw1 sw2 sw3 sw4
links = sw1-sw2 sw2-sw3 sw3-sw4 sw1-sw4
link_delay = 0.5ms
link_capacity = 10Mbps
host_delay = 0.01ms

[host.a1]
attach = sw1
port_class = external

[host.a3]
attach = sw3
port_class = external

[host.a4]
attach = sw4
port_class = external

[host.c1]
attach = sw2
port_class = downlink

[application]
name = ddos
threshold = 50
epsilon_t = 14ms
delta = 100ms
window = 8
states = auto

[embedding]
replicas = 2
r_min = 100
trigger_mode = time
weights = a1:3 a3:3 a4:1

[flow.f1]
src = a1
dst = c1
size = 1950
syn = yes
start = 0
rate = 100

[flow.f3]
src = a3
dst = c1
size = 1950
syn = yes
start = 0
rate = 100

[flow.f4]
src = a4
dst = c1
size = 1950
syn = yes
start = 0
rate = 100
"""


@pytest.fixture(scope="module")
def ddos_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("scn") / "mini_ddos.scn"
    p.write_text(MINI_DDOS)
    return parse_scenario(str(p))


def test_same_seed_same_trace(ddos_cfg):
    a = build_simulation(ddos_cfg, collect_trace=True)
    b = build_simulation(ddos_cfg, collect_trace=True)
    a.sim.run_until()
    b.sim.run_until()
    assert a.sim.trace == b.sim.trace
    assert len(a.sim.trace) > 1000


def test_monitor_detour_goes_through_measurement_switch(ddos_cfg):
    built = build_simulation(ddos_cfg, collect_trace=True)
    built.sim.run_until(0.2)
    # f4 enters at sw4; its measurement switch is sw1 (lowest-name tie
    # among the replicas), so its packets detour sw4 -> sw1 -> sw2.
    hops = {}
    for t, sw, uid, out in fwd_events(built.sim):
        hops.setdefault(uid, []).append(sw)
    via_sw4 = [h for h in hops.values() if h[0] == "sw4"]
    assert via_sw4, "expected packets entering at sw4"
    assert all(h == ["sw4", "sw1", "sw2"] for h in via_sw4)


def test_detection_fires_on_every_replica(ddos_cfg):
    log = build_simulation(ddos_cfg).sim.run_until()
    fired = {sw for _, sw, _, _ in log.detections}
    assert fired == {"sw1", "sw3"}
    # Aggregate 300 pkt/s sits far above a threshold of 50: detection
    # lands while the first estimator window is still filling.
    first = min(t for t, _, _, _ in log.detections)
    assert first < 1_000_000_000


def test_controller_notifications_arrive_after_fixed_delay(ddos_cfg):
    log = build_simulation(ddos_cfg).sim.run_until()
    assert len(log.notifications) == len(log.detections)
    for (td, sw, _, _), (tn, nsw, _) in zip(log.detections, log.notifications):
        assert nsw == sw
        assert tn - td == 10 * MS


def test_replication_off_keeps_data_path(ddos_cfg):
    on = build_simulation(ddos_cfg, collect_trace=True)
    off = build_simulation(ddos_cfg, collect_trace=True, replication=False)
    log_on = on.sim.run_until()
    log_off = off.sim.run_until()

    def data_decisions(sim):
        seq = {}
        for _, sw, uid, out in fwd_events(sim):
            if uid >= 0:
                seq.setdefault(uid, []).append((sw, out))
        return seq

    # Update frames share links with data, so exact timings may shift,
    # but every data packet must take the identical hop sequence.
    assert data_decisions(on.sim) == data_decisions(off.sim)
    assert list(log_on.flow_sent) == list(log_off.flow_sent)
    assert list(log_on.flow_delivered) == list(log_off.flow_delivered)
    assert log_on.queue_drops.sum() == log_off.queue_drops.sum() == 0
    assert log_off.updates_emitted == 0
    assert log_on.updates_emitted > 0


def test_updates_flood_without_echo(ddos_cfg):
    built = build_simulation(ddos_cfg)
    log = built.sim.run_until()
    # On the two-replica plan the tree is a path; an echoing flood would
    # loop forever (the run would never drain) and re-deliveries would
    # pile up as stale drops.
    assert log.stale_update_drops == 0
    assert log.unknown_state_drops == 0
    # Both replicas see each other's state: staleness samples exist for
    # both origins.
    origins = {origin for _, _, origin, _, _, _ in log.staleness}
    assert origins == {"sw1", "sw3"}


def test_staged_run_matches_single_run(ddos_cfg):
    whole = build_simulation(ddos_cfg)
    staged = build_simulation(ddos_cfg)
    log_a = whole.sim.run_until()
    staged.sim.run_until(0.7)
    staged.sim.run_until(2.3)
    log_b = staged.sim.run_until()
    assert (log_a.data_bits == log_b.data_bits).all()
    assert (log_a.repl_bits == log_b.repl_bits).all()
    assert log_a.detections == log_b.detections
    assert log_a.events_processed == log_b.events_processed


def test_different_seed_changes_policing(tmp_path):
    # Probabilistic policing consults the per-switch generator, so the
    # seed must steer which packets die once the limit engages.
    cfg = write_scenario(tmp_path, RATELIMIT_TINY)
    drops = []
    for seed in (1, 2):
        log = build_simulation(cfg, seed=seed).sim.run_until()
        drops.append(int(log.flow_app_drops.sum()))
        assert log.flow_app_drops.sum() > 0
    a = build_simulation(cfg, seed=1).sim.run_until()
    assert int(a.flow_app_drops.sum()) == drops[0]


RATELIMIT_TINY = """
format_version = 1

[scenario]
name = tiny_rl
seed = 11
t_end = 6
metrics_bin = 0.5
queue_limit = 100

[topology]
switches = sw1 sw2
links = sw1-sw2
link_delay = 0.5ms
link_capacity = 10Mbps
host_delay = 0.01ms

[host.src]
attach = sw1
port_class = external

[host.dst]
attach = sw2
port_class = downlink

[application]
name = ratelimit
limit = 2Mbps
epsilon_r = 10
max_write_rate = 625
delta = 100ms
window = 8
states = auto

[embedding]
replicas = 1
r_min = 250

[flow.f]
src = src
dst = dst
size = 10000
syn = no
start = 0
rate = 400
"""


def test_rate_limiter_converges_to_limit(tmp_path):
    cfg = write_scenario(tmp_path, RATELIMIT_TINY)
    log = build_simulation(cfg).sim.run_until()
    # Offered 4 Mb/s against a 2 Mb/s cap: accepted throughput over the
    # settled half of the run must sit near the cap.
    sl = log.window_slice()
    delivered_bits = log.flow_bits[0, sl].sum()
    seconds = (sl.stop - sl.start) * log.bin_ns / 1e9
    rate = delivered_bits / seconds
    assert rate == pytest.approx(2_000_000, rel=0.15)
    assert log.flow_app_drops[0] > 0


RESOURCE_LB = """
format_version = 1

[scenario]
name = mini_rlb
seed = 5
t_end = 3
metrics_bin = 0.5
queue_limit = 100

[topology]
switches = sw1 sw2
links = sw1-sw2
link_delay = 0.5ms
link_capacity = 10Mbps
host_delay = 0.01ms

[host.src1]
attach = sw2
port_class = external

[host.srv0]
attach = sw1
port_class = downlink

[host.srv1]
attach = sw1
port_class = downlink

[application]
name = resourcelb
lb_switch = sw1
servers = srv0 srv1
threshold = 0.8
load_scale = 100

[embedding]
replicas = 1
r_min = 50

[flow.g]
src = src1
dst = srv0
size = 1000
syn = yes
start = 0
rate = 50

[loads]
srv_load_0 = 0:10 1.0:90
srv_load_1 = 0:30 2.0:95
"""


def test_resource_dispatch_follows_injected_loads(tmp_path):
    cfg = write_scenario(tmp_path, RESOURCE_LB)
    built = build_simulation(cfg, collect_trace=True)
    log = built.sim.run_until()
    by_phase = {0: set(), 1: set(), 2: set()}
    for t, sw, uid, out in fwd_events(built.sim):
        if sw == "sw1":
            by_phase[min(t // 1_000_000_000, 2)].add(out)
    # Phase 0: srv0 is lighter (10 vs 30). Phase 1: srv0 jumps to 90,
    # srv1 wins. Phase 2: mean load 92.5 exceeds the 80-point bar, every
    # new arrival is escalated instead of served.
    assert by_phase[0] == {"srv0"}
    assert by_phase[1] == {"srv1"}
    assert by_phase[2] == set()
    assert log.controller_redirects
    assert all(sw == "sw1" for _, sw, _ in log.controller_redirects)
    assert log.flow_app_drops[0] == len(log.controller_redirects)


LINK_LB = """
format_version = 1

[scenario]
name = mini_llb
seed = 9
t_end = 6
metrics_bin = 0.5
queue_limit = 100

[topology]
switches = sw1 sw2 sw3 sw4
links = sw1-sw2 sw2-sw3 sw3-sw4 sw1-sw4
link_delay = 0.5ms
link_capacity = 10Mbps
host_delay = 0.01ms

[host.h1]
attach = sw1
port_class = external

[host.d1]
attach = sw3
port_class = downlink

[host.d2]
attach = sw3
port_class = downlink

[application]
name = linklb
lb_switch = sw1
path_via = sw2 sw4
dst_switch = sw3

[embedding]
replicas = 3
r_min = 200
weights = h1:5

[flow.k1]
src = h1
dst = d1
size = 10000
syn = no
start = 0
rate = 100

[flow.k2]
src = h1
dst = d2
size = 10000
syn = yes
start = 3
rate = 100
"""


def test_new_flows_pin_to_least_congested_path(tmp_path):
    cfg = write_scenario(tmp_path, LINK_LB)
    built = build_simulation(cfg, collect_trace=True)
    built.sim.run_until()
    before, after = set(), set()
    for t, sw, uid, out in fwd_events(built.sim):
        if sw == "sw1" and uid >= 0:
            (before if t < 3_000_000_000 else after).add(out)
    # k1 (no SYN flag) never matches the pinning rule and follows the
    # name-tie shortest path via sw2, loading that leg to ~1 Mb/s.
    assert before == {"sw2"}
    # k2's first SYN then finds leg 1 idle and is pinned via sw4.
    assert "sw4" in after
    # Egress measurement fed the leg estimates at their origin switches.
    t_end = built.sim.t_now
    store1 = built.sim.switch_rt["sw1"].store
    assert store1.local_value("leg_load_0", t_end) > 500_000
    store2 = built.sim.switch_rt["sw2"].store
    assert store2.local_value("leg_load_2", t_end) > 500_000
