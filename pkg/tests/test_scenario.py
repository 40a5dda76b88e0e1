"""Scenario file parsing: happy paths, units, and line-accurate errors."""

import pytest

from repdp import PortClass, ScenarioError, parse_scenario

BASE = """format_version = 1
[scenario]
name = t
seed = 1
[topology]
switches = s1 s2
links = s1-s2
[host.h1]
attach = s1
port_class = external
[host.h2]
attach = s2
port_class = downlink
[application]
name = ddos
threshold = 10
epsilon_t = 14ms
[embedding]
replicas = 1
[flow.f]
src = h1
dst = h2
size = 1000
rate = 10
"""


def parse_text(tmp_path, text, name="case.scn"):
    p = tmp_path / name
    p.write_text(text)
    return parse_scenario(str(p))


def expect_error(tmp_path, text, needle, at_line=None):
    with pytest.raises(ScenarioError) as exc:
        parse_text(tmp_path, text)
    assert needle in str(exc.value), str(exc.value)
    if at_line is not None:
        assert exc.value.line == at_line, str(exc.value)
    return exc.value


def line_of(text, fragment):
    for i, line in enumerate(text.splitlines(), start=1):
        if fragment in line:
            return i
    raise AssertionError(f"{fragment!r} not in text")


# ---------------------------------------------------------------------------
# Shipped scenarios.


def test_parses_detection_scenario():
    cfg = parse_scenario("scenarios/fig7_ddos_c2.scn")
    assert cfg.name == "ddos_ring"
    assert cfg.seed == 7
    assert cfg.t_end_s == 60.0
    assert cfg.metrics_bin_s == 0.5
    assert cfg.replication is True
    assert cfg.topology.switches == ("sw1", "sw2", "sw3", "sw4")
    assert len(cfg.topology.hosts) == 7
    assert cfg.app_name == "ddos"
    assert cfg.app_params["threshold"] == 1000.0
    assert cfg.app_params["epsilon_t_s"] == pytest.approx(0.014)
    assert cfg.app_params["window"] == 8
    assert cfg.replicas == 2
    assert cfg.r_min == 100.0
    assert cfg.trigger_mode == "time"
    assert cfg.weights == {"as1": 3.0, "as2": 1.0, "as3": 3.0, "as4": 1.0}
    assert len(cfg.flows) == 12
    heavy = next(f for f in cfg.flows if f.name == "a1c1")
    assert heavy.size_bits == 1950
    assert heavy.syn is True
    assert heavy.stop_s == 60.0
    assert heavy.segments == [(0.0, 48.0), (20.0, 100.0), (20.5, 200.0), (21.0, 300.0)]
    # Port classes tag the switch side of the host link.
    ln = cfg.topology.adj["as1"]["sw1"]
    assert ln.port_class("sw1") is PortClass.EXTERNAL
    assert ln.delay_ns == 10_000
    collector = cfg.topology.adj["c1"]["sw4"]
    assert collector.port_class("sw4") is PortClass.DOWNLINK


def test_parses_limiter_scenario():
    cfg = parse_scenario("scenarios/fig8_ratelimit.scn")
    assert cfg.app_name == "ratelimit"
    assert cfg.app_params["rate_limit_bps"] == 8_000_000
    assert cfg.app_params["epsilon_r"] == 10
    assert cfg.app_params["max_write_rate"] == 625.0
    assert cfg.r_min == 250.0
    f2 = next(f for f in cfg.flows if f.name == "f2")
    assert f2.start_s == 20.0
    assert f2.segments == [(20.0, 500.0)]
    link = cfg.topology.adj["sw1"]["sw2"]
    assert link.delay_ns == 500_000
    assert link.capacity_bps == 10_000_000


# ---------------------------------------------------------------------------
# Units, defaults, overrides.


def test_defaults_fill_in(tmp_path):
    cfg = parse_text(tmp_path, BASE)
    assert cfg.t_end_s == 60.0
    assert cfg.metrics_bin_s == 0.5
    assert cfg.queue_limit == 100
    assert cfg.replication is True
    assert cfg.trigger_mode == "time"
    assert cfg.r_min == 100.0
    assert cfg.weights == {}
    f = cfg.flows[0]
    assert f.syn is False
    assert f.start_s == 0.0
    assert f.stop_s == 60.0
    assert f.segments == [(0.0, 10.0)]
    assert cfg.app_params["delta_s"] == pytest.approx(0.1)


def test_duration_and_capacity_units(tmp_path):
    text = BASE.replace("[topology]",
                        "[topology]\nlink_delay = 250us\nlink_capacity = 1Gbps\nhost_delay = 2ms")
    cfg = parse_text(tmp_path, text)
    ln = cfg.topology.adj["s1"]["s2"]
    assert ln.delay_ns == 250_000
    assert ln.capacity_bps == 1_000_000_000
    assert cfg.topology.adj["h1"]["s1"].delay_ns == 2_000_000


def test_per_link_and_per_host_overrides(tmp_path):
    text = BASE + "\n[link.s2.s1]\ndelay = 3ms\ncapacity = 1Mbps\n"
    text = text.replace("[host.h1]\nattach = s1",
                        "[host.h1]\nattach = s1\ndelay = 5ms\ncapacity = 2Mbps")
    cfg = parse_text(tmp_path, text)
    ln = cfg.topology.adj["s1"]["s2"]
    assert (ln.delay_ns, ln.capacity_bps) == (3_000_000, 1_000_000)
    hl = cfg.topology.adj["h1"]["s1"]
    assert (hl.delay_ns, hl.capacity_bps) == (5_000_000, 2_000_000)


def test_comments_and_blank_lines_ignored(tmp_path):
    text = BASE.replace("seed = 1", "seed = 1   # chosen fairly\n\n# a full-line comment")
    assert parse_text(tmp_path, text).seed == 1


def test_replication_can_be_disabled(tmp_path):
    cfg = parse_text(tmp_path, BASE.replace("seed = 1", "seed = 1\nreplication = off"))
    assert cfg.replication is False


def test_loads_sorted_by_time_then_state(tmp_path):
    text = (BASE.replace("name = ddos\nthreshold = 10\nepsilon_t = 14ms",
                         "name = resourcelb\nlb_switch = s1\nservers = h1")
            .replace("[flow.f]\nsrc = h1", "[flow.f]\nsrc = h2")
            .replace("dst = h2", "dst = h1")
            + "[loads]\nsrv_load_0 = 2:50 0:10 1:20\n")
    cfg = parse_text(tmp_path, text)
    assert cfg.loads == [(0.0, "srv_load_0", 10), (1.0, "srv_load_0", 20),
                         (2.0, "srv_load_0", 50)]


def test_rate_steps_use_absolute_times(tmp_path):
    text = BASE.replace("rate = 10", "start = 5\nstop = 30\nrate = 10 @12:75 @20:0")
    f = parse_text(tmp_path, text).flows[0]
    assert f.segments == [(5.0, 10.0), (12.0, 75.0), (20.0, 0.0)]


# ---------------------------------------------------------------------------
# Malformed inputs carry the offending line.


def test_missing_format_version(tmp_path):
    expect_error(tmp_path, BASE.replace("format_version = 1\n", ""),
                 "format_version", at_line=1)


def test_wrong_format_version(tmp_path):
    text = BASE.replace("format_version = 1", "format_version = 9")
    expect_error(tmp_path, text, "unsupported format_version",
                 at_line=line_of(text, "format_version"))


def test_missing_seed(tmp_path):
    expect_error(tmp_path, BASE.replace("seed = 1\n", ""), "seed")


def test_bad_duration(tmp_path):
    text = BASE.replace("epsilon_t = 14ms", "epsilon_t = 14parsecs")
    expect_error(tmp_path, text, "bad duration",
                 at_line=line_of(text, "14parsecs"))


def test_bad_capacity(tmp_path):
    text = BASE.replace("[topology]", "[topology]\nlink_capacity = fast")
    expect_error(tmp_path, text, "bad capacity", at_line=line_of(text, "fast"))


def test_link_references_unknown_switch(tmp_path):
    text = BASE.replace("links = s1-s2", "links = s1-s9")
    expect_error(tmp_path, text, "unknown switch", at_line=line_of(text, "s1-s9"))


def test_bad_link_token(tmp_path):
    text = BASE.replace("links = s1-s2", "links = s1_s2")
    expect_error(tmp_path, text, "expected u-v", at_line=line_of(text, "s1_s2"))


def test_host_attaches_to_unknown_switch(tmp_path):
    text = BASE.replace("attach = s1", "attach = s9")
    expect_error(tmp_path, text, "unknown switch")


def test_bad_port_class(tmp_path):
    text = BASE.replace("port_class = external", "port_class = sideways")
    expect_error(tmp_path, text, "port_class")


def test_flow_unknown_src(tmp_path):
    text = BASE.replace("src = h1", "src = h9")
    expect_error(tmp_path, text, "unknown src")


def test_flow_size_too_small(tmp_path):
    text = BASE.replace("size = 1000", "size = 400")
    expect_error(tmp_path, text, "512")


def test_rate_steps_must_increase(tmp_path):
    text = BASE.replace("rate = 10", "rate = 10 @5:20 @5:30")
    expect_error(tmp_path, text, "must increase", at_line=line_of(text, "@5:20"))


def test_rate_step_beyond_stop(tmp_path):
    text = BASE.replace("rate = 10", "stop = 4\nrate = 10 @5:20")
    expect_error(tmp_path, text, "beyond stop", at_line=line_of(text, "@5:20"))


def test_negative_rate(tmp_path):
    expect_error(tmp_path, BASE.replace("rate = 10", "rate = -3"), "negative rate")


def test_duplicate_key(tmp_path):
    text = BASE.replace("seed = 1", "seed = 1\nseed = 2")
    expect_error(tmp_path, text, "duplicate key", at_line=line_of(text, "seed = 2"))


def test_duplicate_section(tmp_path):
    text = BASE + "[scenario]\nname = again\n"
    expect_error(tmp_path, text, "duplicate section")


def test_missing_equals(tmp_path):
    text = BASE.replace("seed = 1", "seed 1")
    expect_error(tmp_path, text, "key = value", at_line=line_of(text, "seed 1"))


def test_unterminated_section(tmp_path):
    text = BASE.replace("[scenario]", "[scenario")
    expect_error(tmp_path, text, "unterminated", at_line=line_of(text, "[scenario"))


def test_unknown_application(tmp_path):
    text = BASE.replace("name = ddos", "name = teleport")
    expect_error(tmp_path, text, "unknown application")


def test_replicas_out_of_range(tmp_path):
    text = BASE.replace("replicas = 1", "replicas = 7")
    expect_error(tmp_path, text, "replicas")


def test_weight_unknown_node(tmp_path):
    text = BASE.replace("replicas = 1", "replicas = 1\nweights = ghost:2")
    expect_error(tmp_path, text, "unknown node", at_line=line_of(text, "ghost:2"))


def test_bad_load_point(tmp_path):
    text = (BASE.replace("name = ddos\nthreshold = 10\nepsilon_t = 14ms",
                         "name = resourcelb\nlb_switch = s1\nservers = h1")
            .replace("[flow.f]\nsrc = h1", "[flow.f]\nsrc = h2")
            .replace("dst = h2", "dst = h1")
            + "[loads]\nsrv_load_0 = nonsense\n")
    expect_error(tmp_path, text, "t:value", at_line=line_of(text, "nonsense"))


def test_missing_file_reports_path(tmp_path):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(str(tmp_path / "absent.scn"))
    assert "absent.scn" in str(exc.value)


def test_linklb_via_must_be_adjacent(tmp_path):
    # Build-time binding check: the candidate path's first hop has to be
    # a neighbor of the balancing switch.
    from repdp import build_simulation

    text = """format_version = 1
[scenario]
name = t
seed = 1
[topology]
switches = s1 s2 s3
links = s1-s2 s2-s3
[host.h1]
attach = s1
port_class = external
[host.h2]
attach = s3
port_class = downlink
[application]
name = linklb
lb_switch = s3
path_via = s1
dst_switch = s2
[embedding]
replicas = 3
r_min = 200
[flow.f]
src = h1
dst = h2
size = 1000
rate = 10
"""
    cfg = parse_text(tmp_path, text)
    with pytest.raises(ScenarioError, match="not adjacent"):
        build_simulation(cfg)
