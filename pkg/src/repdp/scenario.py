"""Scenario file reader.

Scenarios are line-oriented text: `key = value` pairs grouped under
`[section]` headers, `#` comments, blank lines ignored. Every error is
reported with the file path and line number. The reader produces a
fully validated ScenarioConfig with units normalized (durations to
seconds, capacities to bits/s, sizes to bits).

Sections:
  top level    format_version (must be 1)
  [scenario]   name, seed (mandatory), t_end, metrics_bin, queue_limit,
               replication (on/off)
  [topology]   switches, links (u-v pairs), link_delay, link_capacity,
               host_delay
  [link.U.V]   per-link delay/capacity overrides
  [host.H]     attach, port_class, optional delay/capacity
  [application] name (ddos/ratelimit/linklb/resourcelb) + app keys
  [embedding]  replicas, r_min, trigger_mode, weights (node:w list)
  [flow.NAME]  src, dst, size, syn, start, stop, rate (base + @t:rate steps)
  [loads]      state = t:value pairs (scalar writes over time)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .apps import APP_FACTORIES
from .embedding import Link, Topology
from .errors import ScenarioError
from .model import PortClass

FORMAT_VERSION = 1

_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

_DUR = {"ns": 1e-9, "us": 1e-6, "ms": 1e-3, "s": 1.0}
_BPS = {"bps": 1, "kbps": 1_000, "Mbps": 1_000_000, "Gbps": 1_000_000_000}
_CLASSES = {
    "external": PortClass.EXTERNAL,
    "uplink": PortClass.UPLINK,
    "downlink": PortClass.DOWNLINK,
    "any": PortClass.ANY,
}


@dataclass
class FlowDef:
    name: str
    src: str
    dst: str
    size_bits: int
    syn: bool
    start_s: float
    stop_s: float
    segments: list[tuple[float, float]]


@dataclass
class ScenarioConfig:
    path: str
    name: str
    seed: int
    t_end_s: float
    metrics_bin_s: float
    queue_limit: int
    replication: bool
    topology: Topology
    app_name: str
    app_params: dict
    replicas: int
    r_min: float
    trigger_mode: str
    weights: dict[str, float]
    flows: list[FlowDef]
    loads: list[tuple[float, str, int]] = field(default_factory=list)


class _Section:
    def __init__(self, name: str, line: int):
        self.name = name
        self.line = line
        self.items: dict[str, tuple[str, int]] = {}


def _split_lines(path: str, text: str):
    """Yield (line_no, content) with comments and blanks removed."""
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw
        # '#' opens a comment at line start or after whitespace.
        for m in re.finditer(r"#", line):
            if m.start() == 0 or line[m.start() - 1] in " \t":
                line = line[: m.start()]
                break
        line = line.strip()
        if line:
            yield i, line


def _parse_sections(path: str, text: str):
    top = _Section("", 0)
    sections: list[_Section] = []
    cur = top
    for ln, line in _split_lines(path, text):
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError("unterminated section header", path, ln)
            name = line[1:-1].strip()
            if not name:
                raise ScenarioError("empty section name", path, ln)
            cur = _Section(name, ln)
            sections.append(cur)
            continue
        if "=" not in line:
            raise ScenarioError(f"expected key = value, got {line!r}", path, ln)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ScenarioError("missing key before '='", path, ln)
        if key in cur.items:
            raise ScenarioError(f"duplicate key {key!r} in section [{cur.name}]", path, ln)
        cur.items[key] = (value, ln)
    return top, sections


def _dur_s(path, raw: str, ln: int) -> float:
    m = re.fullmatch(r"([0-9.eE+-]+)\s*(ns|us|ms|s)?", raw)
    if not m:
        raise ScenarioError(f"bad duration {raw!r}", path, ln)
    try:
        val = float(m.group(1))
    except ValueError:
        raise ScenarioError(f"bad duration {raw!r}", path, ln) from None
    return val * _DUR[m.group(2) or "s"]


def _bps(path, raw: str, ln: int) -> int:
    m = re.fullmatch(r"([0-9.eE+-]+)\s*(bps|kbps|Mbps|Gbps)?", raw)
    if not m:
        raise ScenarioError(f"bad capacity {raw!r}", path, ln)
    try:
        val = float(m.group(1))
    except ValueError:
        raise ScenarioError(f"bad capacity {raw!r}", path, ln) from None
    return round(val * _BPS[m.group(2) or "bps"])


def _num(path, raw: str, ln: int) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ScenarioError(f"expected a number, got {raw!r}", path, ln) from None


def _int(path, raw: str, ln: int) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ScenarioError(f"expected an integer, got {raw!r}", path, ln) from None


def _bool(path, raw: str, ln: int) -> bool:
    low = raw.lower()
    if low in ("yes", "true", "on", "1"):
        return True
    if low in ("no", "false", "off", "0"):
        return False
    raise ScenarioError(f"expected yes/no, got {raw!r}", path, ln)


class _View:
    """Typed access to one section's items with line-aware errors."""

    def __init__(self, path: str, sec: _Section):
        self.path = path
        self.sec = sec

    def has(self, key) -> bool:
        return key in self.sec.items

    def raw(self, key, default=None):
        if key in self.sec.items:
            return self.sec.items[key]
        if default is not None:
            return default, self.sec.line
        raise ScenarioError(f"[{self.sec.name}] is missing key {key!r}", self.path, self.sec.line)

    def text(self, key, default=None) -> str:
        return self.raw(key, default)[0]

    def num(self, key, default=None) -> float:
        return _num(self.path, *self.raw(key, default))

    def integer(self, key, default=None) -> int:
        return _int(self.path, *self.raw(key, default))

    def dur(self, key, default=None) -> float:
        return _dur_s(self.path, *self.raw(key, default))

    def bps(self, key, default=None) -> int:
        return _bps(self.path, *self.raw(key, default))

    def flag(self, key, default=None) -> bool:
        return _bool(self.path, *self.raw(key, default))

    def names(self, key, default=None) -> list[str]:
        raw, ln = self.raw(key, default)
        out = raw.split()
        for n in out:
            if not _NAME.match(n):
                raise ScenarioError(f"bad name {n!r} in {key}", self.path, ln)
        return out


def _parse_rate_steps(path, raw: str, ln: int, start_s: float):
    """`rate = BASE [@t:rate ...]` into absolute (time_s, pps) segments."""
    toks = raw.split()
    if not toks:
        raise ScenarioError("empty rate", path, ln)
    base = _num(path, toks[0], ln)
    if base < 0:
        raise ScenarioError("negative rate", path, ln)
    segs = [(start_s, base)]
    for tok in toks[1:]:
        m = re.fullmatch(r"@([0-9.eE+-]+):([0-9.eE+-]+)", tok)
        if not m:
            raise ScenarioError(f"bad rate step {tok!r} (expected @time:rate)", path, ln)
        t = float(m.group(1))
        r = float(m.group(2))
        if r < 0:
            raise ScenarioError("negative rate", path, ln)
        if t <= segs[-1][0]:
            raise ScenarioError("rate step times must increase", path, ln)
        segs.append((t, r))
    return segs


def parse_scenario(path: str) -> ScenarioConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", path, 0) from None
    top, sections = _parse_sections(path, text)

    topv = _View(path, top)
    if not topv.has("format_version"):
        raise ScenarioError("missing top-level format_version", path, 1)
    ver = topv.integer("format_version")
    if ver != FORMAT_VERSION:
        raise ScenarioError(f"unsupported format_version {ver}", path,
                            top.items["format_version"][1])

    by_name: dict[str, _Section] = {}
    flows_secs, links_secs, hosts_secs = [], [], []
    loads_sec = None
    for sec in sections:
        if sec.name.startswith("flow."):
            flows_secs.append(sec)
        elif sec.name.startswith("link."):
            links_secs.append(sec)
        elif sec.name.startswith("host."):
            hosts_secs.append(sec)
        elif sec.name == "loads":
            loads_sec = sec
        elif sec.name in by_name:
            raise ScenarioError(f"duplicate section [{sec.name}]", path, sec.line)
        else:
            by_name[sec.name] = sec

    def require(name) -> _View:
        if name not in by_name:
            raise ScenarioError(f"missing section [{name}]", path, 1)
        return _View(path, by_name[name])

    scen = require("scenario")
    name = scen.text("name", "run")
    if not scen.has("seed"):
        raise ScenarioError("[scenario] must declare a seed", path, by_name["scenario"].line)
    seed = scen.integer("seed")
    t_end = scen.dur("t_end", "60")
    if t_end <= 0:
        raise ScenarioError("t_end must be positive", path, by_name["scenario"].line)
    bin_s = scen.dur("metrics_bin", "0.5")
    queue_limit = scen.integer("queue_limit", "100")
    replication = scen.flag("replication", "on")

    # ---- topology -----------------------------------------------------
    topo_v = require("topology")
    switches = topo_v.names("switches")
    link_delay = topo_v.dur("link_delay", "0.5ms")
    link_cap = topo_v.bps("link_capacity", "10Mbps")
    host_delay = topo_v.dur("host_delay", "0.01ms")

    overrides = {}
    for sec in links_secs:
        parts = sec.name.split(".")
        if len(parts) != 3:
            raise ScenarioError(f"bad link section [{sec.name}]", path, sec.line)
        v = _View(path, sec)
        key = tuple(sorted(parts[1:]))
        overrides[key] = (
            v.dur("delay", None) if v.has("delay") else None,
            v.bps("capacity", None) if v.has("capacity") else None,
        )

    links = []
    raw_links, ll = topo_v.raw("links")
    for tok in raw_links.split():
        if "-" not in tok:
            raise ScenarioError(f"bad link {tok!r} (expected u-v)", path, ll)
        u, _, v = tok.partition("-")
        if u not in switches or v not in switches:
            raise ScenarioError(f"link {tok!r} references unknown switch", path, ll)
        d, c = overrides.get(tuple(sorted((u, v))), (None, None))
        links.append(Link(u, v,
                          round((d if d is not None else link_delay) * 1e9),
                          c if c is not None else link_cap))

    hosts = []
    for sec in hosts_secs:
        hname = sec.name.split(".", 1)[1]
        if not _NAME.match(hname):
            raise ScenarioError(f"bad host name {hname!r}", path, sec.line)
        v = _View(path, sec)
        attach = v.text("attach")
        if attach not in switches:
            raise ScenarioError(f"host {hname} attaches to unknown switch {attach!r}",
                                path, sec.line)
        cls_raw, cls_ln = v.raw("port_class", "any")
        if cls_raw not in _CLASSES:
            raise ScenarioError(f"bad port_class {cls_raw!r}", path, cls_ln)
        d = v.dur("delay", None) if v.has("delay") else host_delay
        c = v.bps("capacity", None) if v.has("capacity") else link_cap
        hosts.append(hname)
        # The class tags the switch-side port facing this host.
        links.append(Link(hname, attach, round(d * 1e9), c,
                          u_class=PortClass.ANY, v_class=_CLASSES[cls_raw]))
    if not hosts:
        raise ScenarioError("scenario defines no hosts", path, 1)

    try:
        topology = Topology(switches, hosts, links)
    except Exception as exc:
        raise ScenarioError(str(exc), path, by_name["topology"].line) from None

    # ---- application ---------------------------------------------------
    app_v = require("application")
    app_name = app_v.text("name")
    if app_name not in APP_FACTORIES:
        known = ", ".join(sorted(APP_FACTORIES))
        raise ScenarioError(f"unknown application {app_name!r} (known: {known})",
                            path, by_name["application"].line)
    app_params: dict = {}
    if app_name == "ddos":
        app_params["threshold"] = app_v.num("threshold")
        app_params["epsilon_t_s"] = app_v.dur("epsilon_t")
        app_params["delta_s"] = app_v.dur("delta", "0.1")
        app_params["window"] = app_v.integer("window", "8")
        app_params["states"] = app_v.text("states", "auto")
    elif app_name == "ratelimit":
        app_params["rate_limit_bps"] = app_v.bps("limit")
        app_params["epsilon_r"] = app_v.integer("epsilon_r")
        app_params["max_write_rate"] = app_v.num("max_write_rate")
        app_params["delta_s"] = app_v.dur("delta", "0.1")
        app_params["window"] = app_v.integer("window", "8")
        app_params["states"] = app_v.text("states", "auto")
    elif app_name == "linklb":
        app_params["lb_switch"] = app_v.text("lb_switch")
        app_params["path_via"] = app_v.names("path_via")
        app_params["dst_switch"] = app_v.text("dst_switch")
        app_params["epsilon_r"] = app_v.integer("epsilon_r", "10")
        app_params["max_write_rate"] = app_v.num("max_write_rate", "1000")
        app_params["delta_s"] = app_v.dur("delta", "0.1")
        app_params["window"] = app_v.integer("window", "8")
        for sw in [app_params["lb_switch"], app_params["dst_switch"]] + app_params["path_via"]:
            if sw not in switches:
                raise ScenarioError(f"linklb references unknown switch {sw!r}",
                                    path, by_name["application"].line)
    elif app_name == "resourcelb":
        app_params["lb_switch"] = app_v.text("lb_switch")
        app_params["servers"] = app_v.names("servers")
        app_params["threshold"] = app_v.num("threshold", "0.8")
        app_params["load_scale"] = app_v.integer("load_scale", "100")
        app_params["epsilon_r"] = app_v.integer("epsilon_r", "15")
        app_params["max_write_rate"] = app_v.num("max_write_rate", "1000")
        if app_params["lb_switch"] not in switches:
            raise ScenarioError("resourcelb lb_switch is not a switch", path,
                                by_name["application"].line)
        for h in app_params["servers"]:
            if h not in hosts:
                raise ScenarioError(f"resourcelb server {h!r} is not a host", path,
                                    by_name["application"].line)

    # ---- embedding -----------------------------------------------------
    emb = require("embedding")
    replicas = emb.integer("replicas", "1")
    if not 1 <= replicas <= len(switches):
        raise ScenarioError(f"replicas must be in 1..{len(switches)}", path,
                            by_name["embedding"].line)
    r_min = emb.num("r_min", "100")
    if r_min <= 0:
        raise ScenarioError("r_min must be positive", path, by_name["embedding"].line)
    mode = emb.text("trigger_mode", "time")
    if mode not in ("time", "packet"):
        raise ScenarioError(f"trigger_mode must be time or packet, got {mode!r}",
                            path, by_name["embedding"].line)
    weights: dict[str, float] = {}
    if emb.has("weights"):
        raw_w, wl = emb.raw("weights")
        for tok in raw_w.split():
            if ":" not in tok:
                raise ScenarioError(f"bad weight {tok!r} (expected node:w)", path, wl)
            node, _, w = tok.partition(":")
            if node not in set(switches) | set(hosts):
                raise ScenarioError(f"weight references unknown node {node!r}", path, wl)
            weights[node] = _num(path, w, wl)

    # ---- flows ----------------------------------------------------------
    flows = []
    seen_flows = set()
    for sec in flows_secs:
        fname = sec.name.split(".", 1)[1]
        if not _NAME.match(fname):
            raise ScenarioError(f"bad flow name {fname!r}", path, sec.line)
        if fname in seen_flows:
            raise ScenarioError(f"duplicate flow {fname!r}", path, sec.line)
        seen_flows.add(fname)
        v = _View(path, sec)
        src = v.text("src")
        dst = v.text("dst")
        if src not in hosts:
            raise ScenarioError(f"flow {fname}: unknown src host {src!r}", path, sec.line)
        if dst not in hosts:
            raise ScenarioError(f"flow {fname}: unknown dst host {dst!r}", path, sec.line)
        size = v.integer("size")
        if size < 512:
            raise ScenarioError(f"flow {fname}: size below 512-bit minimum frame",
                                path, sec.line)
        syn = v.flag("syn", "no")
        start = v.dur("start", "0")
        stop = v.dur("stop", None) if v.has("stop") else t_end
        if stop <= start:
            raise ScenarioError(f"flow {fname}: stop must follow start", path, sec.line)
        raw_rate, rate_ln = v.raw("rate")
        segs = _parse_rate_steps(path, raw_rate, rate_ln, start)
        if any(t >= stop for t, _ in segs[1:]):
            raise ScenarioError(f"flow {fname}: rate step beyond stop time", path, rate_ln)
        flows.append(FlowDef(fname, src, dst, size, syn, start, stop, segs))

    # ---- scheduled scalar loads -----------------------------------------
    loads: list[tuple[float, str, int]] = []
    if loads_sec is not None:
        for state, (raw, ln) in loads_sec.items.items():
            for tok in raw.split():
                if ":" not in tok:
                    raise ScenarioError(f"bad load point {tok!r} (expected t:value)",
                                        path, ln)
                t, _, val = tok.partition(":")
                loads.append((_num(path, t, ln), state, _int(path, val, ln)))
        loads.sort(key=lambda x: (x[0], x[1]))

    return ScenarioConfig(
        path=path, name=name, seed=seed, t_end_s=t_end, metrics_bin_s=bin_s,
        queue_limit=queue_limit, replication=replication, topology=topology,
        app_name=app_name, app_params=app_params, replicas=replicas,
        r_min=r_min, trigger_mode=mode, weights=weights, flows=flows,
        loads=loads,
    )
