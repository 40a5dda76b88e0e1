"""Deterministic discrete-event network simulator.

Time is integer nanoseconds on a single heap of (time, seq) ordered
events, so identical inputs replay identically. Switches run a fixed
ingress pipeline per packet:

  1. replication updates are reconciled into the local store and
     flooded along the distribution tree (minus the ingress port);
  2. data packets hitting their measurement switch feed the matching
     state estimators, then per-packet activities (policing, steering,
     rule insertion) and edge-triggered controller notifications run;
  3. the packet is forwarded (measurement detour first, then pinned
     flow rules, then shortest path to destination);
  4. last, each state owned by the switch checks its update trigger
     against the traffic-driven clock and may emit an update frame.

Links model store-and-forward serialization plus propagation delay with
a bounded egress queue; overflow drops the packet. Controller messages
travel out of band with a fixed delay and consume no link capacity.
"""

from __future__ import annotations

import heapq
import random
from collections import deque

from .apps import RateEstimatorWindow
from .errors import SimulationError
from .metrics import CONTROLLER_DELAY_NS, MetricsLog
from .model import (
    CONTROLLER_PORT,
    ActionKind,
    PredicateKind,
    ValueType,
)
from .replication import (
    IPV4_ETHTYPE,
    ReplicaStore,
    UpdateHeader,
    UpdateTrigger,
    flood_ports,
    update_frame_bits,
)

_M64 = (1 << 64) - 1

EV_FLOW_START = 0
EV_EMIT = 1
EV_ARRIVAL = 2
EV_FLOW_STOP = 3
EV_CTRL = 4
EV_SCALAR = 5


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _M64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


class LinkDir:
    """One direction of a link: serialization, delay, bounded queue."""

    __slots__ = ("src", "dst", "delay_ns", "capacity_bps", "queue_limit", "row",
                 "busy_until", "backlog")

    def __init__(self, src, dst, delay_ns, capacity_bps, queue_limit, row):
        self.src = src
        self.dst = dst
        self.delay_ns = delay_ns
        self.capacity_bps = capacity_bps
        self.queue_limit = queue_limit
        self.row = row
        self.busy_until = 0
        self.backlog: deque[int] = deque()

    def send(self, size_bits: int, now: int) -> int | None:
        """Arrival time at the far end, or None if the queue is full.

        The backlog holds departure times of packets not yet fully
        serialized (the one in service included), oldest first; its
        length against queue_limit is the drop test.
        """
        bl = self.backlog
        while bl and bl[0] <= now:
            bl.popleft()
        if len(bl) >= self.queue_limit:
            return None
        start = now if now > self.busy_until else self.busy_until
        end = start + size_bits * 1_000_000_000 // self.capacity_bps
        self.busy_until = end
        bl.append(end)
        return end + self.delay_ns


class Packet:
    __slots__ = ("uid", "flow", "src", "dst", "dst_switch", "size_bits", "syn",
                 "is_update", "headers", "origin_ts", "origin_writes",
                 "monitor", "monitored", "net_class")

    def __init__(self, uid, flow, src, dst, dst_switch, size_bits, syn,
                 is_update=False, headers=(), origin_ts=0, origin_writes=0,
                 monitor=None):
        self.uid = uid
        self.flow = flow
        self.src = src
        self.dst = dst
        self.dst_switch = dst_switch
        self.size_bits = size_bits
        self.syn = syn
        self.is_update = is_update
        self.headers = headers
        self.origin_ts = origin_ts
        self.origin_writes = origin_writes
        self.monitor = monitor
        self.monitored = False
        self.net_class = None


class FlowRT:
    __slots__ = ("row", "name", "src", "dst", "dst_switch", "size_bits", "syn",
                 "segments", "stop_ns", "monitor", "seg", "k")

    def __init__(self, row, name, src, dst, dst_switch, size_bits, syn,
                 segments, stop_ns, monitor):
        self.row = row
        self.name = name
        self.src = src
        self.dst = dst
        self.dst_switch = dst_switch
        self.size_bits = size_bits
        self.syn = syn
        self.segments = segments
        self.stop_ns = stop_ns
        self.monitor = monitor
        self.seg = 0
        self.k = 0


class _TriggerRT:
    __slots__ = ("name", "output", "pred", "kind", "scope", "message",
                 "selector", "selector_const", "egress_map", "prev")

    def __init__(self, name, output, pred, kind, scope, message, selector,
                 selector_const, egress_map):
        self.name = name
        self.output = output
        self.pred = pred
        self.kind = kind
        self.scope = scope
        self.message = message
        self.selector = selector
        self.selector_const = selector_const
        self.egress_map = egress_map
        self.prev = False


class _OwnUpdate:
    __slots__ = ("state", "state_id", "replica_id", "trig")

    def __init__(self, state, state_id, replica_id, trig):
        self.state = state
        self.state_id = state_id
        self.replica_id = replica_id
        self.trig = trig


class _Monitor:
    __slots__ = ("state", "scope", "est", "use_bits")

    def __init__(self, state, scope, est, use_bits):
        self.state = state
        self.scope = scope
        self.est = est
        self.use_bits = use_bits


class SwitchRT:
    __slots__ = ("name", "sw_id", "ports", "port_class", "next_hop",
                 "tree_ports", "store", "monitors", "egress_monitors",
                 "packet_triggers", "change_triggers", "own_updates",
                 "flow_rules", "rng")

    def __init__(self, name, sw_id, rng):
        self.name = name
        self.sw_id = sw_id
        self.ports: dict[str, LinkDir] = {}
        self.port_class: dict[str, object] = {}
        self.next_hop: dict[str, str] = {}
        self.tree_ports: tuple[str, ...] = ()
        self.store: ReplicaStore | None = None
        self.monitors: list[_Monitor] = []
        self.egress_monitors: list[tuple[str, _Monitor]] = []
        self.packet_triggers: list[_TriggerRT] = []
        self.change_triggers: list[_TriggerRT] = []
        self.own_updates: list[_OwnUpdate] = []
        self.flow_rules: dict[str, str] = {}
        self.rng = rng


class Simulator:
    """Event-driven network with replicated in-switch application state."""

    def __init__(self, topo, seed=1, t_end_s=60.0, metrics_bin_s=0.5,
                 queue_limit=100, collect_trace=False, replication_enabled=True):
        self.topo = topo
        self.seed = seed
        self.t_end_ns = round(t_end_s * 1e9)
        self.bin_ns = round(metrics_bin_s * 1e9)
        self.queue_limit = queue_limit
        self.replication_enabled = replication_enabled
        self.trace: list[str] | None = [] if collect_trace else None
        self.t_now = 0
        self.log: MetricsLog | None = None
        self.flows: list[FlowRT] = []
        self._heap: list = []
        self._seq = 0
        self._uid = 0
        self._upd_uid = -1
        self._known_ids: set[int] = set()
        self._origin_store: dict[str, ReplicaStore] = {}
        self._origin_name: dict[str, str] = {}
        self.plan_text = ""

        self._sw_id = {sw: i for i, sw in enumerate(topo.switches)}
        self.switch_rt: dict[str, SwitchRT] = {}
        for sw, i in self._sw_id.items():
            rng = random.Random(_splitmix64((seed & _M64) ^ ((i + 1) * 0xD1B54A32D192ED03 & _M64)))
            self.switch_rt[sw] = SwitchRT(sw, i, rng)

        self._link_dirs: list[tuple[str, str]] = []
        self._host_out: dict[str, LinkDir] = {}
        for ln in topo.links:
            for a, b in ((ln.u, ln.v), (ln.v, ln.u)):
                row = len(self._link_dirs)
                self._link_dirs.append((a, b))
                ld = LinkDir(a, b, ln.delay_ns, ln.capacity_bps, queue_limit, row)
                if a in self.switch_rt:
                    self.switch_rt[a].ports[b] = ld
                    self.switch_rt[a].port_class[b] = ln.port_class(a)
                else:
                    self._host_out[a] = ld

    # ------------------------------------------------------------------
    # wiring

    def install_app(self, dag, program, placement, plan, rules,
                    egress_observers=None, egress_maps=None):
        """Deploy one compiled application onto the switches.

        egress_observers maps a wire state name to a neighbor: the state
        then measures traffic this switch forwards to that neighbor
        instead of matching ingress packets. egress_maps gives, per
        activity name and per switch, the port list indexed by the
        activity's selector output.
        """
        app = dag.app
        egress_observers = egress_observers or {}
        egress_maps = egress_maps or {}

        for sw, table in rules.next_hop.items():
            self.switch_rt[sw].next_hop.update(table)
        for sw, per_state in rules.tree_ports.items():
            for ports in per_state.values():
                self.switch_rt[sw].tree_ports = ports
                break

        state_specs = {s.name: s for s in app.states}
        for cs in program.states:
            if cs.state_id is None:
                raise SimulationError(f"state {cs.name} has no wire id")
            self._known_ids.add(cs.state_id)
            nodes = placement.nodes[cs.name]
            origin = placement.origin[cs.name]
            self._origin_name[cs.name] = origin
            origin_id = self._sw_id[origin]
            for sw in nodes:
                rt = self.switch_rt[sw]
                if rt.store is None:
                    rt.store = ReplicaStore(sw)
                rt.store.configure_state(
                    cs.name, cs.state_id, cs.width_bits,
                    owned=(sw == origin), origin_sw_ids=(origin_id,),
                )
            ort = self.switch_rt[origin]
            self._origin_store[cs.name] = ort.store
            if cs.value_type is ValueType.RATE_ESTIMATE:
                est = RateEstimatorWindow(cs.delta_s, cs.window)
                ort.store.attach_local(cs.name, est)
                mon = _Monitor(cs.name, cs.scope, est, cs.unit == "bits")
                if cs.name in egress_observers:
                    ort.egress_monitors.append((egress_observers[cs.name], mon))
                else:
                    ort.monitors.append(mon)
            elif cs.value_type is ValueType.COUNTER:
                mon = _Monitor(cs.name, cs.scope, None, cs.unit == "bits")
                if cs.name in egress_observers:
                    ort.egress_monitors.append((egress_observers[cs.name], mon))
                else:
                    ort.monitors.append(mon)
            # SCALARs are written through set_scalar / scheduled loads.

        # Reductions evaluate on every replica; expand array sources to
        # their wire element names.
        def expand(name: str) -> list[str]:
            per_source = program.states_of(name)
            if per_source:
                return [c.name for c in per_source]
            return [name]

        store_switches = {sw for cs in program.states for sw in placement.nodes[cs.name]}
        for red in dag.reductions.values():
            inputs = tuple(w for i in red.inputs for w in expand(i))
            for sw in store_switches:
                self.switch_rt[sw].store.configure_reduction(red.output, red.primitive, inputs)

        for sw in self.switch_rt.values():
            if sw.store is not None:
                sw.store.set_known_ids(self._known_ids)

        # Update triggers live at each replicated state's origin.
        for sname, sol in plan.solutions.items():
            cs = program.state_index[sname]
            origin = placement.origin[sname]
            rt = self.switch_rt[origin]
            trig = UpdateTrigger(sol.mode, tau_ns=sol.tau_ns, packet_period=sol.packet_period)
            rid = placement.replica_id[(sname, origin)]
            rt.own_updates.append(_OwnUpdate(sname, cs.state_id, rid, trig))

        acts = {a.name: a for a in app.activities}
        for tr in app.triggers:
            act = acts[tr.activity]
            upstream = dag.upstream_states(tr.name)
            sws = sorted({sw for s in upstream for c in program.states_of(s)
                          for sw in placement.nodes[c.name]})
            output = dag.trigger_inputs[tr.name]
            per_sw_maps = egress_maps.get(act.name, {})
            for sw in sws:
                rt = self.switch_rt[sw]
                trt = _TriggerRT(tr.name, output, tr.predicate, act.action,
                                 act.scope, act.message, act.selector,
                                 act.selector_const, per_sw_maps.get(sw))
                if act.action is ActionKind.NOTIFY_CONTROLLER:
                    rt.change_triggers.append(trt)
                else:
                    rt.packet_triggers.append(trt)

    def add_flow(self, name, src, dst, size_bits, syn, segments, stop_s,
                 monitor=None) -> int:
        """Register a packet flow; segments are (start_s, rate_pps) steps."""
        if self.log is not None:
            raise SimulationError("flows must be added before the run starts")
        if src not in self._host_out:
            raise SimulationError(f"flow {name}: unknown source host {src}")
        if dst not in self.topo.hosts:
            raise SimulationError(f"flow {name}: unknown destination host {dst}")
        if size_bits < 512:
            raise SimulationError(f"flow {name}: packets below the 512-bit minimum frame")
        segs = [(round(t * 1e9), float(r)) for t, r in segments]
        if not segs or any(segs[i][0] >= segs[i + 1][0] for i in range(len(segs) - 1)):
            raise SimulationError(f"flow {name}: segment starts must increase")
        stop_ns = round(stop_s * 1e9)
        if stop_ns <= segs[0][0]:
            raise SimulationError(f"flow {name}: stop precedes start")
        fl = FlowRT(len(self.flows), name, src, dst, self.topo.attached_switch(dst),
                    size_bits, syn, segs, stop_ns, monitor)
        self.flows.append(fl)
        self._schedule(segs[0][0], EV_FLOW_START, fl)
        self._schedule(stop_ns, EV_FLOW_STOP, fl)
        return fl.row

    def set_scalar(self, switch, state, value, t_ns=None):
        """Write a scalar state at its origin (e.g. an injected load)."""
        rt = self.switch_rt[switch]
        if rt.store is None or state not in rt.store.local_values:
            raise SimulationError(f"{switch} does not own state {state}")
        t = self.t_now if t_ns is None else t_ns
        rt.store.write_local(state, value, t)
        if rt.change_triggers:
            self._eval_change_triggers(rt, t)

    def schedule_scalar(self, t_s, switch, state, value):
        self._schedule(round(t_s * 1e9), EV_SCALAR, (switch, state, value))

    # ------------------------------------------------------------------
    # engine

    def _schedule(self, t, kind, payload):
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, payload))

    def _build_log(self):
        log = MetricsLog(self.t_end_ns, self.bin_ns, self._link_dirs,
                         [f.name for f in self.flows])
        for sw, rt in sorted(self.switch_rt.items()):
            if rt.store is not None:
                log.replica_memory[sw] = rt.store.replica_memory_bits()
        log.plan_text = self.plan_text
        self.log = log
        self._data = log.data_bits
        self._repl = log.repl_bits

    def run_until(self, t_end_s=None) -> MetricsLog:
        if self.log is None:
            self._build_log()
        t_end = self.t_end_ns if t_end_s is None else round(t_end_s * 1e9)
        if t_end > self.t_end_ns:
            raise SimulationError("run_until beyond the configured horizon")
        heap = self._heap
        log = self.log
        pop = heapq.heappop
        while heap and heap[0][0] <= t_end:
            t, _seq, kind, payload = pop(heap)
            if t < self.t_now:
                raise SimulationError("event queue went backwards")
            self.t_now = t
            log.events_processed += 1
            if kind == EV_ARRIVAL:
                node, pkt, frm = payload
                rt = self.switch_rt.get(node)
                if rt is not None:
                    self._on_switch(rt, pkt, frm, t)
                elif not pkt.is_update:
                    log.flow_delivered[pkt.flow] += 1
                    log.flow_bits[pkt.flow, log.bin_of(t)] += pkt.size_bits
            elif kind == EV_EMIT:
                self._emit_flow(payload, t)
            elif kind == EV_FLOW_START:
                if self.trace is not None:
                    self.trace.append(f"{t} flow_start {payload.src} flow={payload.name}")
                self._emit_flow(payload, t)
            elif kind == EV_FLOW_STOP:
                if self.trace is not None:
                    self.trace.append(f"{t} flow_stop {payload.src} flow={payload.name}")
            elif kind == EV_CTRL:
                sw, message = payload
                log.notifications.append((t, sw, message))
                if self.trace is not None:
                    self.trace.append(f"{t} notify ctrl from={sw} msg={message}")
            elif kind == EV_SCALAR:
                sw, state, value = payload
                self.set_scalar(sw, state, value, t)
        return log

    def _emit_flow(self, fl: FlowRT, t: int):
        if t >= fl.stop_ns:
            return
        uid = self._uid
        self._uid += 1
        pkt = Packet(uid, fl.row, fl.src, fl.dst, fl.dst_switch, fl.size_bits,
                     fl.syn, monitor=fl.monitor)
        self.log.flow_sent[fl.row] += 1
        self._send(self._host_out[fl.src], pkt, t)
        # Schedule the next emission, hopping segment boundaries as needed.
        while True:
            seg_start, rate = fl.segments[fl.seg]
            nxt = fl.segments[fl.seg + 1][0] if fl.seg + 1 < len(fl.segments) else None
            cand = None
            if rate > 0:
                cand = seg_start + round((fl.k + 1) * 1e9 / rate)
            if cand is None or (nxt is not None and cand >= nxt):
                if nxt is None:
                    return
                fl.seg += 1
                fl.k = 0
                cand = nxt
                if cand < fl.stop_ns:
                    self._schedule(cand, EV_EMIT, fl)
                return
            fl.k += 1
            if cand < fl.stop_ns:
                self._schedule(cand, EV_EMIT, fl)
            return

    def _send(self, ld: LinkDir, pkt: Packet, t: int):
        arr = ld.send(pkt.size_bits, t)
        log = self.log
        if arr is None:
            log.queue_drops[ld.row] += 1
            if pkt.flow >= 0:
                log.flow_queue_drops[pkt.flow] += 1
            if self.trace is not None:
                self.trace.append(f"{t} drop_queue {ld.src} uid={pkt.uid} to={ld.dst}")
            return
        b = log.bin_of(t)
        if pkt.is_update:
            self._repl[ld.row, b] += pkt.size_bits
        else:
            self._data[ld.row, b] += pkt.size_bits
        self._schedule(arr, EV_ARRIVAL, (ld.dst, pkt, ld.src))

    def _eval_change_triggers(self, sw: SwitchRT, t: int):
        store = sw.store
        for tr in sw.change_triggers:
            v = store.read_global(tr.output, t)
            fired = tr.pred.evaluate(v)
            if fired and not tr.prev:
                self.log.detections.append((t, sw.name, tr.name, int(v)))
                if self.trace is not None:
                    self.trace.append(f"{t} detect {sw.name} trigger={tr.name} value={v}")
                self._schedule(t + CONTROLLER_DELAY_NS, EV_CTRL,
                               (sw.name, tr.message or tr.name))
            tr.prev = fired

    def _emit_update(self, sw: SwitchRT, ent: _OwnUpdate, t: int):
        store = sw.store
        value = store.local_value(ent.state, t) & _M64
        hdr = UpdateHeader(src_sw_id=sw.sw_id, dst_sw_id=0, state_id=ent.state_id,
                           replica_id=ent.replica_id, state_value=value,
                           l3_protocol_type=IPV4_ETHTYPE)
        self._upd_uid -= 1
        pkt = Packet(self._upd_uid, -1, sw.name, "", "", update_frame_bits(1),
                     False, is_update=True, headers=(hdr,), origin_ts=t,
                     origin_writes=store.local_writes[ent.state])
        self.log.updates_emitted += 1
        if self.trace is not None:
            self.trace.append(f"{t} update_emit {sw.name} state={ent.state} value={value}")
        for nbr in flood_ports(sw.tree_ports, None):
            self._send(sw.ports[nbr], pkt, t)

    def _on_switch(self, sw: SwitchRT, pkt: Packet, ingress: str, t: int):
        log = self.log
        if pkt.is_update:
            store = sw.store
            if store is not None:
                applied = False
                for h in pkt.headers:
                    status, prev_ts = store.apply_update(h, pkt.origin_ts, pkt.origin_writes)
                    if status == "applied":
                        applied = True
                        name = store.hosted[h.state_id]
                        age_in = t - pkt.origin_ts
                        age_out = t - prev_ts if prev_ts is not None and prev_ts >= 0 else 0
                        log.staleness.append(
                            (t, name, self._origin_name.get(name, "?"), sw.name,
                             age_in, age_out))
                        ostore = self._origin_store.get(name)
                        if ostore is not None:
                            lag = ostore.local_writes[name] - pkt.origin_writes
                            log.write_lag.append((t, name, sw.name, lag))
                    elif status == "unknown":
                        log.unknown_state_drops += 1
                    elif status == "stale":
                        log.stale_update_drops += 1
                if applied and sw.change_triggers:
                    self._eval_change_triggers(sw, t)
            for nbr in flood_ports(sw.tree_ports, ingress):
                self._send(sw.ports[nbr], pkt, t)
        else:
            if pkt.net_class is None:
                pkt.net_class = sw.port_class[ingress]
            store = sw.store
            dropped = False
            override = None
            if not pkt.monitored and pkt.monitor == sw.name:
                pkt.monitored = True
                nc = pkt.net_class
                wrote = False
                for m in sw.monitors:
                    if m.scope.matches(nc, pkt.syn, pkt.dst):
                        inc = pkt.size_bits if m.use_bits else 1
                        if m.est is not None:
                            m.est.observe(t, inc)
                            store.note_write(m.state, t)
                        else:
                            store.write_local(m.state, store.local_value(m.state, t) + inc, t)
                        wrote = True
                if wrote and sw.change_triggers:
                    self._eval_change_triggers(sw, t)
                for tr in sw.packet_triggers:
                    if not tr.scope.matches(nc, pkt.syn, pkt.dst):
                        continue
                    v = store.read_global(tr.output, t)
                    if tr.pred.kind is PredicateKind.PROBABILISTIC:
                        fired = sw.rng.random() < tr.pred.fire_probability(v)
                    else:
                        fired = tr.pred.evaluate(v)
                    if not fired:
                        continue
                    if tr.kind is ActionKind.DROP_PACKET:
                        log.flow_app_drops[pkt.flow] += 1
                        if self.trace is not None:
                            self.trace.append(f"{t} drop_app {sw.name} uid={pkt.uid}")
                        dropped = True
                        break
                    sel = tr.selector_const
                    if tr.selector is not None:
                        sel = store.read_global(tr.selector, t)
                    if sel == CONTROLLER_PORT:
                        log.controller_redirects.append((t, sw.name, self.flows[pkt.flow].name))
                        log.flow_app_drops[pkt.flow] += 1
                        dropped = True
                        break
                    if tr.egress_map is None or not (0 <= sel < len(tr.egress_map)):
                        continue
                    port = tr.egress_map[sel]
                    if tr.kind is ActionKind.INSERT_FLOW_RULE:
                        sw.flow_rules[pkt.dst] = port
                    override = port
            if not dropped:
                if override is not None:
                    out = override
                elif not pkt.monitored and pkt.monitor is not None and pkt.monitor != sw.name:
                    out = sw.next_hop[pkt.monitor]
                elif pkt.dst in sw.flow_rules:
                    out = sw.flow_rules[pkt.dst]
                elif pkt.dst_switch == sw.name:
                    out = pkt.dst
                else:
                    out = sw.next_hop[pkt.dst_switch]
                if sw.egress_monitors:
                    wrote = False
                    for nbr, m in sw.egress_monitors:
                        if out == nbr and m.scope.matches(pkt.net_class, pkt.syn, pkt.dst):
                            inc = pkt.size_bits if m.use_bits else 1
                            if m.est is not None:
                                m.est.observe(t, inc)
                                store.note_write(m.state, t)
                            else:
                                store.write_local(m.state, store.local_value(m.state, t) + inc, t)
                            wrote = True
                    if wrote and sw.change_triggers:
                        self._eval_change_triggers(sw, t)
                if self.trace is not None:
                    self.trace.append(f"{t} fwd {sw.name} uid={pkt.uid} out={out}")
                self._send(sw.ports[out], pkt, t)
        # Update emission: end of the ingress pipeline, every packet.
        if sw.own_updates and self.replication_enabled:
            for ent in sw.own_updates:
                if ent.trig.should_emit(t):
                    self._emit_update(sw, ent, t)

    def save_trace(self, path: str):
        if self.trace is None:
            raise SimulationError("run was started without trace collection")
        with open(path, "w") as fh:
            fh.write("\n".join(self.trace) + ("\n" if self.trace else ""))
