"""Build and run simulations from scenario configs.

The runner owns the full deployment pipeline: application factory ->
validation/DAG -> primitive lowering -> wire id assignment -> replica
placement -> distribution tree and update periods -> rule install ->
simulator wiring (stores, estimators, triggers, flow monitors). Sweeps
run the same scenario at several replica counts, each under a fresh
simulator seeded identically, and export one CSV directory per count.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

from .apps import (
    make_ddos_app,
    make_link_lb_app,
    make_rate_limiter_app,
    make_resource_lb_app,
)
from .compiler import (
    StateIdRegistry,
    assign_state_ids,
    canonical_text,
    compile_application,
)
from .embedding import (
    EmbeddingConfig,
    build_replication_plan,
    install_rules,
    place_replicas,
    serialize_plan,
)
from .errors import ScenarioError
from .metrics import MetricsLog, export_metrics, export_summary, summarize
from .model import InconsistencySpec, build_dag, replication_requirements
from .scenario import ScenarioConfig
from .simcore import Simulator


@dataclass
class BuiltSimulation:
    sim: Simulator
    app: object
    dag: object
    program: object
    placement: object
    plan: object
    rules: object
    replicas: int


def _make_app(config: ScenarioConfig, replicas: int):
    p = config.app_params
    name = config.app_name

    def state_count() -> int:
        raw = p.get("states", "auto")
        if raw == "auto":
            return replicas
        try:
            n = int(raw)
        except ValueError:
            raise ScenarioError(f"states must be 'auto' or an integer, got {raw!r}",
                                config.path, 0) from None
        if n < 1:
            raise ScenarioError("states must be >= 1", config.path, 0)
        return n

    if name == "ddos":
        return make_ddos_app(state_count(), p["threshold"], p["epsilon_t_s"],
                             p["delta_s"], p["window"])
    if name == "ratelimit":
        return make_rate_limiter_app(state_count(), p["rate_limit_bps"],
                                     p["epsilon_r"], p["max_write_rate"],
                                     p["delta_s"], p["window"])
    if name == "linklb":
        vias = p["path_via"]
        app = make_link_lb_app(len(vias), p["epsilon_r"], p["max_write_rate"],
                               p["delta_s"], p["window"])
        hints = [p["lb_switch"]] * len(vias) + list(vias)
        states = tuple(replace(s, target_hint=h) for s, h in zip(app.states, hints))
        return replace(app, states=states)
    if name == "resourcelb":
        app = make_resource_lb_app(len(p["servers"]), p["threshold"],
                                   p["load_scale"], p["epsilon_r"],
                                   p["max_write_rate"])
        states = tuple(replace(s, target_hint=p["lb_switch"]) for s in app.states)
        return replace(app, states=states)
    raise ScenarioError(f"unknown application {name!r}", config.path, 0)


def _bindings(config: ScenarioConfig):
    """App-specific egress observers and selector-to-port maps."""
    topo = config.topology
    p = config.app_params
    if config.app_name == "linklb":
        lb = p["lb_switch"]
        vias = p["path_via"]
        dst_sw = p["dst_switch"]
        observers = {}
        for i, via in enumerate(vias):
            if via not in topo.adj[lb]:
                raise ScenarioError(f"linklb: {via} is not adjacent to {lb}",
                                    config.path, 0)
            if via == dst_sw:
                raise ScenarioError("linklb: path_via must differ from dst_switch",
                                    config.path, 0)
            observers[f"leg_load_{i}"] = via
            observers[f"leg_load_{i + len(vias)}"] = topo.next_hop(via, dst_sw)
        return observers, {"pin_path": {lb: list(vias)}}
    if config.app_name == "resourcelb":
        lb = p["lb_switch"]
        for h in p["servers"]:
            if topo.attached_switch(h) != lb:
                raise ScenarioError(f"resourcelb: server {h} must attach to {lb}",
                                    config.path, 0)
        return {}, {"assign_server": {lb: list(p["servers"])}}
    return {}, {}


def _forced_monitor(config: ScenarioConfig) -> str | None:
    if config.app_name in ("linklb", "resourcelb"):
        return config.app_params["lb_switch"]
    return None


def pick_monitor(topo, replica_set, src_host: str, dst_host: str) -> str:
    """Measurement switch for a flow: the replica minimizing the detour
    ingress -> replica -> destination, lowest name on ties."""
    ing = topo.attached_switch(src_host)
    dst = topo.attached_switch(dst_host)
    return min(replica_set,
               key=lambda m: (topo.delay_between(ing, m) + topo.delay_between(m, dst), m))


def build_simulation(config: ScenarioConfig, replicas: int | None = None,
                     seed: int | None = None, t_end_s: float | None = None,
                     collect_trace: bool = False,
                     replication: bool | None = None,
                     registry: StateIdRegistry | None = None) -> BuiltSimulation:
    c = config.replicas if replicas is None else replicas
    if not 1 <= c <= len(config.topology.switches):
        raise ScenarioError(
            f"replicas must be in 1..{len(config.topology.switches)}, got {c}",
            config.path, 0)
    topo = config.topology

    app = _make_app(config, c)
    dag = build_dag(app)
    program = compile_application(dag)
    assign_state_ids(program, registry or StateIdRegistry())

    reqs = replication_requirements(dag)
    ecfg = EmbeddingConfig(c, config.weights)
    placement = place_replicas(topo, ecfg, program, reqs)
    reqs_wire = {cs.name: reqs.get(cs.source, InconsistencySpec.none())
                 for cs in program.states}
    plan = build_replication_plan(topo, placement, reqs_wire,
                                  config.r_min, config.trigger_mode)
    rules = install_rules(topo, placement, plan)

    sim = Simulator(
        topo,
        seed=config.seed if seed is None else seed,
        t_end_s=config.t_end_s if t_end_s is None else t_end_s,
        metrics_bin_s=config.metrics_bin_s,
        queue_limit=config.queue_limit,
        collect_trace=collect_trace,
        replication_enabled=config.replication if replication is None else replication,
    )
    observers, egress_maps = _bindings(config)
    sim.install_app(dag, program, placement, plan, rules, observers, egress_maps)
    sim.plan_text = serialize_plan(placement, plan) + "\n" + canonical_text(program)

    replica_set = sorted({sw for nodes in placement.nodes.values() for sw in nodes})
    forced = _forced_monitor(config)
    for f in config.flows:
        monitor = forced or pick_monitor(topo, replica_set, f.src, f.dst)
        sim.add_flow(f.name, f.src, f.dst, f.size_bits, f.syn,
                     f.segments, f.stop_s, monitor)

    for (t_s, state, value) in config.loads:
        origin = placement.origin.get(state)
        if origin is None:
            raise ScenarioError(f"load references unknown state {state!r}",
                                config.path, 0)
        sim.schedule_scalar(t_s, origin, state, value)

    return BuiltSimulation(sim, app, dag, program, placement, plan, rules, c)


def run_single(config: ScenarioConfig, out_dir: str | None = None,
               replicas: int | None = None, seed: int | None = None,
               t_end_s: float | None = None, trace_path: str | None = None,
               replication: bool | None = None) -> MetricsLog:
    built = build_simulation(config, replicas=replicas, seed=seed,
                             t_end_s=t_end_s, collect_trace=trace_path is not None,
                             replication=replication)
    log = built.sim.run_until()
    if out_dir is not None:
        export_metrics(log, out_dir, switch_names=config.topology.switches)
    if trace_path is not None:
        built.sim.save_trace(trace_path)
    return log


def run_sweep(config: ScenarioConfig, out_dir: str, replica_counts,
              seed: int | None = None, t_end_s: float | None = None) -> dict[str, MetricsLog]:
    """Run the scenario once per replica count, sequentially.

    Each count gets its own subdirectory c<N> with the raw CSV family;
    a combined summary.csv is written at the top level.
    """
    logs: dict[str, MetricsLog] = {}
    for c in replica_counts:
        label = f"c{c}"
        log = run_single(config, out_dir=os.path.join(out_dir, label),
                         replicas=c, seed=seed, t_end_s=t_end_s)
        logs[label] = log
    rows = summarize(logs, is_switch=config.topology.is_switch)
    export_summary(rows, os.path.join(out_dir, "summary.csv"))
    return logs
