"""Embedding of compiled applications onto a topology.

Covers replica placement by traffic-weighted betweenness, the shared
update-distribution tree (metric-closure Steiner approximation), the
translation of inconsistency budgets into update trigger periods, and
the forwarding/flooding rule tables the simulator installs on switches.

All delays are integer nanoseconds so shortest-path comparisons and
tie-breaks are exact.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from fractions import Fraction

from .compiler import PrimitiveProgram
from .errors import (
    DisconnectedTerminals,
    DisconnectedTopology,
    InfeasibleBudget,
    InsufficientNodes,
)
from .model import InconsistencyKind, InconsistencySpec, PortClass


@dataclass(frozen=True)
class Link:
    """Undirected link; u_class / v_class tag the port on that endpoint."""

    u: str
    v: str
    delay_ns: int
    capacity_bps: int
    u_class: PortClass = PortClass.ANY
    v_class: PortClass = PortClass.ANY

    def other(self, node: str) -> str:
        return self.v if node == self.u else self.u

    def port_class(self, node: str) -> PortClass:
        return self.u_class if node == self.u else self.v_class

    def key(self) -> tuple[str, str]:
        return (self.u, self.v) if self.u < self.v else (self.v, self.u)


class Topology:
    """Switches, hosts, an optional controller, and the links between them."""

    def __init__(
        self,
        switches,
        hosts,
        links,
        controller: str | None = None,
    ):
        self.switches = tuple(switches)
        self.hosts = tuple(hosts)
        self.controller = controller
        self.links = tuple(links)
        self.adj: dict[str, dict[str, Link]] = {n: {} for n in self.switches + self.hosts}
        names = set(self.switches) | set(self.hosts)
        if len(names) != len(self.switches) + len(self.hosts):
            raise DisconnectedTopology("duplicate node names")
        for ln in self.links:
            if ln.u not in names or ln.v not in names:
                raise DisconnectedTopology(f"link endpoint unknown: {ln.u}-{ln.v}")
            if ln.delay_ns <= 0 or ln.capacity_bps <= 0:
                raise DisconnectedTopology(f"link {ln.u}-{ln.v}: delay and capacity must be > 0")
            if ln.v in self.adj[ln.u]:
                raise DisconnectedTopology(f"duplicate link {ln.u}-{ln.v}")
            self.adj[ln.u][ln.v] = ln
            self.adj[ln.v][ln.u] = ln
        for h in self.hosts:
            if len(self.adj[h]) != 1:
                raise DisconnectedTopology(f"host {h} must attach to exactly one switch")
            nbr = next(iter(self.adj[h]))
            if nbr not in set(self.switches):
                raise DisconnectedTopology(f"host {h} must attach to a switch")
        self._check_connected()
        self._sp_cache: dict[str, tuple[dict[str, int], dict[str, int]]] = {}

    def _check_connected(self):
        nodes = self.switches + self.hosts
        if not nodes:
            raise DisconnectedTopology("empty topology")
        seen = {nodes[0]}
        stack = [nodes[0]]
        while stack:
            n = stack.pop()
            for m in self.adj[n]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        if len(seen) != len(nodes):
            missing = sorted(set(nodes) - seen)
            raise DisconnectedTopology(f"unreachable nodes: {', '.join(missing)}")

    def attached_switch(self, host: str) -> str:
        return next(iter(self.adj[host]))

    def is_switch(self, node: str) -> bool:
        return node in self._switch_set()

    def _switch_set(self):
        s = getattr(self, "_sws", None)
        if s is None:
            s = self._sws = frozenset(self.switches)
        return s

    def switch_distances(self, src: str) -> tuple[dict[str, int], dict[str, int]]:
        """Dijkstra over the switch graph: (delay_ns, shortest path counts)."""
        if src in self._sp_cache:
            return self._sp_cache[src]
        dist: dict[str, int] = {src: 0}
        sigma: dict[str, int] = {src: 1}
        done: set[str] = set()
        heap = [(0, src)]
        sws = self._switch_set()
        while heap:
            d, n = heapq.heappop(heap)
            if n in done:
                continue
            done.add(n)
            for m, ln in self.adj[n].items():
                if m not in sws:
                    continue
                nd = d + ln.delay_ns
                if m not in dist or nd < dist[m]:
                    dist[m] = nd
                    sigma[m] = sigma[n]
                    heapq.heappush(heap, (nd, m))
                elif nd == dist[m] and m not in done:
                    sigma[m] += sigma[n]
        self._sp_cache[src] = (dist, sigma)
        return self._sp_cache[src]

    def delay_between(self, a: str, b: str) -> int:
        """Shortest switch-graph delay between two switches."""
        dist, _ = self.switch_distances(a)
        if b not in dist:
            raise DisconnectedTopology(f"no switch path {a} -> {b}")
        return dist[b]

    def next_hop(self, switch: str, dst_switch: str) -> str:
        """Neighbor switch on a shortest path; name order breaks ties."""
        if switch == dst_switch:
            return switch
        best = None
        dist_to_dst, _ = self.switch_distances(dst_switch)
        for m in sorted(self.adj[switch]):
            if not self.is_switch(m) or m not in dist_to_dst:
                continue
            total = self.adj[switch][m].delay_ns + dist_to_dst[m]
            if total == dist_to_dst.get(switch):
                best = m
                break
        if best is None:
            raise DisconnectedTopology(f"no route {switch} -> {dst_switch}")
        return best


def node_loads(topo: Topology, weights: dict[str, float]) -> dict[str, float]:
    """Aggregate traffic weight per switch (own plus attached hosts)."""
    load = {sw: float(weights.get(sw, 0.0)) for sw in topo.switches}
    for h in topo.hosts:
        w = float(weights.get(h, 0.0))
        if w:
            load[topo.attached_switch(h)] += w
    return load


def weighted_betweenness(topo: Topology, weights: dict[str, float]) -> dict[str, float]:
    """Traffic-weighted shortest-path betweenness over switches.

    Endpoint-inclusive: a demand pair (u, v) with weight load(u)+load(v)
    credits every node on each shortest u-v path, endpoints included,
    splitting evenly across equal-cost paths. Exact rationals are used
    for the path-fraction arithmetic so scores are deterministic.
    """
    load = node_loads(topo, weights)
    score = {sw: Fraction(0) for sw in topo.switches}
    sws = list(topo.switches)
    dist = {}
    sigma = {}
    for s in sws:
        dist[s], sigma[s] = topo.switch_distances(s)
    for i, u in enumerate(sws):
        for v in sws[i + 1 :]:
            w = load[u] + load[v]
            if w == 0:
                continue
            if v not in dist[u]:
                raise DisconnectedTopology(f"no path between {u} and {v}")
            duv = dist[u][v]
            total = sigma[u][v]
            wf = Fraction(w).limit_denominator(10**9)
            for n in sws:
                if dist[u].get(n, -1) < 0 or v not in dist[n]:
                    continue
                if dist[u][n] + dist[n][v] == duv:
                    through = sigma[u][n] * sigma[n][v]
                    score[n] += wf * Fraction(through, total)
    return {sw: float(score[sw]) for sw in topo.switches}


def ranked_switches(topo: Topology, weights: dict[str, float]) -> list[str]:
    """Switches ordered by descending betweenness, names break ties."""
    score = weighted_betweenness(topo, weights)
    return sorted(topo.switches, key=lambda sw: (-score[sw], sw))


@dataclass(frozen=True)
class EmbeddingConfig:
    replica_count: int
    traffic_weights: dict[str, float] = field(default_factory=dict)


@dataclass
class ReplicaPlacement:
    """Where each wire state lives and which replica writes where."""

    nodes: dict[str, tuple[str, ...]]
    origin: dict[str, str]
    replica_id: dict[tuple[str, str], int]
    scores: dict[str, float]
    ranking: list[str]

    def replicated_states(self) -> list[str]:
        return [s for s, n in self.nodes.items() if len(n) > 1]


def place_replicas(
    topo: Topology,
    config: EmbeddingConfig,
    program: PrimitiveProgram,
    requirements: dict[str, InconsistencySpec],
) -> ReplicaPlacement:
    """Pick replica sets and writer origins for every wire state.

    States whose budget kind is NONE stay on the single top-ranked
    switch. Replicated states share the top-C set; origins follow the
    state's target hint when given, otherwise round-robin over the
    name-sorted replica set so the k-th declared state writes at the
    k-th switch.
    """
    if config.replica_count < 1:
        raise InsufficientNodes("replica_count must be >= 1")
    if config.replica_count > len(topo.switches):
        raise InsufficientNodes(
            f"replica_count {config.replica_count} exceeds"
            f" {len(topo.switches)} switches"
        )
    scores = weighted_betweenness(topo, config.traffic_weights)
    ranking = sorted(topo.switches, key=lambda sw: (-scores[sw], sw))

    nodes: dict[str, tuple[str, ...]] = {}
    origin: dict[str, str] = {}
    replica_id: dict[tuple[str, str], int] = {}
    k = 0
    for cs in program.states:
        req = requirements.get(cs.source, InconsistencySpec.none())
        c = config.replica_count if req.kind is not InconsistencyKind.NONE else 1
        chosen = tuple(sorted(ranking[:c]))
        nodes[cs.name] = chosen
        if cs.target_hint is not None:
            if cs.target_hint not in chosen:
                raise InsufficientNodes(
                    f"state {cs.name}: hint {cs.target_hint} not among replicas {chosen}"
                )
            origin[cs.name] = cs.target_hint
        else:
            origin[cs.name] = chosen[k % c]
        if len(chosen) > 1:
            k += 1
        for idx, sw in enumerate(chosen):
            replica_id[(cs.name, sw)] = idx
    return ReplicaPlacement(nodes, origin, replica_id, scores, ranking)


def steiner_tree(topo: Topology, terminals) -> frozenset[tuple[str, str]]:
    """2-approximate Steiner tree over the switch graph.

    Metric-closure MST expanded along shortest paths, then pruned of
    non-terminal leaves. Deterministic under (delay, name) tie-breaks.
    """
    terms = sorted(set(terminals))
    if len(terms) <= 1:
        return frozenset()
    for t in terms:
        if not topo.is_switch(t):
            raise DisconnectedTerminals(f"terminal {t} is not a switch")
    dist = {t: topo.switch_distances(t)[0] for t in terms}
    for a in terms:
        for b in terms:
            if b not in dist[a]:
                raise DisconnectedTerminals(f"no path between terminals {a} and {b}")

    # Kruskal over the metric closure.
    closure = sorted(
        (dist[a][b], a, b) for i, a in enumerate(terms) for b in terms[i + 1 :]
    )
    parent = {t: t for t in terms}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    mst_pairs = []
    for d, a, b in closure:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            mst_pairs.append((a, b))

    edges: set[tuple[str, str]] = set()
    for a, b in mst_pairs:
        for e in _shortest_path_edges(topo, a, b):
            edges.add(e)

    # The union of expanded paths may contain cycles; reduce to a spanning
    # tree of the union subgraph, then prune non-terminal leaves.
    edges = _spanning_subtree(topo, edges, terms)
    changed = True
    term_set = set(terms)
    while changed:
        changed = False
        degree: dict[str, int] = {}
        for u, v in edges:
            degree[u] = degree.get(u, 0) + 1
            degree[v] = degree.get(v, 0) + 1
        for e in sorted(edges):
            u, v = e
            if (degree[u] == 1 and u not in term_set) or (
                degree[v] == 1 and v not in term_set
            ):
                edges.discard(e)
                changed = True
    return frozenset(edges)


def _shortest_path_edges(topo: Topology, a: str, b: str) -> list[tuple[str, str]]:
    dist_b, _ = topo.switch_distances(b)
    edges = []
    cur = a
    while cur != b:
        nxt = topo.next_hop(cur, b)
        ln = topo.adj[cur][nxt]
        edges.append(ln.key())
        cur = nxt
    return edges


def _spanning_subtree(topo, edges: set, terms) -> set:
    """Minimum spanning tree of the union subgraph (Kruskal, stable order)."""
    ranked = sorted(edges, key=lambda e: (topo.adj[e[0]][e[1]].delay_ns, e))
    nodes = {n for e in edges for n in e}
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    keep: set[tuple[str, str]] = set()
    for e in ranked:
        ru, rv = find(e[0]), find(e[1])
        if ru != rv:
            parent[ru] = rv
            keep.add(e)
    return keep


@dataclass(frozen=True)
class PeriodSolution:
    """Solved update cadence for one state."""

    d_r_ns: int
    worst_pair_delay_ns: int
    mode: str
    tau_ns: int | None = None
    packet_period: int | None = None


def solve_replication_period(
    spec: InconsistencySpec,
    worst_pair_delay_ns: int,
    r_min: float,
    mode: str = "time",
) -> PeriodSolution:
    """Turn an inconsistency budget into an update trigger period.

    The total allowance is epsilon_t (time obsolescence) or
    epsilon_r / max_write_rate (update error); propagation over the
    worst replica pair consumes worst_pair_delay, the remainder is the
    replication period d_r. Time mode then reserves one minimum packet
    interarrival (1 / r_min) for the traffic-driven clock check; packet
    mode counts floor(d_r * r_min) packets instead.
    """
    if spec.kind is InconsistencyKind.NONE:
        raise InfeasibleBudget("state has no inconsistency budget, nothing to solve")
    budget_ns = round(spec.budget_s() * 1e9)
    d_r = budget_ns - worst_pair_delay_ns
    if d_r <= 0:
        raise InfeasibleBudget(
            f"budget {budget_ns} ns does not cover worst replica pair delay"
            f" {worst_pair_delay_ns} ns"
        )
    if mode == "time":
        if r_min <= 0:
            raise InfeasibleBudget("time mode needs r_min > 0")
        gap_ns = round(1e9 / r_min)
        tau = d_r - gap_ns
        if tau < 0:
            raise InfeasibleBudget(
                f"replication period {d_r} ns is below the packet interarrival"
                f" floor {gap_ns} ns; emit cannot keep the bound"
            )
        return PeriodSolution(d_r, worst_pair_delay_ns, "time", tau_ns=tau)
    if mode == "packet":
        p = int(d_r * r_min // 1_000_000_000)
        if p < 1:
            raise InfeasibleBudget(
                f"replication period {d_r} ns spans no full packet at rate {r_min}/s"
            )
        return PeriodSolution(d_r, worst_pair_delay_ns, "packet", packet_period=p)
    raise InfeasibleBudget(f"unknown trigger mode {mode!r}")


@dataclass
class ReplicationPlan:
    tree_edges: frozenset[tuple[str, str]]
    solutions: dict[str, PeriodSolution]
    r_min: float
    mode: str


def build_replication_plan(
    topo: Topology,
    placement: ReplicaPlacement,
    requirements_by_wire: dict[str, InconsistencySpec],
    r_min: float,
    mode: str = "time",
) -> ReplicationPlan:
    """Shared distribution tree plus a period solution per replicated state."""
    replicated = placement.replicated_states()
    terminals = sorted({n for s in replicated for n in placement.nodes[s]})
    tree = steiner_tree(topo, terminals) if len(terminals) > 1 else frozenset()
    solutions: dict[str, PeriodSolution] = {}
    for s in replicated:
        nodes = placement.nodes[s]
        worst = 0
        for i, a in enumerate(nodes):
            for b in nodes[i + 1 :]:
                worst = max(worst, topo.delay_between(a, b))
        solutions[s] = solve_replication_period(
            requirements_by_wire[s], worst, r_min, mode
        )
    return ReplicationPlan(tree, solutions, r_min, mode)


@dataclass
class RuleTables:
    """Forwarding and flooding state the simulator installs per switch."""

    next_hop: dict[str, dict[str, str]]
    tree_ports: dict[str, dict[str, tuple[str, ...]]]


def install_rules(
    topo: Topology, placement: ReplicaPlacement, plan: ReplicationPlan
) -> RuleTables:
    """Next-hop tables to every switch plus per-state tree port lists."""
    next_hop: dict[str, dict[str, str]] = {}
    for sw in topo.switches:
        table = {}
        for dst in topo.switches:
            if dst != sw:
                table[dst] = topo.next_hop(sw, dst)
        next_hop[sw] = table

    neighbors_on_tree: dict[str, list[str]] = {}
    for u, v in sorted(plan.tree_edges):
        neighbors_on_tree.setdefault(u, []).append(v)
        neighbors_on_tree.setdefault(v, []).append(u)

    tree_ports: dict[str, dict[str, tuple[str, ...]]] = {}
    for sw, nbrs in sorted(neighbors_on_tree.items()):
        per_state = {}
        for s in placement.replicated_states():
            per_state[s] = tuple(sorted(nbrs))
        tree_ports[sw] = per_state
    return RuleTables(next_hop, tree_ports)


def serialize_plan(
    placement: ReplicaPlacement, plan: ReplicationPlan, requirements=None
) -> str:
    """Human-readable resolved plan (used by the validate verb)."""
    lines = []
    lines.append("ranking: " + " ".join(placement.ranking))
    for s in sorted(placement.nodes):
        nodes = ",".join(placement.nodes[s])
        lines.append(f"state {s}: replicas=[{nodes}] origin={placement.origin[s]}")
    tree = " ".join(f"{u}-{v}" for u, v in sorted(plan.tree_edges)) or "(none)"
    lines.append(f"tree: {tree}")
    for s in sorted(plan.solutions):
        sol = plan.solutions[s]
        extra = (
            f"tau_ns={sol.tau_ns}" if sol.mode == "time" else f"packet_period={sol.packet_period}"
        )
        lines.append(
            f"period {s}: d_r_ns={sol.d_r_ns} worst_pair_ns={sol.worst_pair_delay_ns}"
            f" mode={sol.mode} {extra}"
        )
    return "\n".join(lines) + "\n"
