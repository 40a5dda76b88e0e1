"""Brute-force oracles and random topologies shared across test modules.

Everything here is written from the declared behaviour alone, by the
slowest most obvious method available, so the fast implementations have
an independent reference to be checked against.
"""

import itertools
from fractions import Fraction

from repdp import Link, Topology


def random_switch_topology(
    rng,
    n_switches,
    extra_edges=2,
    delay_choices=(200_000, 500_000, 1_000_000),
    capacity_bps=10_000_000,
):
    """Connected switch-only topology: random spanning tree plus extras."""
    names = [f"s{i}" for i in range(n_switches)]
    order = names[:]
    rng.shuffle(order)
    links = []
    used = set()
    for i in range(1, len(order)):
        a, b = order[rng.randrange(i)], order[i]
        key = (min(a, b), max(a, b))
        used.add(key)
        links.append(Link(key[0], key[1], rng.choice(delay_choices), capacity_bps))
    spare = [p for p in itertools.combinations(sorted(names), 2) if p not in used]
    rng.shuffle(spare)
    for a, b in spare[:extra_edges]:
        links.append(Link(a, b, rng.choice(delay_choices), capacity_bps))
    return Topology(names, (), links)


def all_shortest_paths(topo, u, v):
    """Every minimum-delay simple switch path from u to v, by exhaustive DFS."""
    best = None
    paths = []

    def walk(node, cost, seen, path):
        nonlocal best
        if best is not None and cost > best:
            return
        if node == v:
            if best is None or cost < best:
                best = cost
                paths.clear()
            if cost == best:
                paths.append(tuple(path))
            return
        for m in sorted(topo.adj[node]):
            if m in seen or not topo.is_switch(m):
                continue
            seen.add(m)
            path.append(m)
            walk(m, cost + topo.adj[node][m].delay_ns, seen, path)
            path.pop()
            seen.remove(m)

    walk(u, 0, {u}, [u])
    return paths


def brute_betweenness(topo, weights):
    """Endpoint-inclusive traffic-weighted betweenness by path enumeration."""
    load = {sw: float(weights.get(sw, 0.0)) for sw in topo.switches}
    for h in topo.hosts:
        w = float(weights.get(h, 0.0))
        if w:
            load[topo.attached_switch(h)] += w
    score = {sw: Fraction(0) for sw in topo.switches}
    sws = list(topo.switches)
    for i, u in enumerate(sws):
        for v in sws[i + 1 :]:
            w = load[u] + load[v]
            if w == 0:
                continue
            paths = all_shortest_paths(topo, u, v)
            wf = Fraction(w).limit_denominator(10**9)
            for n in sws:
                through = sum(1 for p in paths if n in p)
                if through:
                    score[n] += wf * Fraction(through, len(paths))
    return {sw: float(score[sw]) for sw in topo.switches}


def _induced_mst_cost(topo, nodes):
    """Kruskal over the induced subgraph; None when it is disconnected."""
    edges = sorted(
        (topo.adj[a][b].delay_ns, a, b)
        for a in nodes
        for b in topo.adj[a]
        if b in nodes and a < b
    )
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    cost, joined = 0, 0
    for d, a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            cost += d
            joined += 1
    return cost if joined == len(nodes) - 1 else None


def exact_steiner_cost(topo, terminals):
    """Optimal connecting-subtree cost by trying every helper-node subset.

    Any optimal tree spans its own node set, so taking the minimum
    induced-subgraph MST over all subsets of non-terminals is exact.
    Exponential, fine for the small graphs used in tests.
    """
    terms = sorted(set(terminals))
    if len(terms) <= 1:
        return 0
    others = [s for s in topo.switches if s not in set(terms)]
    best = None
    for r in range(len(others) + 1):
        for extra in itertools.combinations(others, r):
            cost = _induced_mst_cost(topo, set(terms) | set(extra))
            if cost is not None and (best is None or cost < best):
                best = cost
    return best


def tree_cost(topo, edges):
    return sum(topo.adj[u][v].delay_ns for u, v in edges)


def assert_valid_tree(topo, edges, terminals):
    """The edge set must be a real tree in the graph covering all terminals."""
    terms = sorted(set(terminals))
    if len(terms) <= 1:
        assert edges == frozenset()
        return
    nodes = {n for e in edges for n in e}
    assert set(terms) <= nodes
    for u, v in edges:
        assert v in topo.adj[u], f"edge {u}-{v} not in topology"
    assert len(edges) == len(nodes) - 1, "cycle or disconnection"
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        ru, rv = find(u), find(v)
        assert ru != rv, "cycle in tree"
        parent[ru] = rv
    roots = {find(n) for n in nodes}
    assert len(roots) == 1, "tree is disconnected"
