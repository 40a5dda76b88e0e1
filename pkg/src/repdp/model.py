"""Application model: replicated states, reductions, triggers and activities.

An application is declared as a set of named elements that form a DAG:
states are written by the dataplane, reductions combine state replicas
into network-wide values, triggers evaluate predicates over those values
under a declared inconsistency budget, and activities are the actions a
firing trigger applies to matching packets.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

from .errors import InvalidApplication

STATE_MAX_WIDTH_BITS = 64

# Sentinel egress index: steer matching packets up to the controller.
CONTROLLER_PORT = -1

# Element names must be addressable in wire registries and scenario files.
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class PortClass(enum.Enum):
    """Classification of a switch port, used by scope filters."""

    EXTERNAL = "external"
    UPLINK = "uplink"
    DOWNLINK = "downlink"
    ANY = "any"


class L4Match(enum.Enum):
    SYN_ONLY = "syn"
    ANY = "any"


@dataclass(frozen=True)
class ScopeFilter:
    """Selects the packets an element observes or acts on."""

    port_class: PortClass = PortClass.ANY
    l4: L4Match = L4Match.ANY
    dst_hosts: tuple[str, ...] | None = None

    def matches(self, port_class: PortClass, syn: bool, dst: str) -> bool:
        if self.port_class is not PortClass.ANY and port_class is not self.port_class:
            return False
        if self.l4 is L4Match.SYN_ONLY and not syn:
            return False
        if self.dst_hosts is not None and dst not in self.dst_hosts:
            return False
        return True

    def signature(self) -> str:
        """Stable text form; equal signatures mean the same packet set."""
        dst = "*" if self.dst_hosts is None else ",".join(sorted(self.dst_hosts))
        return f"{self.port_class.value}/{self.l4.value}/{dst}"


class ValueType(enum.Enum):
    COUNTER = "counter"
    RATE_ESTIMATE = "rate_estimate"
    SCALAR = "scalar"
    SCALAR_ARRAY = "scalar_array"


@dataclass(frozen=True)
class ValueKind:
    """What a state slot holds and how it is maintained.

    Rate estimates count either packets or bits per second, selected by
    `unit`; the distinction only matters to the switch feeding the
    estimator.
    """

    type: ValueType
    length: int = 1
    window: int = 8
    delta_s: float = 0.1
    unit: str = "packets"

    @classmethod
    def counter(cls) -> "ValueKind":
        return cls(ValueType.COUNTER)

    @classmethod
    def rate_estimate(
        cls, delta_s: float = 0.1, window: int = 8, unit: str = "packets"
    ) -> "ValueKind":
        """Windowed average over `window` slots of `delta_s` seconds each."""
        return cls(ValueType.RATE_ESTIMATE, window=window, delta_s=delta_s, unit=unit)

    @classmethod
    def scalar(cls) -> "ValueKind":
        return cls(ValueType.SCALAR)

    @classmethod
    def scalar_array(cls, length: int) -> "ValueKind":
        return cls(ValueType.SCALAR_ARRAY, length=length)


class InconsistencyKind(enum.Enum):
    NONE = "none"
    TIME_OBSOLESCENCE = "time_obsolescence"
    UPDATE_ERROR = "update_error"


@dataclass(frozen=True)
class InconsistencySpec:
    """Bound on how far replicas may drift from the true global value.

    TIME_OBSOLESCENCE bounds staleness to epsilon_t_s seconds.
    UPDATE_ERROR bounds the missed-update count to epsilon_r given a
    declared peak write rate; this induces a time budget
    epsilon_r / max_write_rate.
    """

    kind: InconsistencyKind
    epsilon_t_s: float | None = None
    epsilon_r: int | None = None
    max_write_rate: float | None = None

    @classmethod
    def none(cls) -> "InconsistencySpec":
        return cls(InconsistencyKind.NONE)

    @classmethod
    def time_obsolescence(cls, epsilon_t_s: float) -> "InconsistencySpec":
        return cls(InconsistencyKind.TIME_OBSOLESCENCE, epsilon_t_s=epsilon_t_s)

    @classmethod
    def update_error(cls, epsilon_r: int, max_write_rate: float) -> "InconsistencySpec":
        return cls(
            InconsistencyKind.UPDATE_ERROR,
            epsilon_r=epsilon_r,
            max_write_rate=max_write_rate,
        )

    def budget_s(self) -> float | None:
        """Propagation-delay budget in seconds, None when not replicated."""
        if self.kind is InconsistencyKind.TIME_OBSOLESCENCE:
            return self.epsilon_t_s
        if self.kind is InconsistencyKind.UPDATE_ERROR:
            return self.epsilon_r / self.max_write_rate
        return None

    def problems(self) -> list[str]:
        out = []
        if self.kind is InconsistencyKind.TIME_OBSOLESCENCE:
            if self.epsilon_t_s is None or self.epsilon_t_s <= 0:
                out.append("time_obsolescence requires epsilon_t_s > 0")
        elif self.kind is InconsistencyKind.UPDATE_ERROR:
            if self.epsilon_r is None or self.epsilon_r <= 0:
                out.append("update_error requires epsilon_r > 0")
            if self.max_write_rate is None or self.max_write_rate <= 0:
                out.append("update_error requires max_write_rate > 0")
        return out


class ReductionKind(enum.Enum):
    SUM = "sum"
    MEAN = "mean"
    MIN = "min"
    MAX = "max"
    ARGMIN = "argmin"
    ARGMAX = "argmax"
    MINMAX_ARGMIN = "minmax_argmin"
    IDENTITY = "identity"


@dataclass(frozen=True)
class StateSpec:
    """A dataplane-resident value replicated across the network."""

    name: str
    scope: ScopeFilter
    value: ValueKind
    width_bits: int = 32
    target_hint: str | None = None


@dataclass(frozen=True)
class ReductionSpec:
    """Combines inputs (states or other reductions) into one output."""

    output: str
    primitive: ReductionKind
    inputs: tuple[str, ...]


class PredicateKind(enum.Enum):
    GREATER_THAN = "greater_than"
    LESS_OR_EQUAL = "less_or_equal"
    PROBABILISTIC = "probabilistic"
    ALWAYS = "always"


@dataclass(frozen=True)
class Predicate:
    """Boolean test over a reduction output.

    PROBABILISTIC fires with probability max(0, (v - threshold) / v),
    the normalized excess over the threshold; the caller supplies the
    uniform draw so evaluation stays deterministic under a seeded RNG.
    """

    kind: PredicateKind
    threshold: float | None = None

    @classmethod
    def greater_than(cls, threshold: float) -> "Predicate":
        return cls(PredicateKind.GREATER_THAN, threshold)

    @classmethod
    def less_or_equal(cls, threshold: float) -> "Predicate":
        return cls(PredicateKind.LESS_OR_EQUAL, threshold)

    @classmethod
    def probabilistic(cls, threshold: float) -> "Predicate":
        return cls(PredicateKind.PROBABILISTIC, threshold)

    @classmethod
    def always(cls) -> "Predicate":
        return cls(PredicateKind.ALWAYS)

    def fire_probability(self, value: float) -> float:
        if self.kind is not PredicateKind.PROBABILISTIC:
            raise ValueError("fire_probability is only defined for PROBABILISTIC")
        if value <= 0:
            return 0.0
        return max(0.0, (value - self.threshold) / value)

    def evaluate(self, value: float, uniform01: float | None = None) -> bool:
        if self.kind is PredicateKind.GREATER_THAN:
            return value > self.threshold
        if self.kind is PredicateKind.LESS_OR_EQUAL:
            return value <= self.threshold
        if self.kind is PredicateKind.ALWAYS:
            return True
        if uniform01 is None:
            raise ValueError("PROBABILISTIC predicate needs a uniform draw")
        return uniform01 < self.fire_probability(value)


@dataclass(frozen=True)
class TriggerSpec:
    """Watches one reduction output and fires an activity.

    `input` may name a state directly; DAG construction inserts an
    identity reduction so every trigger formally reads a reduction.
    The inconsistency budget declared here applies to every state
    upstream of the trigger.
    """

    name: str
    input: str
    predicate: Predicate
    inconsistency: InconsistencySpec
    activity: str


class ActionKind(enum.Enum):
    NOTIFY_CONTROLLER = "notify_controller"
    DROP_PACKET = "drop_packet"
    SET_EGRESS = "set_egress"
    INSERT_FLOW_RULE = "insert_flow_rule"


@dataclass(frozen=True)
class ActivitySpec:
    """Action applied to packets matching `scope` while the trigger holds.

    NOTIFY_CONTROLLER sends `message` once per false->true transition.
    SET_EGRESS and INSERT_FLOW_RULE read the path choice from the
    reduction output named by `selector`, or use the fixed port index
    `selector_const` (e.g. CONTROLLER_PORT). Activities sharing a
    `sequential_group` must be embedded on one switch; the compiler
    merges their colocation groups.
    """

    name: str
    action: ActionKind
    scope: ScopeFilter = field(default_factory=ScopeFilter)
    message: str | None = None
    selector: str | None = None
    selector_const: int | None = None
    sequential_group: str | None = None


@dataclass(frozen=True)
class ApplicationSpec:
    name: str
    states: tuple[StateSpec, ...]
    reductions: tuple[ReductionSpec, ...]
    triggers: tuple[TriggerSpec, ...]
    activities: tuple[ActivitySpec, ...]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_application(app: ApplicationSpec) -> ValidationReport:
    """Check naming, references, arity and budget declarations."""
    rep = ValidationReport()
    bad = rep.violations

    names: dict[str, str] = {}
    for kind, elems in (
        ("state", app.states),
        ("reduction", app.reductions),
        ("trigger", app.triggers),
        ("activity", app.activities),
    ):
        for e in elems:
            name = e.output if kind == "reduction" else e.name
            if not _NAME_RE.match(name):
                bad.append(f"{kind} name {name!r} is not a valid identifier")
            if name in names:
                bad.append(f"name {name!r} used by both {names[name]} and {kind}")
            names[name] = kind

    if not _NAME_RE.match(app.name):
        bad.append(f"application name {app.name!r} is not a valid identifier")

    state_names = {s.name for s in app.states}
    reduction_names = {r.output for r in app.reductions}
    activity_names = {a.name for a in app.activities}

    for s in app.states:
        if not 1 <= s.width_bits <= STATE_MAX_WIDTH_BITS:
            bad.append(
                f"state {s.name}: width {s.width_bits} outside"
                f" [1, {STATE_MAX_WIDTH_BITS}]"
            )
        if s.value.type is ValueType.SCALAR_ARRAY and s.value.length < 1:
            bad.append(f"state {s.name}: array length must be >= 1")
        if s.value.type is ValueType.RATE_ESTIMATE:
            w = s.value.window
            if w < 1 or w & (w - 1):
                bad.append(f"state {s.name}: estimator window {w} not a power of two")
            if s.value.delta_s <= 0:
                bad.append(f"state {s.name}: estimator slot width must be > 0")

    for r in app.reductions:
        if not r.inputs:
            bad.append(f"reduction {r.output}: no inputs")
        for src in r.inputs:
            if src not in state_names and src not in reduction_names:
                bad.append(f"reduction {r.output}: unknown input {src!r}")
        if r.primitive is ReductionKind.IDENTITY and len(r.inputs) != 1:
            bad.append(f"reduction {r.output}: identity takes exactly one input")
        if r.primitive is ReductionKind.MINMAX_ARGMIN and len(r.inputs) % 2:
            bad.append(
                f"reduction {r.output}: minmax_argmin pairs inputs, needs an even count"
            )

    # Cycle check over the reduction-to-reduction references.
    dep = {r.output: [i for i in r.inputs if i in reduction_names] for r in app.reductions}
    seen: dict[str, int] = {}

    def visit(node: str) -> bool:
        mark = seen.get(node, 0)
        if mark == 1:
            return False
        if mark == 2:
            return True
        seen[node] = 1
        ok = all(visit(d) for d in dep[node])
        seen[node] = 2
        return ok

    for out in dep:
        if not visit(out):
            bad.append(f"reduction {out}: part of a reference cycle")
            break

    for t in app.triggers:
        if t.input not in state_names and t.input not in reduction_names:
            bad.append(f"trigger {t.name}: unknown input {t.input!r}")
        if t.activity not in activity_names:
            bad.append(f"trigger {t.name}: unknown activity {t.activity!r}")
        if t.predicate.kind in (
            PredicateKind.GREATER_THAN,
            PredicateKind.LESS_OR_EQUAL,
            PredicateKind.PROBABILISTIC,
        ):
            thr = t.predicate.threshold
            if thr is None:
                bad.append(f"trigger {t.name}: predicate needs a threshold")
            elif not math.isfinite(thr):
                bad.append(f"trigger {t.name}: threshold must be finite")
        for p in t.inconsistency.problems():
            bad.append(f"trigger {t.name}: {p}")

    for a in app.activities:
        if a.action is ActionKind.NOTIFY_CONTROLLER and not a.message:
            bad.append(f"activity {a.name}: notify_controller needs a message")
        if a.action is ActionKind.SET_EGRESS:
            if (a.selector is None) == (a.selector_const is None):
                bad.append(
                    f"activity {a.name}: set_egress needs exactly one of"
                    f" selector / selector_const"
                )
            elif a.selector is not None and a.selector not in reduction_names:
                bad.append(f"activity {a.name}: unknown selector {a.selector!r}")
        if a.action is ActionKind.INSERT_FLOW_RULE:
            if a.selector is None:
                bad.append(f"activity {a.name}: insert_flow_rule needs a selector")
            elif a.selector not in reduction_names:
                bad.append(f"activity {a.name}: unknown selector {a.selector!r}")

    fired = {t.activity for t in app.triggers}
    for a in app.activities:
        if a.name not in fired:
            rep.warnings.append(f"activity {a.name} is never fired by a trigger")
    read = {i for r in app.reductions for i in r.inputs} | {t.input for t in app.triggers}
    for s in app.states:
        if s.name not in read:
            rep.warnings.append(f"state {s.name} is never read")

    return rep


IDENTITY_SUFFIX = "__id"


@dataclass
class ElementDag:
    """Layered DAG over application elements.

    Node kinds are "state", "reduction", "trigger", "activity"; edges
    run state -> reduction -> (reduction ->) trigger -> activity.
    `reductions` includes identity reductions synthesized for triggers
    that named a state directly.
    """

    app: ApplicationSpec
    nodes: dict[str, str]
    edges: tuple[tuple[str, str], ...]
    reductions: dict[str, ReductionSpec]
    trigger_inputs: dict[str, str]

    def predecessors(self, name: str) -> list[str]:
        return [u for (u, v) in self.edges if v == name]

    def successors(self, name: str) -> list[str]:
        return [v for (u, v) in self.edges if u == name]

    def topo_order(self) -> list[str]:
        """Deterministic topological order (declaration order among peers)."""
        indeg = {n: 0 for n in self.nodes}
        for _, v in self.edges:
            indeg[v] += 1
        order = []
        ready = [n for n in self.nodes if indeg[n] == 0]
        while ready:
            n = ready.pop(0)
            order.append(n)
            for v in self.successors(n):
                indeg[v] -= 1
                if indeg[v] == 0:
                    ready.append(v)
        if len(order) != len(self.nodes):
            raise InvalidApplication(["element graph contains a cycle"])
        return order

    def upstream_states(self, trigger: str) -> list[str]:
        """States transitively feeding `trigger`, in declaration order."""
        seen: set[str] = set()
        stack = [trigger]
        while stack:
            n = stack.pop()
            for p in self.predecessors(n):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return [s.name for s in self.app.states if s.name in seen]


def build_dag(app: ApplicationSpec) -> ElementDag:
    """Validate `app` and lay its elements out as a DAG.

    Raises InvalidApplication when validation reports violations.
    """
    report = validate_application(app)
    if not report.ok:
        raise InvalidApplication(report.violations)

    nodes: dict[str, str] = {}
    for s in app.states:
        nodes[s.name] = "state"
    reductions = {r.output: r for r in app.reductions}

    # Triggers may read a state directly; insert an identity reduction so
    # the layering (state -> reduction -> trigger) holds for every path.
    trigger_inputs: dict[str, str] = {}
    state_names = {s.name for s in app.states}
    for t in app.triggers:
        if t.input in state_names:
            ident = t.input + IDENTITY_SUFFIX
            if ident not in reductions:
                reductions[ident] = ReductionSpec(
                    output=ident,
                    primitive=ReductionKind.IDENTITY,
                    inputs=(t.input,),
                )
            trigger_inputs[t.name] = ident
        else:
            trigger_inputs[t.name] = t.input

    for out in reductions:
        nodes[out] = "reduction"
    for t in app.triggers:
        nodes[t.name] = "trigger"
    for a in app.activities:
        nodes[a.name] = "activity"

    edges: list[tuple[str, str]] = []
    for r in reductions.values():
        for src in r.inputs:
            edges.append((src, r.output))
    for t in app.triggers:
        edges.append((trigger_inputs[t.name], t.name))
        edges.append((t.name, t.activity))

    return ElementDag(
        app=app,
        nodes=nodes,
        edges=tuple(edges),
        reductions=reductions,
        trigger_inputs=trigger_inputs,
    )


def replication_requirements(dag: ElementDag) -> dict[str, InconsistencySpec]:
    """Map each state to its effective inconsistency budget.

    A state consumed by several triggers inherits the strictest budget
    (smallest time allowance); a state only consumed by budget-free
    triggers stays unreplicated.
    """
    out: dict[str, InconsistencySpec] = {}
    for s in dag.app.states:
        out[s.name] = InconsistencySpec.none()
    for t in dag.app.triggers:
        spec = t.inconsistency
        if spec.kind is InconsistencyKind.NONE:
            continue
        for sname in dag.upstream_states(t.name):
            cur = out[sname]
            if cur.kind is InconsistencyKind.NONE or spec.budget_s() < cur.budget_s():
                out[sname] = spec
    return out
