"""Compilation of an application DAG into a switch-level primitive program.

The output is a flat list of data structures (registers, counters,
circular buffers) plus primitive operations in topological order, with
colocation groups tying each trigger to the ops it must share a switch
with. Scalar arrays are expanded element-wise so every wire-level state
fits one 64-bit update value; rate estimates expand to a slot buffer
feeding an estimate register, and only the register is replicated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import RegistryExhausted, UnsupportedPrimitive
from .model import (
    ActionKind,
    ApplicationSpec,
    ElementDag,
    PredicateKind,
    ReductionKind,
    ScopeFilter,
    StateSpec,
    ValueType,
)

MAX_STATE_ID = 2**32 - 1

DEFAULT_CAPABILITIES = frozenset(
    {
        "register",
        "counter",
        "circular_buffer",
        "sum",
        "shift",
        "min",
        "max",
        "argmin",
        "argmax",
        "minmax_argmin",
        "identity",
        "greater_than",
        "less_or_equal",
        "probabilistic",
        "always",
        "notify_controller",
        "drop_packet",
        "set_egress",
        "insert_flow_rule",
    }
)

_WRITE_OPCODE = {
    ValueType.COUNTER: "count",
    ValueType.RATE_ESTIMATE: "estimate_rate",
    ValueType.SCALAR: "store",
    ValueType.SCALAR_ARRAY: "store",
}

_STRUCTURE_FOR = {
    ValueType.COUNTER: "counter",
    ValueType.RATE_ESTIMATE: "register",
    ValueType.SCALAR: "register",
    ValueType.SCALAR_ARRAY: "register",
}


@dataclass
class CompiledState:
    """One wire-addressable replicated value."""

    name: str
    source: str
    element: int
    scope: ScopeFilter
    width_bits: int
    value_type: ValueType
    window: int
    delta_s: float
    unit: str
    target_hint: str | None
    state_id: int | None = None


@dataclass(frozen=True)
class DataStructure:
    name: str
    kind: str
    width_bits: int
    slots: int = 1


@dataclass(frozen=True)
class PrimitiveOp:
    op_id: int
    opcode: str
    operands: tuple[str, ...]
    output: str | None = None
    params: tuple[tuple[str, object], ...] = ()

    def param(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default


@dataclass
class PrimitiveProgram:
    app_name: str
    states: list[CompiledState]
    structures: list[DataStructure]
    ops: list[PrimitiveOp]
    groups: list[frozenset[int]]
    state_index: dict[str, CompiledState] = field(default_factory=dict)

    def __post_init__(self):
        if not self.state_index:
            self.state_index = {s.name: s for s in self.states}

    def states_of(self, source: str) -> list[CompiledState]:
        return [s for s in self.states if s.source == source]


def _require(cap: str, capabilities: frozenset, element: str):
    if cap not in capabilities:
        raise UnsupportedPrimitive(f"{element}: target lacks primitive {cap!r}")


def expand_states(app: ApplicationSpec) -> list[CompiledState]:
    """Wire-level states in declaration order, arrays element-expanded."""
    out = []
    for s in app.states:
        n = s.value.length if s.value.type is ValueType.SCALAR_ARRAY else 1
        for k in range(n):
            name = s.name if n == 1 else f"{s.name}_{k}"
            out.append(
                CompiledState(
                    name=name,
                    source=s.name,
                    element=k,
                    scope=s.scope,
                    width_bits=s.width_bits,
                    value_type=s.value.type,
                    window=s.value.window,
                    delta_s=s.value.delta_s,
                    unit=s.value.unit,
                    target_hint=s.target_hint,
                )
            )
    return out


def compile_application(
    dag: ElementDag, capabilities: frozenset = DEFAULT_CAPABILITIES
) -> PrimitiveProgram:
    """Lower a validated DAG onto the primitive set in `capabilities`.

    Raises UnsupportedPrimitive when an element needs a missing
    primitive, including Mean over a non power-of-two input count
    (Mean lowers to Sum plus a right shift).
    """
    app = dag.app
    states = expand_states(app)

    structures: list[DataStructure] = []
    ops: list[PrimitiveOp] = []
    op_of: dict[str, int] = {}

    def emit(opcode, operands, output=None, params=()):
        op = PrimitiveOp(len(ops), opcode, tuple(operands), output, tuple(params))
        ops.append(op)
        if output is not None:
            op_of[output] = op.op_id
        return op

    for cs in states:
        kind = _STRUCTURE_FOR[cs.value_type]
        _require(kind, capabilities, f"state {cs.source}")
        if cs.value_type is ValueType.RATE_ESTIMATE:
            _require("circular_buffer", capabilities, f"state {cs.source}")
            structures.append(
                DataStructure(cs.name + "__slots", "circular_buffer", cs.width_bits, cs.window)
            )
        structures.append(DataStructure(cs.name, kind, cs.width_bits))
        opcode = _WRITE_OPCODE[cs.value_type]
        if cs.value_type is ValueType.RATE_ESTIMATE:
            emit(
                opcode,
                (cs.name + "__slots",),
                cs.name,
                (("window", cs.window), ("delta_s", cs.delta_s)),
            )
        else:
            emit(opcode, (), cs.name)

    expanded_inputs: dict[str, tuple[str, ...]] = {}
    source_names = {s.name for s in app.states}
    by_source: dict[str, list[str]] = {}
    for cs in states:
        by_source.setdefault(cs.source, []).append(cs.name)

    def wire_inputs(names):
        out = []
        for n in names:
            if n in source_names:
                out.extend(by_source[n])
            else:
                out.append(n)
        return tuple(out)

    # Reductions in topological order (the dag order is already layered).
    topo = dag.topo_order()
    for node in topo:
        if dag.nodes[node] != "reduction":
            continue
        r = dag.reductions[node]
        inputs = wire_inputs(r.inputs)
        expanded_inputs[node] = inputs
        prim = r.primitive
        if prim is ReductionKind.MEAN:
            _require("sum", capabilities, f"reduction {r.output}")
            _require("shift", capabilities, f"reduction {r.output}")
            n = len(inputs)
            if n < 1 or n & (n - 1):
                raise UnsupportedPrimitive(
                    f"reduction {r.output}: mean lowers to sum+shift and needs a"
                    f" power-of-two input count, got {n}"
                )
            emit("sum", inputs, r.output + "__sum")
            emit(
                "shift",
                (r.output + "__sum",),
                r.output,
                (("shift", n.bit_length() - 1),),
            )
        else:
            _require(prim.value, capabilities, f"reduction {r.output}")
            emit(prim.value, inputs, r.output)

    activities = {a.name: a for a in app.activities}
    groups: list[frozenset[int]] = []
    for t in app.triggers:
        red = dag.trigger_inputs[t.name]
        _require(t.predicate.kind.value, capabilities, f"trigger {t.name}")
        params = []
        if t.predicate.threshold is not None:
            params.append(("threshold", t.predicate.threshold))
        trig_op = emit(t.predicate.kind.value, (red,), t.name, params)

        a = activities[t.activity]
        _require(a.action.value, capabilities, f"activity {a.name}")
        aparams = [("activity", a.name)]
        if a.message is not None:
            aparams.append(("message", a.message))
        if a.selector is not None:
            aparams.append(("selector", a.selector))
        if a.selector_const is not None:
            aparams.append(("selector_const", a.selector_const))
        act_op = emit(a.action.value, (t.name,), None, aparams)

        # The trigger, its activity and the reduction chain below it must
        # land on the same switch.
        group = {trig_op.op_id, act_op.op_id}
        stack = [red]
        while stack:
            name = stack.pop()
            if name in op_of:
                group.add(op_of[name])
                if name + "__sum" in op_of:
                    group.add(op_of[name + "__sum"])
            if name in expanded_inputs:
                for src in expanded_inputs[name]:
                    stack.append(src)
            elif name in dag.reductions:
                for src in dag.reductions[name].inputs:
                    stack.append(src)
        groups.append(frozenset(group))

    # Activities sharing a sequential_group pull their trigger groups
    # together onto one switch.
    by_seq: dict[str, list[int]] = {}
    for gi, t in enumerate(app.triggers):
        seq = activities[t.activity].sequential_group
        if seq is not None:
            by_seq.setdefault(seq, []).append(gi)
    if by_seq:
        merged_away: set[int] = set()
        for indices in by_seq.values():
            if len(indices) < 2:
                continue
            union = frozenset().union(*(groups[i] for i in indices))
            groups[indices[0]] = union
            merged_away.update(indices[1:])
        groups = [g for i, g in enumerate(groups) if i not in merged_away]

    return PrimitiveProgram(app.name, states, structures, ops, groups)


class StateIdRegistry:
    """Issues globally unique 32-bit state ids, shared across applications.

    Ids are dense from zero in assignment order; a (name, scope) pair
    seen again (another app declaring the same shared state) receives
    its existing id.
    """

    def __init__(self):
        self._ids: dict[tuple[str, str], int] = {}

    def assign(self, name: str, scope: ScopeFilter) -> int:
        key = (name, scope.signature())
        if key in self._ids:
            return self._ids[key]
        nxt = len(self._ids)
        if nxt > MAX_STATE_ID:
            raise RegistryExhausted(f"no state ids left for {name}")
        self._ids[key] = nxt
        return nxt

    def lookup(self, name: str, scope: ScopeFilter) -> int | None:
        return self._ids.get((name, scope.signature()))

    def __len__(self):
        return len(self._ids)


def assign_state_ids(program: PrimitiveProgram, registry: StateIdRegistry) -> None:
    """Fix wire ids for every compiled state, in declaration order."""
    for cs in program.states:
        cs.state_id = registry.assign(cs.name, cs.scope)


def canonical_text(program: PrimitiveProgram) -> str:
    """Stable one-line-per-item dump used for golden comparisons."""
    lines = [f"program {program.app_name}"]
    for cs in program.states:
        sid = "?" if cs.state_id is None else str(cs.state_id)
        lines.append(
            f"state {sid} {cs.name} {cs.value_type.value}"
            f" width={cs.width_bits} scope={cs.scope.signature()}"
        )
    for d in program.structures:
        extra = f" slots={d.slots}" if d.slots != 1 else ""
        lines.append(f"struct {d.name} {d.kind} width={d.width_bits}{extra}")
    for op in program.ops:
        out = f" -> {op.output}" if op.output else ""
        params = "".join(f" {k}={v}" for k, v in op.params)
        operands = ",".join(op.operands)
        lines.append(f"op {op.op_id} {op.opcode}({operands}){out}{params}")
    for g in program.groups:
        lines.append("group {" + ",".join(str(i) for i in sorted(g)) + "}")
    return "\n".join(lines) + "\n"


def apply_reduction(kind: ReductionKind, values, exact_mean: bool = False) -> int:
    """Integer semantics of each reduction primitive.

    Mean floors (sum then right shift); argmin/argmax break ties toward
    the lowest index; minmax_argmin pairs input i with input i + n/2 and
    returns the index minimizing the pairwise max. `exact_mean` allows
    floor division for any input count (direct evaluation of apps the
    switch lowering would reject).
    """
    vals = list(values)
    if kind is ReductionKind.SUM:
        return sum(vals)
    if kind is ReductionKind.MEAN:
        n = len(vals)
        if exact_mean:
            return sum(vals) // n
        assert n and not n & (n - 1), "mean needs a power-of-two count"
        return sum(vals) >> (n.bit_length() - 1)
    if kind is ReductionKind.MIN:
        return min(vals)
    if kind is ReductionKind.MAX:
        return max(vals)
    if kind is ReductionKind.ARGMIN:
        return min(range(len(vals)), key=lambda i: (vals[i], i))
    if kind is ReductionKind.ARGMAX:
        return min(range(len(vals)), key=lambda i: (-vals[i], i))
    if kind is ReductionKind.MINMAX_ARGMIN:
        half = len(vals) // 2
        pair = [max(vals[i], vals[half + i]) for i in range(half)]
        return min(range(half), key=lambda i: (pair[i], i))
    if kind is ReductionKind.IDENTITY:
        return vals[0]
    raise UnsupportedPrimitive(str(kind))


_OPCODE_REDUCTION = {
    "sum": ReductionKind.SUM,
    "min": ReductionKind.MIN,
    "max": ReductionKind.MAX,
    "argmin": ReductionKind.ARGMIN,
    "argmax": ReductionKind.ARGMAX,
    "minmax_argmin": ReductionKind.MINMAX_ARGMIN,
    "identity": ReductionKind.IDENTITY,
}


@dataclass
class ProgramResult:
    outputs: dict[str, int]
    fires: dict[str, bool]
    actions: list[tuple[str, str, object]]


def evaluate_program(
    program: PrimitiveProgram,
    state_values: dict[str, int],
    uniform01: float | None = None,
) -> ProgramResult:
    """Interpret a compiled program over concrete wire-state values.

    Serves as the executable semantics: tests compare it against direct
    evaluation of the application definition.
    """
    env: dict[str, int] = dict(state_values)
    fires: dict[str, bool] = {}
    actions: list[tuple[str, str, object]] = []
    for op in program.ops:
        if op.opcode in ("count", "estimate_rate", "store"):
            env.setdefault(op.output, 0)
        elif op.opcode in _OPCODE_REDUCTION:
            kind = _OPCODE_REDUCTION[op.opcode]
            env[op.output] = apply_reduction(kind, [env[x] for x in op.operands])
        elif op.opcode == "shift":
            env[op.output] = env[op.operands[0]] >> op.param("shift")
        elif op.opcode == "greater_than":
            env[op.output] = int(env[op.operands[0]] > op.param("threshold"))
            fires[op.output] = bool(env[op.output])
        elif op.opcode == "less_or_equal":
            env[op.output] = int(env[op.operands[0]] <= op.param("threshold"))
            fires[op.output] = bool(env[op.output])
        elif op.opcode == "always":
            env[op.output] = 1
            fires[op.output] = True
        elif op.opcode == "probabilistic":
            v = env[op.operands[0]]
            thr = op.param("threshold")
            p = 0.0 if v <= 0 else max(0.0, (v - thr) / v)
            fired = uniform01 is not None and uniform01 < p
            env[op.output] = int(fired)
            fires[op.output] = fired
        elif op.opcode in ("notify_controller", "drop_packet", "set_egress", "insert_flow_rule"):
            if env[op.operands[0]]:
                detail = op.param("message")
                if op.param("selector") is not None:
                    detail = env[op.param("selector")]
                elif op.param("selector_const") is not None:
                    detail = op.param("selector_const")
                actions.append((op.opcode, op.operands[0], detail))
        else:
            raise UnsupportedPrimitive(f"op {op.op_id}: {op.opcode}")
    return ProgramResult(env, fires, actions)


def evaluate_dag(dag, state_values: dict[str, int], uniform01: float | None = None) -> ProgramResult:
    """Reference semantics: evaluate the application DAG directly.

    Mean here is exact floor division over any input count; the lowered
    program agrees wherever it compiles (power-of-two counts). Array
    states take their value as a list, matching the program's
    element-expanded wire states. Used to check that lowering preserves
    semantics.
    """
    env: dict[str, int] = dict(state_values)
    fires: dict[str, bool] = {}
    actions: list[tuple[str, str, object]] = []
    order = dag.topo_order()
    activities = {a.name: a for a in dag.app.activities}
    triggers = {t.name: t for t in dag.app.triggers}
    for node in order:
        kind = dag.nodes[node]
        if kind == "reduction":
            r = dag.reductions[node]
            vals: list[int] = []
            for i in r.inputs:
                v = env[i]
                if isinstance(v, (list, tuple)):
                    vals.extend(v)
                else:
                    vals.append(v)
            env[node] = apply_reduction(r.primitive, vals, exact_mean=True)
        elif kind == "trigger":
            t = triggers[node]
            value = env[dag.trigger_inputs[node]]
            if t.predicate.kind.value == "probabilistic":
                fired = (
                    uniform01 is not None
                    and uniform01 < t.predicate.fire_probability(value)
                )
            else:
                fired = t.predicate.evaluate(value)
            fires[node] = fired
            env[node] = int(fired)
        elif kind == "activity":
            pass
    for t in dag.app.triggers:
        if fires[t.name]:
            a = activities[t.activity]
            detail = a.message
            if a.selector is not None:
                detail = env[a.selector]
            elif a.selector_const is not None:
                detail = a.selector_const
            actions.append((a.action.value, t.name, detail))
    return ProgramResult(env, fires, actions)
