"""Typed DAG representation of a mining pipeline.

A plan is data, not code: six node kinds wired into an acyclic graph with one
Source and one Output. Parsing is purely structural (shape and enums, with
JSON-pointer paths in errors); semantic checks (references, types, cycles) are
collected into a ValidationReport rather than raised, so a planner repair loop
can read them back. Canonicalization renames nodes to a deterministic
topological order so behaviorally identical plans serialize byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

from .errors import EmptyInstruction, InvalidPlan, SchemaError

PLAN_VERSION = "plan-v1"
NODE_KINDS = frozenset({"Source", "Label", "Span", "Bool", "Filter", "Output"})
BOOL_OPS = frozenset({"And", "Or", "Not"})

# What each kind produces per record, for edge type-checking.
VALUE_KINDS = {
    "Source": "records",
    "Filter": "records",
    "Label": "boolean",
    "Bool": "boolean",
    "Span": "spans",
    "Output": "sink",
}

_SLOT_RE = re.compile(r"\{([^{}]+)\}")


@dataclass(frozen=True)
class InstructionTemplate:
    template: str
    bindings: Mapping[str, str] = field(default_factory=dict)

    def slots(self) -> list[str]:
        """Placeholder names in order of first appearance."""
        seen: list[str] = []
        for m in _SLOT_RE.finditer(self.template):
            if m.group(1) not in seen:
                seen.append(m.group(1))
        return seen

    def render(self, values: Mapping[str, str]) -> str:
        def sub(m: re.Match[str]) -> str:
            return values[m.group(1)]

        return _SLOT_RE.sub(sub, self.template)


@dataclass(frozen=True)
class OutputField:
    name: str
    node: str


@dataclass(frozen=True)
class PlanNode:
    id: str
    kind: str
    instruction: InstructionTemplate | None = None
    input: str | None = None
    op: str | None = None
    inputs: tuple[str, ...] | None = None
    predicate: str | None = None
    fields: tuple[OutputField, ...] | None = None

    def refs(self) -> list[str]:
        """Every node id this node depends on (evaluation order edges)."""
        out: list[str] = []
        if self.input is not None:
            out.append(self.input)
        if self.predicate is not None:
            out.append(self.predicate)
        if self.inputs is not None:
            out.extend(self.inputs)
        if self.instruction is not None:
            out.extend(self.instruction.bindings.values())
        if self.fields is not None:
            out.extend(f.node for f in self.fields)
        return out


@dataclass(frozen=True)
class Plan:
    version: str
    nodes: tuple[PlanNode, ...]
    output: str
    provenance: str | None = None

    def node(self, node_id: str) -> PlanNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def __iter__(self) -> Iterator[PlanNode]:
        return iter(self.nodes)

    def to_dict(self, include_provenance: bool = True) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "version": self.version,
            "nodes": [_node_to_dict(n) for n in self.nodes],
            "output": self.output,
        }
        if include_provenance and self.provenance is not None:
            doc["provenance"] = self.provenance
        return doc

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True, ensure_ascii=False)


@dataclass(frozen=True)
class Violation:
    kind: str
    node_id: str | None
    detail: str

    def render(self) -> str:
        where = f" [{self.node_id}]" if self.node_id else ""
        return f"{self.kind}{where}: {self.detail}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def render(self) -> str:
        if self.ok:
            return "plan is valid"
        return "\n".join(v.render() for v in self.violations)


# --- parsing -----------------------------------------------------------------


def _expect_str(value: Any, path: str, allow_empty: bool = False) -> str:
    if not isinstance(value, str) or (not allow_empty and not value):
        raise SchemaError(path, "expected a non-empty string")
    return value


def _parse_instruction(value: Any, path: str) -> InstructionTemplate:
    if isinstance(value, str):
        return InstructionTemplate(template=value)
    if not isinstance(value, dict):
        raise SchemaError(path, "expected a string or an object")
    unknown = set(value) - {"template", "bindings"}
    if unknown:
        raise SchemaError(f"{path}/{sorted(unknown)[0]}", "unexpected field")
    if "template" not in value:
        raise SchemaError(f"{path}/template", "missing field")
    template = value["template"]
    if not isinstance(template, str):
        raise SchemaError(f"{path}/template", "expected a string")
    bindings = value.get("bindings", {})
    if not isinstance(bindings, dict):
        raise SchemaError(f"{path}/bindings", "expected an object")
    for slot, target in bindings.items():
        if not isinstance(target, str) or not target:
            raise SchemaError(f"{path}/bindings/{slot}", "expected a node id string")
    return InstructionTemplate(template=template, bindings=dict(bindings))


_REQUIRED_FIELDS = {
    "Source": set(),
    "Label": {"instruction", "input"},
    "Span": {"instruction", "input"},
    "Bool": {"op", "inputs"},
    "Filter": {"predicate", "input"},
    "Output": {"fields"},
}


def _parse_node(obj: Any, path: str) -> PlanNode:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    node_id = _expect_str(obj.get("id"), f"{path}/id")
    kind = obj.get("kind")
    if kind not in NODE_KINDS:
        raise SchemaError(f"{path}/kind", "unknown kind")
    required = _REQUIRED_FIELDS[kind]
    unknown = set(obj) - required - {"id", "kind"}
    if unknown:
        raise SchemaError(f"{path}/{sorted(unknown)[0]}", "unexpected field")
    missing = required - set(obj)
    if missing:
        raise SchemaError(f"{path}/{sorted(missing)[0]}", "missing field")

    if kind == "Source":
        return PlanNode(id=node_id, kind=kind)
    if kind in ("Label", "Span"):
        return PlanNode(
            id=node_id,
            kind=kind,
            instruction=_parse_instruction(obj["instruction"], f"{path}/instruction"),
            input=_expect_str(obj["input"], f"{path}/input"),
        )
    if kind == "Bool":
        if obj["op"] not in BOOL_OPS:
            raise SchemaError(f"{path}/op", "unknown op")
        inputs = obj["inputs"]
        if not isinstance(inputs, list):
            raise SchemaError(f"{path}/inputs", "expected a list")
        parsed = tuple(
            _expect_str(x, f"{path}/inputs/{i}") for i, x in enumerate(inputs)
        )
        return PlanNode(id=node_id, kind=kind, op=obj["op"], inputs=parsed)
    if kind == "Filter":
        return PlanNode(
            id=node_id,
            kind=kind,
            predicate=_expect_str(obj["predicate"], f"{path}/predicate"),
            input=_expect_str(obj["input"], f"{path}/input"),
        )
    # Output
    fields = obj["fields"]
    if not isinstance(fields, list):
        raise SchemaError(f"{path}/fields", "expected a list")
    parsed_fields = []
    for i, f in enumerate(fields):
        if not isinstance(f, dict):
            raise SchemaError(f"{path}/fields/{i}", "expected an object")
        extra = set(f) - {"name", "node"}
        if extra:
            raise SchemaError(f"{path}/fields/{i}/{sorted(extra)[0]}", "unexpected field")
        name = f.get("name")
        if not isinstance(name, str):
            raise SchemaError(f"{path}/fields/{i}/name", "expected a string")
        parsed_fields.append(
            OutputField(name=name, node=_expect_str(f.get("node"), f"{path}/fields/{i}/node"))
        )
    return PlanNode(id=node_id, kind=kind, fields=tuple(parsed_fields))


def parse_plan(document: str | bytes | dict[str, Any]) -> Plan:
    """Structurally parse a plan document. Semantic checks live in validate_plan."""
    if isinstance(document, (str, bytes)):
        try:
            obj = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("", f"invalid JSON: {exc.msg}") from None
    else:
        obj = document
    if not isinstance(obj, dict):
        raise SchemaError("", "expected a JSON object")
    unknown = set(obj) - {"version", "nodes", "output", "provenance"}
    if unknown:
        raise SchemaError(f"/{sorted(unknown)[0]}", "unexpected field")
    version = obj.get("version")
    if version != PLAN_VERSION:
        raise SchemaError("/version", f'expected "{PLAN_VERSION}"')
    nodes = obj.get("nodes")
    if not isinstance(nodes, list):
        raise SchemaError("/nodes", "expected a list")
    parsed = tuple(_parse_node(n, f"/nodes/{i}") for i, n in enumerate(nodes))
    output = _expect_str(obj.get("output"), "/output")
    provenance = obj.get("provenance")
    if provenance is not None and not isinstance(provenance, str):
        raise SchemaError("/provenance", "expected a string or null")
    return Plan(version=version, nodes=parsed, output=output, provenance=provenance)


# --- validation ----------------------------------------------------------------


def validate_plan(plan: Plan) -> ValidationReport:
    """Collect every semantic violation; an empty report means executable."""
    v: list[Violation] = []
    by_id: dict[str, PlanNode] = {}
    for node in plan.nodes:
        if node.id in by_id:
            v.append(Violation("duplicate-id", node.id, "node id defined more than once"))
        else:
            by_id[node.id] = node

    def check_ref(node: PlanNode, ref: str, expected: str, what: str) -> None:
        target = by_id.get(ref)
        if target is None:
            v.append(Violation("dangling-ref", node.id, f"{what} references unknown node {ref!r}"))
            return
        found = VALUE_KINDS[target.kind]
        if found != expected:
            v.append(
                Violation(
                    "type-mismatch",
                    node.id,
                    f"{what} expects a {expected}-valued node, {ref!r} yields {found}",
                )
            )

    sources = [n for n in plan.nodes if n.kind == "Source"]
    sinks = [n for n in plan.nodes if n.kind == "Output"]
    if len(sources) != 1:
        v.append(Violation("source", None, f"plan must have exactly one Source, found {len(sources)}"))
    if len(sinks) != 1:
        v.append(Violation("sink", None, f"plan must have exactly one Output, found {len(sinks)}"))

    out_node = by_id.get(plan.output)
    if out_node is None:
        v.append(Violation("output", None, f"output references unknown node {plan.output!r}"))
    elif out_node.kind != "Output":
        v.append(Violation("output", plan.output, "output must name an Output node"))

    for node in plan.nodes:
        if node.kind in ("Label", "Span"):
            check_ref(node, node.input, "records", "input")  # type: ignore[arg-type]
            assert node.instruction is not None
            slots = set(node.instruction.slots())
            bound = set(node.instruction.bindings)
            for slot in sorted(slots - bound):
                v.append(Violation("unbound-slot", node.id, f"placeholder {{{slot}}} has no binding"))
            for slot in sorted(bound - slots):
                v.append(Violation("unused-binding", node.id, f"binding {slot!r} has no placeholder"))
            for slot in sorted(slots & bound):
                check_ref(node, node.instruction.bindings[slot], "spans", f"binding {slot!r}")
        elif node.kind == "Bool":
            assert node.inputs is not None
            if node.op == "Not" and len(node.inputs) != 1:
                v.append(Violation("arity", node.id, f"Not takes exactly 1 input, found {len(node.inputs)}"))
            if node.op in ("And", "Or") and len(node.inputs) < 2:
                v.append(Violation("arity", node.id, f"{node.op} takes at least 2 inputs, found {len(node.inputs)}"))
            for ref in node.inputs:
                check_ref(node, ref, "boolean", "input")
        elif node.kind == "Filter":
            check_ref(node, node.predicate, "boolean", "predicate")  # type: ignore[arg-type]
            check_ref(node, node.input, "records", "input")  # type: ignore[arg-type]
        elif node.kind == "Output":
            assert node.fields is not None
            seen_names: set[str] = set()
            for f in node.fields:
                if not f.name:
                    v.append(Violation("field", node.id, "output field name must be non-empty"))
                elif f.name in seen_names:
                    v.append(Violation("field", node.id, f"duplicate output field {f.name!r}"))
                seen_names.add(f.name)
                target = by_id.get(f.node)
                if target is None:
                    v.append(Violation("dangling-ref", node.id, f"field {f.name!r} references unknown node {f.node!r}"))
                elif target.kind == "Output":
                    v.append(Violation("type-mismatch", node.id, f"field {f.name!r} may not reference an Output node"))

    cycle = _find_cycle(plan, by_id)
    if cycle:
        v.append(Violation("cycle", None, "cycle through " + " -> ".join(cycle)))
    return ValidationReport(violations=tuple(v))


def _find_cycle(plan: Plan, by_id: dict[str, PlanNode]) -> list[str] | None:
    """DFS over reference edges; returns the node ids of one cycle if present."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in by_id}
    stack: list[str] = []

    def visit(nid: str) -> list[str] | None:
        color[nid] = GREY
        stack.append(nid)
        for ref in by_id[nid].refs():
            if ref not in by_id:
                continue
            if color[ref] == GREY:
                return stack[stack.index(ref) :]
            if color[ref] == WHITE:
                found = visit(ref)
                if found:
                    return found
        stack.pop()
        color[nid] = BLACK
        return None

    for nid in by_id:
        if color[nid] == WHITE:
            found = visit(nid)
            if found:
                return found
    return None


# --- canonicalization ------------------------------------------------------------


def _node_to_dict(node: PlanNode, rename: Mapping[str, str] | None = None) -> dict[str, Any]:
    def r(x: str) -> str:
        return rename[x] if rename and x in rename else x

    doc: dict[str, Any] = {"id": r(node.id), "kind": node.kind}
    if node.instruction is not None:
        doc["instruction"] = {
            "template": node.instruction.template,
            "bindings": {slot: r(t) for slot, t in node.instruction.bindings.items()},
        }
    if node.input is not None:
        doc["input"] = r(node.input)
    if node.op is not None:
        doc["op"] = node.op
    if node.inputs is not None:
        renamed = [r(x) for x in node.inputs]
        if node.op in ("And", "Or"):
            renamed.sort()
        doc["inputs"] = renamed
    if node.predicate is not None:
        doc["predicate"] = r(node.predicate)
    if node.fields is not None:
        doc["fields"] = [{"name": f.name, "node": r(f.node)} for f in node.fields]
    return doc


def canonicalize(plan: Plan) -> Plan:
    """Rename nodes to n0..nk in deterministic topological order."""
    report = validate_plan(plan)
    if not report.ok:
        raise InvalidPlan(report)

    deps = {n.id: set(n.refs()) for n in plan.nodes}
    dependents: dict[str, set[str]] = {n.id: set() for n in plan.nodes}
    for nid, ds in deps.items():
        for d in ds:
            dependents[d].add(nid)

    by_id = {n.id: n for n in plan.nodes}
    remaining = {nid: len(ds) for nid, ds in deps.items()}
    ready = [nid for nid, c in remaining.items() if c == 0]
    rename: dict[str, str] = {}
    order: list[str] = []

    while ready:
        # Ties among ready nodes break on (kind, payload with already-renamed
        # refs) so the result is independent of the incoming id spelling. Two
        # byte-identical sibling nodes fall back to their original ids.
        def key(nid: str) -> tuple[str, str, str]:
            node = by_id[nid]
            payload = _node_to_dict(node, rename)
            payload.pop("id")
            return (node.kind, json.dumps(payload, sort_keys=True, ensure_ascii=True), nid)

        nid = min(ready, key=key)
        ready.remove(nid)
        rename[nid] = f"n{len(order)}"
        order.append(nid)
        for dep in sorted(dependents[nid]):
            remaining[dep] -= 1
            if remaining[dep] == 0:
                ready.append(dep)

    new_nodes = []
    for nid in order:
        doc = _node_to_dict(by_id[nid], rename)
        new_nodes.append(_parse_node(doc, "/nodes/0"))
    return Plan(
        version=plan.version,
        nodes=tuple(new_nodes),
        output=rename[plan.output],
        provenance=plan.provenance,
    )


def canonical_json(plan: Plan) -> str:
    """Byte-stable serialization of the canonical form, ignoring provenance."""
    canon = canonicalize(plan)
    return json.dumps(
        canon.to_dict(include_provenance=False),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    )


def plan_digest(plan: Plan) -> str:
    return hashlib.sha256(canonical_json(plan).encode("utf-8")).hexdigest()


# --- templates ---------------------------------------------------------------------


def make_filter_extract(label_instruction: str, span_instruction: str) -> Plan:
    """Source -> Label -> Filter -> Span -> Output, the two-stage workhorse."""
    if not label_instruction.strip() or not span_instruction.strip():
        raise EmptyInstruction("both instructions must be non-empty")
    nodes = (
        PlanNode(id="source", kind="Source"),
        PlanNode(
            id="label",
            kind="Label",
            instruction=InstructionTemplate(template=label_instruction),
            input="source",
        ),
        PlanNode(id="keep", kind="Filter", predicate="label", input="source"),
        PlanNode(
            id="span",
            kind="Span",
            instruction=InstructionTemplate(template=span_instruction),
            input="keep",
        ),
        PlanNode(
            id="output",
            kind="Output",
            fields=(OutputField("text", "keep"), OutputField("spans", "span")),
        ),
    )
    return Plan(version=PLAN_VERSION, nodes=nodes, output="output")
