"""Evaluate a validated plan over a corpus.

Evaluation is columnar: one node at a time over its full surviving record set,
so primitive calls arrive at the backend in corpus-order batches and Span
nodes only ever see records that passed their upstream filters. Record ids
partition into rows plus dropped; all ordering follows the corpus, which makes
the serialized results byte-identical regardless of worker-pool size.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .backends.base import Backend, BackendStats, ClassifyItem, ExtractItem
from .corpus import Corpus
from .errors import InvalidPlan, MismatchedRuns, UnboundBackend
from .plan import Plan, PlanNode, plan_digest, validate_plan
from .primitives import Span, SpanSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExecutionOptions:
    batch: int | None = None  # caps the backend's max_batch when set
    parallel: int = 1
    cache: bool = True
    strict: bool = False  # abort on item failures instead of dropping records


@dataclass(frozen=True)
class ResultRow:
    record_id: str
    fields: Mapping[str, Any]  # bool | str | SpanSet


@dataclass(frozen=True)
class ResultSet:
    plan_id: str
    rows: tuple[ResultRow, ...]
    dropped: tuple[str, ...]
    drop_reasons: Mapping[str, str] = field(default_factory=dict, compare=False)

    def rows_payload(self) -> list[dict[str, Any]]:
        return [
            {"id": row.record_id, "fields": _fields_to_json(row.fields)} for row in self.rows
        ]

    def to_jsonl(self, cost: "CostReport") -> str:
        lines = [
            json.dumps(entry, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
            for entry in self.rows_payload()
        ]
        # Wall time varies run to run, so the embedded cost omits it to keep
        # the results file byte-stable; report.json carries the full report.
        trailer = {"_dropped": list(self.dropped), "_cost": cost.to_dict(include_wall_time=False)}
        lines.append(
            json.dumps(trailer, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        )
        return "\n".join(lines) + "\n"


def _fields_to_json(fields: Mapping[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for name, value in fields.items():
        if isinstance(value, SpanSet):
            out[name] = [
                {"start": s.start, "end": s.end, "surface": s.surface} for s in value.spans
            ]
        else:
            out[name] = value
    return out


@dataclass(frozen=True)
class BackendUsage:
    wire_calls: int = 0
    items_sent: int = 0
    chars_sent: int = 0
    cache_hits: int = 0
    estimated_cost: float = 0.0
    wall_time: float = 0.0

    def plus(self, other: "BackendUsage") -> "BackendUsage":
        return BackendUsage(
            wire_calls=self.wire_calls + other.wire_calls,
            items_sent=self.items_sent + other.items_sent,
            chars_sent=self.chars_sent + other.chars_sent,
            cache_hits=self.cache_hits + other.cache_hits,
            estimated_cost=self.estimated_cost + other.estimated_cost,
            wall_time=self.wall_time + other.wall_time,
        )

    def to_dict(self, include_wall_time: bool = True) -> dict[str, Any]:
        doc = {
            "wire_calls": self.wire_calls,
            "items_sent": self.items_sent,
            "chars_sent": self.chars_sent,
            "cache_hits": self.cache_hits,
            "estimated_cost": self.estimated_cost,
        }
        if include_wall_time:
            doc["wall_time"] = self.wall_time
        return doc


@dataclass(frozen=True)
class CostReport:
    plan_id: str
    backends: Mapping[str, BackendUsage]
    totals: BackendUsage

    def to_dict(self, include_wall_time: bool = True) -> dict[str, Any]:
        return {
            "plan_id": self.plan_id,
            "backends": {
                bid: u.to_dict(include_wall_time) for bid, u in sorted(self.backends.items())
            },
            "totals": self.totals.to_dict(include_wall_time),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CostReport":
        backends = {
            bid: BackendUsage(**u) for bid, u in doc.get("backends", {}).items()
        }
        return cls(
            plan_id=doc["plan_id"],
            backends=backends,
            totals=BackendUsage(**doc["totals"]),
        )


def _usage_from_stats(stats: BackendStats, backend: Backend) -> BackendUsage:
    d = backend.descriptor
    cost = d.per_call * stats.wire_calls + d.per_1k_chars * stats.chars_sent / 1000.0
    return BackendUsage(
        wire_calls=stats.wire_calls,
        items_sent=stats.items_sent,
        chars_sent=stats.chars_sent,
        cache_hits=stats.cache_hits,
        estimated_cost=cost,
        wall_time=stats.wall_time,
    )


def execute(
    plan: Plan,
    corpus: Corpus,
    bindings: Mapping[str, Backend],
    options: ExecutionOptions | None = None,
) -> tuple[ResultSet, CostReport]:
    opts = options or ExecutionOptions()
    report = validate_plan(plan)
    if not report.ok:
        raise InvalidPlan(report)
    for kind in ("Label", "Span"):
        if any(n.kind == kind for n in plan.nodes) and kind not in bindings:
            raise UnboundBackend(kind)

    pid = plan_digest(plan)
    by_id = {n.id: n for n in plan.nodes}
    order = _topological_order(plan)
    corpus_pos = {r.id: i for i, r in enumerate(corpus.records)}

    domains: dict[str, list[str]] = {}  # surviving record ids, corpus order
    values: dict[str, dict[str, Any]] = {}  # node id -> record id -> value
    drop_reasons: dict[str, str] = {}

    pool: ThreadPoolExecutor | None = None
    if opts.parallel > 1:
        pool = ThreadPoolExecutor(max_workers=opts.parallel)

    backend_objs: dict[int, Backend] = {}
    before: dict[int, BackendStats] = {}
    for backend in bindings.values():
        if id(backend) not in backend_objs:
            backend_objs[id(backend)] = backend
            before[id(backend)] = backend.stats.snapshot()

    try:
        for node_id in order:
            node = by_id[node_id]
            if node.kind == "Source":
                domains[node_id] = [r.id for r in corpus.records]
            elif node.kind in ("Label", "Span"):
                _run_primitive(node, corpus, bindings[node.kind], domains, values, drop_reasons, opts, pool)
            elif node.kind == "Bool":
                assert node.inputs is not None
                common = _intersect_domains(
                    [domains[i] for i in node.inputs], corpus_pos
                )
                domains[node_id] = common
                vals: dict[str, Any] = {}
                for rid in common:
                    ins = [values[i][rid] for i in node.inputs]
                    if node.op == "And":
                        vals[rid] = all(ins)
                    elif node.op == "Or":
                        vals[rid] = any(ins)
                    else:
                        vals[rid] = not ins[0]
                values[node_id] = vals
            elif node.kind == "Filter":
                assert node.input is not None and node.predicate is not None
                pred_domain = set(domains[node.predicate])
                kept = []
                for rid in domains[node.input]:
                    if rid in pred_domain and values[node.predicate][rid]:
                        kept.append(rid)
                    else:
                        drop_reasons.setdefault(rid, f"filtered by {node_id}")
                domains[node_id] = kept
            else:  # Output handled below
                domains[node_id] = []
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    out_node = by_id[plan.output]
    assert out_node.fields is not None
    row_ids = _intersect_domains(
        [domains[f.node] for f in out_node.fields], corpus_pos
    ) if out_node.fields else [r.id for r in corpus.records]

    rows = []
    for rid in row_ids:
        fields: dict[str, Any] = {}
        for f in out_node.fields:
            target = by_id[f.node]
            if target.kind in ("Source", "Filter"):
                fields[f.name] = corpus.get(rid).text
            else:
                fields[f.name] = values[f.node][rid]
        rows.append(ResultRow(record_id=rid, fields=fields))

    row_set = set(row_ids)
    dropped = tuple(r.id for r in corpus.records if r.id not in row_set)

    usage: dict[str, BackendUsage] = {}
    totals = BackendUsage()
    for key, backend in backend_objs.items():
        delta = backend.stats.snapshot().since(before[key])
        u = _usage_from_stats(delta, backend)
        bid = backend.descriptor.id
        usage[bid] = usage[bid].plus(u) if bid in usage else u
        totals = totals.plus(u)

    result = ResultSet(
        plan_id=pid,
        rows=tuple(rows),
        dropped=dropped,
        drop_reasons={rid: drop_reasons[rid] for rid in dropped if rid in drop_reasons},
    )
    return result, CostReport(plan_id=pid, backends=usage, totals=totals)


def _topological_order(plan: Plan) -> list[str]:
    deps = {n.id: set(n.refs()) for n in plan.nodes}
    dependents: dict[str, set[str]] = {n.id: set() for n in plan.nodes}
    for nid, ds in deps.items():
        for d in ds:
            dependents[d].add(nid)
    remaining = {nid: len(ds) for nid, ds in deps.items()}
    ready = sorted(nid for nid, c in remaining.items() if c == 0)
    order = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        changed = False
        for dep in dependents[nid]:
            remaining[dep] -= 1
            if remaining[dep] == 0:
                ready.append(dep)
                changed = True
        if changed:
            ready.sort()
    return order


def _intersect_domains(domains: list[list[str]], corpus_pos: Mapping[str, int]) -> list[str]:
    if not domains:
        return []
    common = set(domains[0])
    for d in domains[1:]:
        common &= set(d)
    return sorted(common, key=lambda rid: corpus_pos[rid])


def _run_primitive(
    node: PlanNode,
    corpus: Corpus,
    backend: Backend,
    domains: dict[str, list[str]],
    values: dict[str, dict[str, Any]],
    drop_reasons: dict[str, str],
    opts: ExecutionOptions,
    pool: ThreadPoolExecutor | None,
) -> None:
    assert node.input is not None and node.instruction is not None
    template = node.instruction
    bound = template.bindings  # slot -> span-node id

    alive: list[str] = []
    rendered: list[str] = []
    for rid in domains[node.input]:
        slot_values: dict[str, str] = {}
        ok = True
        for slot, span_node in bound.items():
            if rid not in values.get(span_node, {}) or not values[span_node][rid].spans:
                drop_reasons.setdefault(rid, f"empty slot binding at {node.id}")
                ok = False
                break
            chosen = values[span_node][rid].spans[0]
            slot_values[slot] = chosen.surface
            log.debug(
                "node %s record %s slot %s -> %r", node.id, rid, slot, chosen.surface
            )
        if not ok:
            continue
        alive.append(rid)
        rendered.append(template.render(slot_values))

    on_error = "raise" if opts.strict else "none"
    node_values: dict[str, Any] = {}
    survivors: list[str] = []
    try:
        if node.kind == "Label":
            items = [
                ClassifyItem(text=corpus.get(rid).text, label=instr)
                for rid, instr in zip(alive, rendered)
            ]
            results = backend.classify(
                items, batch=opts.batch, pool=pool, use_cache=opts.cache, on_error=on_error
            )
            for rid, res in zip(alive, results):
                if res is None:
                    drop_reasons.setdefault(rid, f"backend failure at {node.id}")
                    continue
                survivors.append(rid)
                node_values[rid] = res.answer == "yes"
        else:
            items = [
                ExtractItem(text=corpus.get(rid).text, instruction=instr)
                for rid, instr in zip(alive, rendered)
            ]
            span_results = backend.extract(
                items, batch=opts.batch, pool=pool, use_cache=opts.cache, on_error=on_error
            )
            for rid, res in zip(alive, span_results):
                if res is None:
                    drop_reasons.setdefault(rid, f"backend failure at {node.id}")
                    continue
                survivors.append(rid)
                node_values[rid] = SpanSet(record_id=rid, spans=res.spans)
    except Exception as exc:
        exc.args = (f"node {node.id}: " + (str(exc.args[0]) if exc.args else ""),) + exc.args[1:]
        raise

    domains[node.id] = survivors
    values[node.id] = node_values


def speedup_ratio(a: CostReport, b: CostReport) -> tuple[float, float]:
    """How much slower/costlier run b was relative to run a."""
    if a.plan_id != b.plan_id:
        raise MismatchedRuns(f"plan {a.plan_id[:12]} vs {b.plan_id[:12]}")

    def ratio(x: float, y: float) -> float:
        if x == 0:
            return 1.0 if y == 0 else float("inf")
        return y / x

    return ratio(a.totals.wall_time, b.totals.wall_time), ratio(
        a.totals.estimated_cost, b.totals.estimated_cost
    )


def load_results(path: str | Path) -> tuple[ResultSet, CostReport]:
    """Read a results.jsonl file back into memory."""
    rows: list[ResultRow] = []
    dropped: tuple[str, ...] = ()
    cost: CostReport | None = None
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "_cost" in obj:
                dropped = tuple(obj.get("_dropped", []))
                cost = CostReport.from_dict(obj["_cost"])
                continue
            fields: dict[str, Any] = {}
            for name, value in obj["fields"].items():
                if isinstance(value, list):
                    fields[name] = SpanSet(
                        record_id=obj["id"],
                        spans=tuple(Span(s["start"], s["end"], s["surface"]) for s in value),
                    )
                else:
                    fields[name] = value
            rows.append(ResultRow(record_id=obj["id"], fields=fields))
    if cost is None:
        raise ValueError(f"{path} has no trailing cost summary line")
    result = ResultSet(plan_id=cost.plan_id, rows=tuple(rows), dropped=dropped)
    return result, cost
