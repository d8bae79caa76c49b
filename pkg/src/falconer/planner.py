"""Obtain plans from a chat endpoint and score planning quality.

The prompt builder is a pure function over the request, so prompts are
reproducible byte for byte. Response parsing is deliberately forgiving about
chat framing (fenced code blocks, prose around the JSON) and deliberately
strict about the plan itself: whatever JSON is found must parse and validate,
with an optional bounded repair loop that feeds the validation report back to
the endpoint. Scoring executes candidate plans against golden plans on a
probe corpus with the same backend and compares emitted rows.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .backends.base import Backend
from .backends.http import ChatCompletionsClient
from .corpus import Corpus
from .errors import (
    FalconerError,
    MissingGolden,
    NoJsonFound,
    PlanInvalidAfterRepairs,
    SchemaError,
)
from .executor import ExecutionOptions, execute
from .plan import Plan, ValidationReport, Violation, canonical_json, parse_plan, validate_plan

log = logging.getLogger(__name__)

_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)

PLAN_SCHEMA_TEXT = """\
A plan is a JSON object: {"version": "plan-v1", "nodes": [...], "output": "<output-node-id>"}.
Node kinds (every node has a unique "id" and a "kind"):
- {"kind": "Source"}: the input corpus; exactly one per plan.
- {"kind": "Label", "input": <node-id>, "instruction": <instruction>}: one yes/no decision per record.
- {"kind": "Span", "input": <node-id>, "instruction": <instruction>}: character spans per record.
- {"kind": "Bool", "op": "And"|"Or"|"Not", "inputs": [<node-ids>]}: combine decisions ("Not" takes one input).
- {"kind": "Filter", "input": <node-id>, "predicate": <label-or-bool-node-id>}: keep records where the predicate holds.
- {"kind": "Output", "fields": [{"name": <string>, "node": <node-id>}, ...]}: the sink; exactly one per plan.
An instruction is either a string or {"template": "... {slot} ...", "bindings": {"slot": <span-node-id>}},
where each placeholder is filled with the first span that node found for the record."""

PRIMITIVES_TEXT = """\
Primitives available to label and span nodes:
  get_label(text, instruction) -> "yes" or "no"
  get_span(text, instruction) -> list of character spans [start, end) into text"""


@dataclass(frozen=True)
class PlannerConfig:
    """Chat endpoint settings for plan acquisition."""

    base_url: str
    model: str
    api_key: str | None = None


@dataclass(frozen=True)
class PlannerRequest:
    task: str
    icl_examples: tuple[tuple[str, Plan], ...] = ()


@dataclass(frozen=True)
class PlanningScore:
    total: int
    correct: int
    score: float
    failures: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "correct": self.correct,
            "score": self.score,
            "failures": [{"task": t, "kind": k} for t, k in self.failures],
        }


def build_planner_prompt(request: PlannerRequest) -> str:
    """Deterministic compile prompt: schema, primitives, examples, task."""
    if not request.task.strip():
        raise ValueError("task must be non-empty")
    parts = [
        "You translate data mining instructions into plan-v1 JSON pipelines.",
        "",
        PLAN_SCHEMA_TEXT,
        "",
        PRIMITIVES_TEXT,
    ]
    for example_task, example_plan in request.icl_examples:
        report = validate_plan(example_plan)
        if not report.ok:
            raise ValueError(f"in-context example plan is invalid:\n{report.render()}")
        parts += ["", f"Example task: {example_task}", "Example plan:", canonical_json(example_plan)]
    parts += [
        "",
        f"Task: {request.task}",
        "",
        "Reply with a single plan-v1 JSON object and nothing else.",
    ]
    return "\n".join(parts)


def _extract_json(reply: str) -> dict:
    """First JSON object in the reply: fenced blocks first, then a raw scan."""
    candidates = [m.group(1) for m in _FENCE_RE.finditer(reply)]
    for text in candidates:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    decoder = json.JSONDecoder()
    for pos, ch in enumerate(reply):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(reply, pos)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise NoJsonFound("no JSON object found in the reply")


def parse_planner_response(
    reply: str,
    repair: Callable[[str], str] | None = None,
    repair_budget: int = 0,
) -> Plan:
    """Extract, parse, and validate a plan, repairing up to the budget."""
    attempts = 0
    current = reply
    while True:
        obj = _extract_json(current)
        plan: Plan | None = None
        try:
            plan = parse_plan(obj)
            report = validate_plan(plan)
        except SchemaError as exc:
            report = ValidationReport(
                violations=(Violation(kind="schema", node_id=None, detail=str(exc)),)
            )
        if plan is not None and report.ok:
            return plan
        log.info("plan attempt %d rejected:\n%s", attempts + 1, report.render())
        if repair is None or attempts >= repair_budget:
            raise PlanInvalidAfterRepairs(report)
        current = repair(report.render())
        attempts += 1


def request_plan(
    config: PlannerConfig, request: PlannerRequest, repair_budget: int = 2
) -> Plan:
    """Drive the chat endpoint through prompt, parse, and bounded repair."""
    client = ChatCompletionsClient(config.base_url, config.model, api_key=config.api_key)
    prompt = build_planner_prompt(request)
    messages = [{"role": "user", "content": prompt}]
    first = client.complete(messages)

    def repair(feedback: str) -> str:
        messages.append({"role": "assistant", "content": first})
        messages.append(
            {
                "role": "user",
                "content": (
                    "That plan failed validation:\n"
                    + feedback
                    + "\nReply with a corrected plan-v1 JSON object and nothing else."
                ),
            }
        )
        return client.complete(messages)

    return parse_planner_response(first, repair=repair, repair_budget=repair_budget)


def _probe_rows(plan: Plan, probe: Corpus, backend: Backend) -> list[dict]:
    bindings = {"Label": backend, "Span": backend}
    results, _ = execute(plan, probe, bindings, ExecutionOptions(cache=False))
    return results.rows_payload()


def score_planning(
    candidates: Sequence[tuple[str, object]],
    golden: Mapping[str, Plan],
    probe: Corpus,
    backend: Backend,
) -> PlanningScore:
    """Fraction of candidates matching the golden plan's rows on the probe.

    A candidate entry pairs a task with either a Plan or an acquisition
    failure marker (anything else). Failure kinds reported: "acquisition",
    "invalid", "execution-error", "mismatch".
    """
    golden_rows: dict[str, list[dict]] = {}
    correct = 0
    failures: list[tuple[str, str]] = []
    for task, candidate in candidates:
        if task not in golden:
            raise MissingGolden(task)
        if task not in golden_rows:
            golden_rows[task] = _probe_rows(golden[task], probe, backend)
        if not isinstance(candidate, Plan):
            failures.append((task, "acquisition"))
            continue
        if not validate_plan(candidate).ok:
            failures.append((task, "invalid"))
            continue
        try:
            rows = _probe_rows(candidate, probe, backend)
        except FalconerError as exc:
            log.info("candidate for %r failed to execute: %s", task, exc)
            failures.append((task, "execution-error"))
            continue
        if rows == golden_rows[task]:
            correct += 1
        else:
            failures.append((task, "mismatch"))
    total = len(candidates)
    score = correct / total if total else 0.0
    return PlanningScore(
        total=total, correct=correct, score=score, failures=tuple(failures)
    )
