"""Command line surface for planning, running, and evaluating pipelines.

Commands: plan, validate, run, generate, degrade, eval, score-plans.
Exit codes: 0 success, 1 internal error, 2 validation failure, 3 planner
failure, 4 backend unreachable or misbehaving, 5 bad arguments or missing
files. With --json every command prints a single JSON object carrying at
least "status" and "artifacts" to stdout; progress goes to stderr.

Randomness flows from a single --seed flag (default 0). Sub-seeds are derived
per command: generate uses derive_seed(seed, "generate") for sampling and
degrade uses derive_seed(seed, "degrade") for start re-draws, so a full
pipeline is reproducible end to end from one number.

A TOML config file (--config) may mirror any long flag per command table,
for example `[run]\nparallel = 8`; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]

from .backends import (
    Backend,
    ChatCompletionsClient,
    HttpProxyBackend,
    LlmAnnotatorBackend,
    MockBackend,
    ResponseCache,
)
from .corpus import Corpus, load_corpus
from .errors import (
    BackendError,
    BackendUnavailable,
    FalconerError,
    PlannerError,
    UnboundBackend,
)
from .evaluation import consistency, render_report, word_f1
from .executor import ExecutionOptions, execute, load_results
from .generator import (
    degrade_spans,
    emit_dataset,
    generate_classification_set,
    generate_extraction_set,
    load_dataset,
)
from .plan import Plan, parse_plan, validate_plan
from .planner import PlannerConfig, PlannerRequest, request_plan, score_planning
from .primitives import Span, SpanSet
from .seeding import derive_seed

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2
EXIT_PLANNER = 3
EXIT_BACKEND = 4
EXIT_USAGE = 5


class UsageError(Exception):
    """Bad command line arguments; maps to exit code 5."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_toml(path: str) -> dict[str, Any]:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _apply_config(subparsers: dict[str, argparse.ArgumentParser], config: dict[str, Any]) -> None:
    """Table per command; keys mirror long flags (dashes or underscores)."""
    for section, table in config.items():
        parser = subparsers.get(section.replace("_", "-"))
        if parser is None or not isinstance(table, dict):
            log.warning("ignoring unknown config section %r", section)
            continue
        known = {action.dest for action in parser._actions}
        defaults = {}
        for key, value in table.items():
            dest = key.replace("-", "_")
            if isinstance(value, dict) and f"{section}.{key}" in subparsers:
                # nested table, e.g. [eval.f1]
                subparsers[f"{section}.{key}"].set_defaults(
                    **{k.replace("-", "_"): v for k, v in value.items()}
                )
            elif dest in known:
                defaults[dest] = value
            else:
                log.warning("ignoring unknown config key %s.%s", section, key)
        parser.set_defaults(**defaults)


def _make_cache(args: argparse.Namespace) -> ResponseCache | None:
    cache_dir = getattr(args, "cache_dir", None) or os.environ.get("FALCONER_CACHE_DIR")
    if cache_dir and not getattr(args, "no_cache", False):
        return ResponseCache(cache_dir)
    return None


def _build_backend(spec: str, cache: ResponseCache | None) -> Backend:
    name, _, arg = spec.partition(":")
    if name == "mock":
        return MockBackend(arg if arg else {}, cache=cache)
    if name == "http_proxy":
        base = arg or os.environ.get("FALCONER_PROXY_URL")
        if not base:
            raise UsageError("http_proxy needs a base URL (spec or FALCONER_PROXY_URL)")
        return HttpProxyBackend(base, cache=cache)
    if name == "llm_annotator":
        base = arg or os.environ.get("FALCONER_PLANNER_URL")
        if not base:
            raise UsageError("llm_annotator needs a base URL (spec or FALCONER_PLANNER_URL)")
        model = os.environ.get("FALCONER_ANNOTATOR_MODEL", "annotator")
        return LlmAnnotatorBackend(ChatCompletionsClient(base, model), cache=cache)
    raise UsageError(f"unknown backend {name!r} (expected mock, http_proxy, or llm_annotator)")


def _parse_bindings(specs: Sequence[str], cache: ResponseCache | None) -> dict[str, Backend]:
    """Backend specs, optionally kind-prefixed: "Label=mock:rules.json"."""
    bindings: dict[str, Backend] = {}
    for spec in specs:
        head, sep, rest = spec.partition("=")
        if sep and head in ("Label", "Span"):
            bindings[head] = _build_backend(rest, cache)
        else:
            backend = _build_backend(spec, cache)
            bindings.setdefault("Label", backend)
            bindings.setdefault("Span", backend)
    return bindings


def _read_plan(path: str) -> Plan:
    return parse_plan(Path(path).read_text(encoding="utf-8"))


def _emit(args: argparse.Namespace, artifacts: list[str], **extra: Any) -> None:
    if args.json:
        payload = {"status": "ok", "artifacts": artifacts, **extra}
        print(json.dumps(payload, sort_keys=True, ensure_ascii=False))
    else:
        for path in artifacts:
            print(path)
        for key in sorted(extra):
            print(f"{key}: {extra[key]}")


def _emit_error(args: argparse.Namespace, exc: BaseException, **extra: Any) -> None:
    log.error("%s", exc)
    if getattr(args, "json", False):
        payload = {"status": "error", "artifacts": [], "error": str(exc), **extra}
        print(json.dumps(payload, sort_keys=True, ensure_ascii=False))


# --- commands ----------------------------------------------------------------


def cmd_plan(args: argparse.Namespace) -> int:
    base_url = args.planner_url or os.environ.get("FALCONER_PLANNER_URL")
    if not base_url:
        raise UsageError("planner URL required (--planner-url or FALCONER_PLANNER_URL)")
    if args.task is None and args.task_file is None:
        raise UsageError("a task is required (--task or --task-file)")
    task = args.task if args.task is not None else Path(args.task_file).read_text(encoding="utf-8").strip()
    icl: list[tuple[str, Plan]] = []
    if args.icl_dir:
        for path in sorted(Path(args.icl_dir).glob("*.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            icl.append((doc["task"], parse_plan(doc["plan"])))
    config = PlannerConfig(base_url=base_url, model=args.model)
    plan = request_plan(config, PlannerRequest(task=task, icl_examples=tuple(icl)), args.repair_budget)
    Path(args.out).write_text(plan.to_json() + "\n", encoding="utf-8")
    _emit(args, [args.out], plan_nodes=len(plan.nodes))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    plan = _read_plan(args.plan)
    report = validate_plan(plan)
    if args.json:
        payload = {
            "status": "ok" if report.ok else "error",
            "artifacts": [],
            "violations": [v.render() for v in report.violations],
        }
        print(json.dumps(payload, sort_keys=True, ensure_ascii=False))
    else:
        print(report.render())
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_run(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    log.info("loaded corpus with %d records", len(corpus))
    plan = _read_plan(args.plan)
    cache = _make_cache(args)
    bindings = _parse_bindings(args.backend, cache)
    options = ExecutionOptions(
        batch=args.batch,
        parallel=args.parallel,
        cache=not args.no_cache,
        strict=args.strict,
    )
    results, cost = execute(plan, corpus, bindings, options)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.jsonl"
    results_path.write_text(results.to_jsonl(cost), encoding="utf-8")
    report = {"seed": args.seed, "plan_id": results.plan_id, **cost.to_dict()}
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    _emit(
        args,
        [str(results_path), str(report_path)],
        rows=len(results.rows),
        dropped=len(results.dropped),
        plan_id=results.plan_id,
    )
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    cache = _make_cache(args)
    backend = _build_backend(args.backend, cache)
    if args.mode == "classification":
        if not args.label:
            raise UsageError("--label is required for classification mode")
        training_set = generate_classification_set(corpus, args.label, args.n, backend)
    else:
        if not args.instruction:
            raise UsageError("--instruction is required for extraction mode")
        seed = derive_seed(args.seed, "generate")
        training_set = generate_extraction_set(corpus, args.instruction, args.n, seed, backend)
    manifest = emit_dataset(training_set, args.out)
    data_file = str(Path(args.out) / f"{training_set.kind}.jsonl")
    manifest_file = str(Path(args.out) / "manifest.json")
    _emit(args, [data_file, manifest_file], digest=manifest["digest"], examples=len(training_set.examples))
    return EXIT_OK


def cmd_degrade(args: argparse.Namespace) -> int:
    training_set = load_dataset(args.dataset)
    degraded = degrade_spans(training_set, derive_seed(args.seed, "degrade"))
    manifest = emit_dataset(degraded, args.out)
    data_file = str(Path(args.out) / "extraction.jsonl")
    manifest_file = str(Path(args.out) / "manifest.json")
    _emit(args, [data_file, manifest_file], digest=manifest["digest"])
    return EXIT_OK


def _load_spansets(path: str) -> list[SpanSet]:
    sets = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            sets.append(
                SpanSet(
                    record_id=obj["id"],
                    spans=tuple(
                        Span(s["start"], s["end"], s["surface"]) for s in obj["spans"]
                    ),
                )
            )
    return sets


def _finish_eval(args: argparse.Namespace, report) -> int:
    rendered = render_report(report, args.format)
    artifacts: list[str] = []
    if args.out:
        Path(args.out).write_text(rendered + "\n", encoding="utf-8")
        artifacts.append(args.out)
        _emit(args, artifacts, f1=report.f1)
    elif args.json:
        payload = {"status": "ok", "artifacts": [], "report": report.to_dict()}
        print(json.dumps(payload, sort_keys=True, ensure_ascii=False))
    else:
        print(rendered)
    return EXIT_OK


def cmd_eval_f1(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    predicted = _load_spansets(args.pred)
    gold = _load_spansets(args.gold)
    return _finish_eval(args, word_f1(predicted, gold, corpus))


def cmd_eval_consistency(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    run_a, _ = load_results(args.run_a)
    run_b, _ = load_results(args.run_b)
    return _finish_eval(args, consistency(run_a, run_b, corpus))


def cmd_score_plans(args: argparse.Namespace) -> int:
    probe = load_corpus(args.probe)
    cache = _make_cache(args)
    backend = _build_backend(args.backend, cache)
    golden: dict[str, Plan] = {}
    for path in sorted(Path(args.golden).glob("*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        golden[doc["task"]] = parse_plan(doc["plan"])
    candidates: list[tuple[str, object]] = []
    for path in sorted(Path(args.candidates).glob("*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        if "plan" in doc:
            try:
                candidates.append((doc["task"], parse_plan(doc["plan"])))
            except FalconerError as exc:
                candidates.append((doc["task"], exc))
        else:
            candidates.append((doc["task"], doc.get("failure", "missing plan")))
    score = score_planning(candidates, golden, probe, backend)
    if args.json:
        payload = {"status": "ok", "artifacts": [], "score": score.to_dict()}
        print(json.dumps(payload, sort_keys=True, ensure_ascii=False))
    else:
        print(f"planning score: {score.correct}/{score.total} = {score.score:.3f}")
        for task, kind in score.failures:
            print(f"failed [{kind}]: {task}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable summary on stdout")
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--config", help="TOML config mirroring flags (flags win)")
    common.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    common.add_argument("--cache-dir", help="response cache dir (default FALCONER_CACHE_DIR)")
    common.add_argument("--no-cache", action="store_true", help="bypass the response cache")

    parser = _Parser(prog="falconer", description="Instruction-driven knowledge mining pipelines.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    registry: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("plan", parents=[common], help="compile a task into a plan via a chat endpoint")
    p.add_argument("--task", help="natural-language task")
    p.add_argument("--task-file", help="file containing the task")
    p.add_argument("--out", required=True, help="where to write the plan JSON")
    p.add_argument("--icl-dir", help="directory of {task, plan} JSON examples")
    p.add_argument("--model", default="planner", help="model name for the endpoint")
    p.add_argument("--planner-url", help="chat endpoint base URL (default FALCONER_PLANNER_URL)")
    p.add_argument("--repair-budget", type=int, default=2, help="validation repair rounds")
    p.set_defaults(func=cmd_plan)
    registry["plan"] = p

    p = sub.add_parser("validate", parents=[common], help="validate a plan file")
    p.add_argument("plan", help="plan JSON file")
    p.set_defaults(func=cmd_validate)
    registry["validate"] = p

    p = sub.add_parser("run", parents=[common], help="execute a plan over a corpus")
    p.add_argument("--plan", required=True, help="plan JSON file")
    p.add_argument("--corpus", required=True, help="JSONL corpus")
    p.add_argument(
        "--backend",
        action="append",
        required=True,
        help='backend spec, e.g. "mock:rules.json"; prefix "Label=" or "Span=" to bind one kind',
    )
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--batch", type=int, help="cap on items per wire call")
    p.add_argument("--parallel", type=int, default=1, help="worker threads for dispatch")
    p.add_argument("--strict", action="store_true", help="fail the run on any backend error")
    p.set_defaults(func=cmd_run)
    registry["run"] = p

    p = sub.add_parser("generate", parents=[common], help="manufacture a training set")
    p.add_argument("--mode", choices=("classification", "extraction"), required=True)
    p.add_argument("--corpus", required=True, help="JSONL corpus")
    p.add_argument("--label", help="target label (classification mode)")
    p.add_argument("--instruction", help="extraction instruction (extraction mode)")
    p.add_argument("--n", type=int, required=True, help="examples per class / sample size")
    p.add_argument("--backend", required=True, help="scorer or annotator backend spec")
    p.add_argument("--out", required=True, help="dataset directory")
    p.set_defaults(func=cmd_generate)
    registry["generate"] = p

    p = sub.add_parser("degrade", parents=[common], help="randomize span starts in a dataset")
    p.add_argument("--dataset", required=True, help="emitted extraction dataset directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_degrade)
    registry["degrade"] = p

    p = sub.add_parser("eval", parents=[common], help="score predictions or run agreement")
    eval_sub = p.add_subparsers(dest="metric", metavar="metric")
    f1p = eval_sub.add_parser("f1", parents=[common], help="word-level F1 of predictions vs gold")
    f1p.add_argument("--pred", required=True, help='JSONL of {"id", "spans"}')
    f1p.add_argument("--gold", required=True, help='JSONL of {"id", "spans"}')
    f1p.add_argument("--corpus", required=True, help="JSONL corpus")
    f1p.add_argument("--format", choices=("json", "markdown"), default="json")
    f1p.add_argument("--out", help="write the report here instead of stdout")
    f1p.set_defaults(func=cmd_eval_f1)
    registry["eval.f1"] = f1p
    cp = eval_sub.add_parser("consistency", parents=[common], help="agreement of two runs of one plan")
    cp.add_argument("--run-a", required=True, help="results.jsonl of the first run")
    cp.add_argument("--run-b", required=True, help="results.jsonl of the second run")
    cp.add_argument("--corpus", required=True, help="JSONL corpus")
    cp.add_argument("--format", choices=("json", "markdown"), default="json")
    cp.add_argument("--out", help="write the report here instead of stdout")
    cp.set_defaults(func=cmd_eval_consistency)
    registry["eval.consistency"] = cp
    registry["eval"] = p

    p = sub.add_parser("score-plans", parents=[common], help="behavioral planning correctness")
    p.add_argument("--candidates", required=True, help="directory of {task, plan|failure} JSON files")
    p.add_argument("--golden", required=True, help="directory of {task, plan} JSON files")
    p.add_argument("--probe", required=True, help="probe corpus JSONL")
    p.add_argument("--backend", required=True, help="backend spec used for both sides")
    p.set_defaults(func=cmd_score_plans)
    registry["score-plans"] = p

    return parser, registry


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("--verbose", action="store_true")
    known, _ = pre.parse_known_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if known.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    parser, registry = build_parser()
    try:
        if known.config:
            _apply_config(registry, _load_toml(known.config))
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    try:
        return args.func(args)
    except UsageError as exc:
        _emit_error(args, exc)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        _emit_error(args, exc)
        return EXIT_USAGE
    except PlannerError as exc:
        _emit_error(args, exc)
        return EXIT_PLANNER
    except BackendUnavailable as exc:
        _emit_error(args, exc)
        return EXIT_BACKEND
    except BackendError as exc:
        _emit_error(args, exc)
        return EXIT_BACKEND
    except UnboundBackend as exc:
        _emit_error(args, exc)
        return EXIT_USAGE
    except FalconerError as exc:
        _emit_error(args, exc)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error")
        _emit_error(args, exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
