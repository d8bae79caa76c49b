"""Falconer: instruction-driven knowledge mining pipelines.

Compile a natural-language mining task into a validated plan of two
primitives (get_label, get_span), execute it over a JSONL corpus through
pluggable inference backends, and manufacture weak supervision for training
small proxy models that stand in for the expensive annotator.
"""

from __future__ import annotations

from .corpus import (
    TOKENIZER_VERSION,
    Corpus,
    CorpusRecord,
    Token,
    TokenSequence,
    load_corpus,
    sample_fraction,
    tokenize,
)
from .errors import FalconerError
from .evaluation import EvalReport, consistency, render_report, word_f1
from .executor import (
    CostReport,
    ExecutionOptions,
    ResultRow,
    ResultSet,
    execute,
    load_results,
    speedup_ratio,
)
from .generator import (
    TrainingSet,
    degrade_spans,
    emit_dataset,
    generate_classification_set,
    generate_extraction_set,
    load_dataset,
)
from .plan import (
    PLAN_VERSION,
    InstructionTemplate,
    OutputField,
    Plan,
    PlanNode,
    ValidationReport,
    Violation,
    canonical_json,
    canonicalize,
    make_filter_extract,
    parse_plan,
    plan_digest,
    validate_plan,
)
from .planner import (
    PlannerConfig,
    PlannerRequest,
    PlanningScore,
    build_planner_prompt,
    parse_planner_response,
    request_plan,
    score_planning,
)
from .primitives import (
    BioSequence,
    NliPrompt,
    Span,
    SpanSet,
    decode_bio,
    encode_bio,
    nte_label,
    render_nli_prompt,
)
from .seeding import derive_seed, sample_indices

__version__ = "0.1.0"

__all__ = [
    "TOKENIZER_VERSION",
    "Corpus",
    "CorpusRecord",
    "Token",
    "TokenSequence",
    "load_corpus",
    "sample_fraction",
    "tokenize",
    "FalconerError",
    "EvalReport",
    "consistency",
    "render_report",
    "word_f1",
    "CostReport",
    "ExecutionOptions",
    "ResultRow",
    "ResultSet",
    "execute",
    "load_results",
    "speedup_ratio",
    "TrainingSet",
    "degrade_spans",
    "emit_dataset",
    "generate_classification_set",
    "generate_extraction_set",
    "load_dataset",
    "PLAN_VERSION",
    "InstructionTemplate",
    "OutputField",
    "Plan",
    "PlanNode",
    "ValidationReport",
    "Violation",
    "canonical_json",
    "canonicalize",
    "make_filter_extract",
    "parse_plan",
    "plan_digest",
    "validate_plan",
    "PlannerConfig",
    "PlannerRequest",
    "PlanningScore",
    "build_planner_prompt",
    "parse_planner_response",
    "request_plan",
    "score_planning",
    "BioSequence",
    "NliPrompt",
    "Span",
    "SpanSet",
    "decode_bio",
    "encode_bio",
    "nte_label",
    "render_nli_prompt",
    "derive_seed",
    "sample_indices",
    "__version__",
]
