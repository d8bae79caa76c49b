"""Measure extraction quality and plan agreement.

Word-level F1 treats a span as covering every token it overlaps, then
compares lowercased token-surface multisets, so small boundary disagreements
(an included comma, a clipped character) do not zero out credit. Consistency
compares two runs of the same plan: accuracy over boolean fields (records
absent from a run count as false), word-level F1 over span fields for records
surviving both runs, and Jaccard overlap of the surviving record sets.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import TOKENIZER_VERSION, Corpus, tokenize
from .errors import PlanMismatch, UnknownRecord
from .executor import ResultSet
from .primitives import SpanSet

MATCH_RULE = "surface-lowercase"


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    gold_tokens: int
    pred_tokens: int
    matched_tokens: int
    accuracy: float | None = None
    jaccard: float | None = None
    per_field: Mapping[str, Mapping[str, float]] | None = None
    match_rule: str = MATCH_RULE
    tokenizer: str = TOKENIZER_VERSION

    def to_dict(self) -> dict:
        doc: dict = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "gold_tokens": self.gold_tokens,
            "pred_tokens": self.pred_tokens,
            "matched_tokens": self.matched_tokens,
            "match_rule": self.match_rule,
            "tokenizer": self.tokenizer,
        }
        if self.accuracy is not None:
            doc["accuracy"] = self.accuracy
        if self.jaccard is not None:
            doc["jaccard"] = self.jaccard
        if self.per_field is not None:
            doc["per_field"] = {k: dict(v) for k, v in self.per_field.items()}
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EvalReport":
        return cls(
            precision=doc["precision"],
            recall=doc["recall"],
            f1=doc["f1"],
            gold_tokens=doc["gold_tokens"],
            pred_tokens=doc["pred_tokens"],
            matched_tokens=doc["matched_tokens"],
            accuracy=doc.get("accuracy"),
            jaccard=doc.get("jaccard"),
            per_field=doc.get("per_field"),
            match_rule=doc.get("match_rule", MATCH_RULE),
            tokenizer=doc.get("tokenizer", TOKENIZER_VERSION),
        )


def covered_surfaces(spanset: SpanSet, text: str) -> Counter:
    """Lowercased surface multiset of tokens overlapping any span."""
    counts: Counter = Counter()
    for token in tokenize(text):
        if any(token.start < s.end and token.end > s.start for s in spanset.spans):
            counts[token.surface.lower()] += 1
    return counts


def _prf(matched: int, pred: int, gold: int) -> tuple[float, float, float]:
    precision = matched / pred if pred else 1.0
    recall = matched / gold if gold else 1.0
    f1 = 2 * matched / (pred + gold) if pred + gold else 1.0
    return precision, recall, f1


def word_f1(
    predicted: Sequence[SpanSet], gold: Sequence[SpanSet], corpus: Corpus
) -> EvalReport:
    """Aggregate word-level F1 over records; per-record multisets intersect."""
    pred_by_id: dict[str, SpanSet] = {}
    gold_by_id: dict[str, SpanSet] = {}
    for target, sets in ((pred_by_id, predicted), (gold_by_id, gold)):
        for spanset in sets:
            if corpus.get(spanset.record_id) is None:
                raise UnknownRecord(f"record {spanset.record_id!r} not in corpus")
            target[spanset.record_id] = spanset
    matched = pred_total = gold_total = 0
    empty: Counter = Counter()
    for rid in sorted(set(pred_by_id) | set(gold_by_id)):
        text = corpus.get(rid).text
        p = covered_surfaces(pred_by_id[rid], text) if rid in pred_by_id else empty
        g = covered_surfaces(gold_by_id[rid], text) if rid in gold_by_id else empty
        overlap = p & g
        matched += sum(overlap.values())
        pred_total += sum(p.values())
        gold_total += sum(g.values())
    precision, recall, f1 = _prf(matched, pred_total, gold_total)
    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        gold_tokens=gold_total,
        pred_tokens=pred_total,
        matched_tokens=matched,
    )


def consistency(run_a: ResultSet, run_b: ResultSet, corpus: Corpus) -> EvalReport:
    """Agreement between two runs of the same plan over the same corpus."""
    if run_a.plan_id != run_b.plan_id:
        raise PlanMismatch(f"plan ids differ: {run_a.plan_id} vs {run_b.plan_id}")
    rows_a = {row.record_id: row.fields for row in run_a.rows}
    rows_b = {row.record_id: row.fields for row in run_b.rows}
    for rid in set(rows_a) | set(rows_b):
        if corpus.get(rid) is None:
            raise UnknownRecord(f"record {rid!r} not in corpus")

    bool_fields: set[str] = set()
    span_fields: set[str] = set()
    for fields in list(rows_a.values()) + list(rows_b.values()):
        for name, value in fields.items():
            if isinstance(value, bool):
                bool_fields.add(name)
            elif isinstance(value, SpanSet):
                span_fields.add(name)

    # Accuracy: boolean agreement over the union of survivors; with no
    # boolean fields, fall back to survival agreement over the whole corpus.
    if bool_fields:
        union = set(rows_a) | set(rows_b)
        agree = total = 0
        for rid in union:
            for name in bool_fields:
                va = bool(rows_a.get(rid, {}).get(name, False))
                vb = bool(rows_b.get(rid, {}).get(name, False))
                agree += va == vb
                total += 1
        accuracy = agree / total if total else 1.0
    else:
        agree = sum((r.id in rows_a) == (r.id in rows_b) for r in corpus.records)
        accuracy = agree / len(corpus)

    both = [r.id for r in corpus.records if r.id in rows_a and r.id in rows_b]
    matched = pred_total = gold_total = 0
    per_field: dict[str, dict[str, float]] = {}
    empty: Counter = Counter()
    for name in sorted(span_fields):
        f_matched = f_pred = f_gold = 0
        for rid in both:
            text = corpus.get(rid).text
            va = rows_a[rid].get(name)
            vb = rows_b[rid].get(name)
            p = covered_surfaces(va, text) if isinstance(va, SpanSet) else empty
            g = covered_surfaces(vb, text) if isinstance(vb, SpanSet) else empty
            overlap = p & g
            f_matched += sum(overlap.values())
            f_pred += sum(p.values())
            f_gold += sum(g.values())
        f_precision, f_recall, f_f1 = _prf(f_matched, f_pred, f_gold)
        per_field[name] = {"precision": f_precision, "recall": f_recall, "f1": f_f1}
        matched += f_matched
        pred_total += f_pred
        gold_total += f_gold
    precision, recall, f1 = _prf(matched, pred_total, gold_total)

    if not rows_a and not rows_b:
        jaccard = 1.0
    else:
        inter = len(set(rows_a) & set(rows_b))
        union_n = len(set(rows_a) | set(rows_b))
        jaccard = inter / union_n
    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        gold_tokens=gold_total,
        pred_tokens=pred_total,
        matched_tokens=matched,
        accuracy=accuracy,
        jaccard=jaccard,
        per_field=per_field,
    )


def render_report(report: EvalReport, format: str = "json") -> str:
    """Serialize a report as canonical JSON or a markdown table."""
    if format == "json":
        return json.dumps(report.to_dict(), sort_keys=True, ensure_ascii=False)
    if format != "markdown":
        raise ValueError(f"unknown report format {format!r}")
    rows = [("precision", report.precision), ("recall", report.recall), ("f1", report.f1)]
    if report.accuracy is not None:
        rows.append(("accuracy", report.accuracy))
    if report.jaccard is not None:
        rows.append(("jaccard", report.jaccard))
    rows += [
        ("gold_tokens", report.gold_tokens),
        ("pred_tokens", report.pred_tokens),
        ("matched_tokens", report.matched_tokens),
    ]
    lines = ["| metric | value |", "| --- | --- |"]
    for name, value in rows:
        rendered = f"{value:.3f}" if isinstance(value, float) else str(value)
        lines.append(f"| {name} | {rendered} |")
    if report.per_field:
        for name in sorted(report.per_field):
            scores = report.per_field[name]
            lines.append(f"| f1[{name}] | {scores['f1']:.3f} |")
    return "\n".join(lines)
