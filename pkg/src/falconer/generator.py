"""Manufacture supervision for proxy incubation.

Classification sets follow the score-rank-slice recipe: score every record,
stable-sort descending, take the top n as yes and the bottom n as no.
Extraction sets sample records, annotate them, and snap annotator character
spans outward to token boundaries so BIO tags and spans stay mutual
round-trips. The degradation transform re-draws each span's start uniformly
over {0..end} (token indices), preserving ends, to make deliberately sloppy
variants for robustness studies.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .backends.base import Backend, ClassifyItem, ExtractItem
from .corpus import TOKENIZER_VERSION, Corpus, TokenSequence, tokenize
from .errors import CorpusTooSmall, EmptyLabel, SampleTooLarge, UnalignedSpan, WrongKind
from .primitives import BioSequence, Span, SpanSet, encode_bio, render_nli_prompt
from .seeding import derive_seed, sample_indices

log = logging.getLogger(__name__)

DATASET_VERSION = "ds-v1"


@dataclass(frozen=True)
class ClassificationExample:
    record_id: str
    text: str
    answer: str  # yes | no
    score: float


@dataclass(frozen=True)
class ExtractionExample:
    record_id: str
    text: str
    spans: SpanSet
    bio: BioSequence


@dataclass(frozen=True)
class TrainingSet:
    kind: str  # classification | extraction
    label_or_instruction: str
    examples: tuple[Any, ...]
    provenance: Mapping[str, str]


def generate_classification_set(
    corpus: Corpus, label: str, n: int, scorer: Backend
) -> TrainingSet:
    """Top-n/bottom-n selection by scorer confidence, ties kept in corpus order."""
    if not label:
        raise EmptyLabel("label must be non-empty")
    if 2 * n > len(corpus):
        raise CorpusTooSmall(2 * n, len(corpus))
    items = [ClassifyItem(text=r.text, label=label) for r in corpus.records]
    results = scorer.classify(items)
    scores = [res.score for res in results]  # type: ignore[union-attr]
    if len(set(scores)) <= 1:
        log.warning("all %d scores identical (%.3f); ranking is order-only", len(scores), scores[0])

    ranked = sorted(range(len(corpus)), key=lambda i: -scores[i])  # stable on ties
    top = sorted(ranked[:n])
    bottom = sorted(ranked[-n:])
    examples = [
        ClassificationExample(
            record_id=corpus.records[i].id,
            text=corpus.records[i].text,
            answer="yes",
            score=scores[i],
        )
        for i in top
    ] + [
        ClassificationExample(
            record_id=corpus.records[i].id,
            text=corpus.records[i].text,
            answer="no",
            score=scores[i],
        )
        for i in bottom
    ]
    return TrainingSet(
        kind="classification",
        label_or_instruction=label,
        examples=tuple(examples),
        provenance={
            "backend": scorer.descriptor.id,
            "tokenizer": TOKENIZER_VERSION,
        },
    )


def _snap_and_merge(spans: Sequence[Span], tokens: TokenSequence) -> list[tuple[int, int]]:
    """Widen spans to enclosing token boundaries; merge overlapping ranges.

    Returns inclusive token-index ranges. Spans covering no token (e.g. inside
    an inter-token gap) are unanchorable and silently dropped.
    """
    ranges: list[tuple[int, int]] = []
    for span in spans:
        covered = [
            k for k, t in enumerate(tokens) if t.start < span.end and t.end > span.start
        ]
        if not covered:
            log.warning("span [%d,%d) covers no token; dropped", span.start, span.end)
            continue
        ranges.append((covered[0], covered[-1]))
    ranges.sort()
    merged: list[tuple[int, int]] = []
    for lo, hi in ranges:
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def _ranges_to_spanset(
    record_id: str, text: str, tokens: TokenSequence, ranges: Sequence[tuple[int, int]]
) -> SpanSet:
    spans = tuple(
        Span(tokens[lo].start, tokens[hi].end, text[tokens[lo].start : tokens[hi].end])
        for lo, hi in ranges
    )
    return SpanSet(record_id=record_id, spans=spans)


def generate_extraction_set(
    corpus: Corpus, instruction: str, n: int, seed: int, annotator: Backend
) -> TrainingSet:
    if n > len(corpus):
        raise SampleTooLarge(n, len(corpus))
    chosen = sample_indices(len(corpus), n, seed)
    records = [corpus.records[i] for i in chosen]
    results = annotator.extract(
        [ExtractItem(text=r.text, instruction=instruction) for r in records]
    )
    examples = []
    for record, res in zip(records, results):
        tokens = tokenize(record.text)
        ranges = _snap_and_merge(res.spans, tokens)  # type: ignore[union-attr]
        spanset = _ranges_to_spanset(record.id, record.text, tokens, ranges)
        examples.append(
            ExtractionExample(
                record_id=record.id,
                text=record.text,
                spans=spanset,
                bio=encode_bio(spanset, tokens),
            )
        )
    return TrainingSet(
        kind="extraction",
        label_or_instruction=instruction,
        examples=tuple(examples),
        provenance={
            "backend": annotator.descriptor.id,
            "tokenizer": TOKENIZER_VERSION,
            "seed": str(seed),
        },
    )


def degrade_spans(training_set: TrainingSet, seed: int) -> TrainingSet:
    """Re-draw each span start uniformly over {0..end} in token indices.

    Ends never move. Widened spans that collide merge left to right, keeping
    the later span's end, so span count never grows.
    """
    if training_set.kind != "extraction":
        raise WrongKind(f"cannot degrade a {training_set.kind} set")
    new_examples = []
    for ex in training_set.examples:
        tokens = tokenize(ex.text)
        ends = {t.end: k for k, t in enumerate(tokens)}
        degraded: list[tuple[int, int]] = []
        for ordinal, span in enumerate(ex.spans.spans):
            if span.end not in ends:
                raise UnalignedSpan(
                    f"span end {span.end} is not a token boundary in {ex.record_id!r}"
                )
            j = ends[span.end]
            rng = random.Random(derive_seed(seed, ex.record_id, ordinal))
            new_start = rng.randrange(j + 1)  # uniform over {0..j}
            degraded.append((new_start, j))
        merged: list[tuple[int, int]] = []
        for lo, hi in degraded:  # ends already ascending
            # A re-drawn start may reach back past several kept ranges, so
            # absorb every range it touches, not just the most recent one.
            while merged and lo <= merged[-1][1]:
                lo = min(lo, merged[-1][0])
                merged.pop()
            merged.append((lo, hi))
        spanset = _ranges_to_spanset(ex.record_id, ex.text, tokens, merged)
        new_examples.append(
            replace(ex, spans=spanset, bio=encode_bio(spanset, tokens))
        )
    provenance = dict(training_set.provenance)
    provenance["degraded"] = f"seed={seed}"
    return TrainingSet(
        kind="extraction",
        label_or_instruction=training_set.label_or_instruction,
        examples=tuple(new_examples),
        provenance=provenance,
    )


def _dump_line(obj: Mapping[str, Any]) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def emit_dataset(training_set: TrainingSet, directory: str | Path) -> dict[str, Any]:
    """Write the dataset directory; returns the manifest. Byte-deterministic."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    counts: dict[str, int] = {"examples": len(training_set.examples)}
    if training_set.kind == "classification":
        filename = "classification.jsonl"
        yes = 0
        for ex in training_set.examples:
            yes += ex.answer == "yes"
            prompt = render_nli_prompt(ex.text, training_set.label_or_instruction).rendered
            lines.append(
                _dump_line(
                    {
                        "id": ex.record_id,
                        "text": ex.text,
                        "label": training_set.label_or_instruction,
                        "answer": ex.answer,
                        "score": ex.score,
                        "prompt": prompt,
                    }
                )
            )
        counts["yes"] = yes
        counts["no"] = len(training_set.examples) - yes
    elif training_set.kind == "extraction":
        filename = "extraction.jsonl"
        total_spans = 0
        for ex in training_set.examples:
            total_spans += len(ex.spans)
            tokens = tokenize(ex.text)
            lines.append(
                _dump_line(
                    {
                        "id": ex.record_id,
                        "text": ex.text,
                        "instruction": training_set.label_or_instruction,
                        "spans": [
                            {"start": s.start, "end": s.end, "surface": s.surface}
                            for s in ex.spans.spans
                        ],
                        "bio": list(ex.bio.tags),
                        "tokens": [[t.surface, t.start, t.end] for t in tokens],
                    }
                )
            )
        counts["spans"] = total_spans
    else:
        raise WrongKind(f"cannot emit a {training_set.kind} set")

    payload = ("\n".join(lines) + "\n").encode("utf-8") if lines else b""
    (directory / filename).write_bytes(payload)
    digest = hashlib.sha256(payload).hexdigest()
    manifest = {
        "version": DATASET_VERSION,
        "kind": training_set.kind,
        "label_or_instruction": training_set.label_or_instruction,
        "counts": counts,
        "provenance": dict(training_set.provenance),
        "tokenizer": TOKENIZER_VERSION,
        "digest": f"sha256:{digest}",
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return manifest


def load_dataset(directory: str | Path) -> TrainingSet:
    """Read an emitted dataset directory back into a TrainingSet."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    kind = manifest["kind"]
    examples: list[Any] = []
    if kind == "classification":
        with (directory / "classification.jsonl").open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                examples.append(
                    ClassificationExample(
                        record_id=obj["id"],
                        text=obj["text"],
                        answer=obj["answer"],
                        score=obj["score"],
                    )
                )
    elif kind == "extraction":
        with (directory / "extraction.jsonl").open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                spans = SpanSet(
                    record_id=obj["id"],
                    spans=tuple(
                        Span(s["start"], s["end"], s["surface"]) for s in obj["spans"]
                    ),
                )
                examples.append(
                    ExtractionExample(
                        record_id=obj["id"],
                        text=obj["text"],
                        spans=spans,
                        bio=BioSequence(tags=tuple(obj["bio"])),
                    )
                )
    else:
        raise WrongKind(f"unknown dataset kind {kind!r}")
    return TrainingSet(
        kind=kind,
        label_or_instruction=manifest["label_or_instruction"],
        examples=tuple(examples),
        provenance=dict(manifest.get("provenance", {})),
    )
