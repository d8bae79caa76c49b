"""Deterministic rules-file backend.

Classification matches keywords as whole tok-v1 tokens, case-insensitively;
extraction patterns are literals plus a single "<digits>" class (one or more
ASCII digits, maximal run), deliberately not a regex dialect so two
implementations of the rules file agree byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from ..corpus import tokenize
from .base import (
    Backend,
    BackendDescriptor,
    ClassifyItem,
    ClassifyResult,
    ExtractItem,
    RawSpan,
)
from .cache import ResponseCache

DIGITS = "0123456789"


@dataclass(frozen=True)
class ClassifyRule:
    instruction_contains: str
    keywords: tuple[str, ...]


@dataclass(frozen=True)
class ExtractRule:
    instruction_contains: str
    patterns: tuple[str, ...]


def load_rules(source: str | Path | dict[str, Any]) -> tuple[tuple[ClassifyRule, ...], tuple[ExtractRule, ...]]:
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        doc = source
    classify = tuple(
        ClassifyRule(r["instruction_contains"], tuple(r["keywords"]))
        for r in doc.get("classify", [])
    )
    extract = tuple(
        ExtractRule(r["instruction_contains"], tuple(r["patterns"]))
        for r in doc.get("extract", [])
    )
    return classify, extract


def match_pattern(pattern: str, text: str) -> list[tuple[int, int]]:
    """All matches of a literal+<digits> pattern, left to right, maximal digits."""
    segments = pattern.split("<digits>")
    if len(segments) == 1:
        if not pattern:
            return []
        out = []
        start = 0
        while True:
            i = text.find(pattern, start)
            if i < 0:
                return out
            out.append((i, i + len(pattern)))
            start = i + len(pattern)

    matches: list[tuple[int, int]] = []
    pos = 0
    n = len(text)
    while pos <= n:
        i = text.find(segments[0], pos) if segments[0] else pos
        if i < 0 or i > n:
            break
        cursor = i + len(segments[0])
        ok = True
        for literal in segments[1:]:
            run = cursor
            while run < n and text[run] in DIGITS:
                run += 1
            if run == cursor:  # <digits> needs at least one digit
                ok = False
                break
            cursor = run
            if literal:
                if text.startswith(literal, cursor):
                    cursor += len(literal)
                else:
                    ok = False
                    break
        if ok and cursor > i:
            matches.append((i, cursor))
            pos = cursor
        else:
            pos = i + 1
    return matches


def _keyword_hits(text_surfaces: list[str], keyword: str) -> bool:
    """Whole-token match; multiword keywords match as a token subsequence."""
    want = [t.lower() for t in tokenize(keyword).surfaces()]
    if not want:
        return False
    limit = len(text_surfaces) - len(want)
    return any(text_surfaces[i : i + len(want)] == want for i in range(limit + 1))


class MockBackend(Backend):
    def __init__(
        self,
        rules: str | Path | dict[str, Any],
        descriptor: BackendDescriptor | None = None,
        cache: ResponseCache | None = None,
        max_inflight: int = 8,
    ):
        if descriptor is None:
            descriptor = BackendDescriptor(id="mock", kind="mock")
        super().__init__(descriptor, cache=cache, max_inflight=max_inflight)
        self.classify_rules, self.extract_rules = load_rules(rules)

    def _classify_batch(self, items: Sequence[ClassifyItem]) -> list[ClassifyResult]:
        out = []
        for item in items:
            rule = next(
                (
                    r
                    for r in self.classify_rules
                    if r.instruction_contains.lower() in item.label.lower()
                ),
                None,
            )
            score = 0.0
            if rule is not None:
                surfaces = [t.lower() for t in tokenize(item.text).surfaces()]
                if any(_keyword_hits(surfaces, kw) for kw in rule.keywords):
                    score = 1.0
            out.append(ClassifyResult.from_score(score))
        return out

    def _extract_batch(self, items: Sequence[ExtractItem]) -> list[list[RawSpan]]:
        out: list[list[RawSpan]] = []
        for item in items:
            rule = next(
                (
                    r
                    for r in self.extract_rules
                    if r.instruction_contains.lower() in item.instruction.lower()
                ),
                None,
            )
            if rule is None:
                out.append([])
                continue
            candidates: list[tuple[int, int]] = []
            for pattern in rule.patterns:
                candidates.extend(match_pattern(pattern, item.text))
            # prefer earlier, then longer; overlap check also eats duplicates
            candidates.sort(key=lambda m: (m[0], -(m[1] - m[0])))
            spans: list[RawSpan] = []
            prev_end = -1
            for start, end in candidates:
                if start < prev_end:
                    continue
                spans.append((start, end, item.text[start:end]))
                prev_end = end
            out.append(spans)
        return out
