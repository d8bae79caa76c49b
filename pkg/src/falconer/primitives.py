"""Semantic core of the two atomic operations.

Classification is rendered as an NLI yes/no prompt whose byte layout is frozen:
proxy models are fine-tuned against these exact bytes, so any drift (even
whitespace) silently degrades them. Extraction supervision is carried as BIO
tag sequences over tok-v1 tokens, with encode/decode as exact inverses for
token-aligned span sets. NTE labeling mines repeated spans: continuation
tokens that literally reoccur in the context become B/I targets.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field

from .corpus import TokenSequence, tokenize
from .errors import (
    BadSplit,
    EmptyLabel,
    MalformedBio,
    OverlappingSpans,
    UnalignedSpan,
)

# Frozen prompt layout, including the space before "?" and no trailing newline.
NLI_PREFIX = "User:\nChoices:\nyes\nno\n"
NLI_QUESTION = " Question: Based on above sentence, is the following sentence true or not ?\nThis text is about "
NLI_SUFFIX = "\nAssistant:\nAnswer:"

VALID_TAGS = frozenset({"B", "I", "O"})


@dataclass(frozen=True)
class Span:
    start: int
    end: int  # exclusive
    surface: str

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span offsets [{self.start}, {self.end})")
        if len(self.surface) != self.end - self.start:
            raise ValueError(
                f"surface length {len(self.surface)} != span width {self.end - self.start}"
            )


@dataclass(frozen=True)
class SpanSet:
    record_id: str
    spans: tuple[Span, ...] = ()

    def __post_init__(self) -> None:
        prev_end = -1
        prev_start = -1
        for s in self.spans:
            if s.start < prev_start:
                raise ValueError("spans must be sorted by start")
            if s.start < prev_end:
                raise OverlappingSpans(
                    f"span at {s.start} overlaps previous span ending at {prev_end}"
                )
            prev_start, prev_end = s.start, s.end

    def __len__(self) -> int:
        return len(self.spans)

    def __bool__(self) -> bool:
        return bool(self.spans)


@dataclass(frozen=True)
class BioSequence:
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        bad = next((t for t in self.tags if t not in VALID_TAGS), None)
        if bad is not None:
            raise ValueError(f"unknown BIO tag {bad!r}")

    def __len__(self) -> int:
        return len(self.tags)


@dataclass(frozen=True)
class NliPrompt:
    rendered: str
    label: str
    choices: tuple[str, str] = ("yes", "no")


def render_nli_prompt(text: str, label: str) -> NliPrompt:
    """Render the classification prompt for (text, label), byte-stable."""
    if not label:
        raise EmptyLabel("classification label must be non-empty")
    rendered = NLI_PREFIX + text + NLI_QUESTION + label + NLI_SUFFIX
    return NliPrompt(rendered=rendered, label=label)


def decode_bio(
    tags: BioSequence,
    tokens: TokenSequence,
    text: str,
    mode: str = "lenient",
    record_id: str = "",
) -> SpanSet:
    """Turn a BIO sequence into character spans over ``text``.

    Each maximal B(I)* run becomes one span from the run's first token start
    to its last token end. Lenient mode treats I-after-O and I-at-0 as B;
    strict mode raises MalformedBio instead.
    """
    if mode not in ("lenient", "strict"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if len(tags) != len(tokens):
        raise ValueError(f"{len(tags)} tags for {len(tokens)} tokens")
    spans: list[Span] = []
    run_start: int | None = None  # token index of current run start
    run_end = -1

    def close_run() -> None:
        nonlocal run_start
        if run_start is not None:
            start = tokens[run_start].start
            end = tokens[run_end].end
            spans.append(Span(start, end, text[start:end]))
            run_start = None

    for i, tag in enumerate(tags.tags):
        if tag == "B":
            close_run()
            run_start, run_end = i, i
        elif tag == "I":
            if run_start is None:
                if mode == "strict":
                    raise MalformedBio(i)
                run_start, run_end = i, i
            else:
                run_end = i
        else:
            close_run()
    close_run()
    return SpanSet(record_id=record_id, spans=tuple(spans))


def encode_bio(spans: SpanSet, tokens: TokenSequence) -> BioSequence:
    """Encode token-aligned, non-overlapping spans as BIO tags."""
    starts = {t.start: i for i, t in enumerate(tokens)}
    ends = {t.end: i for i, t in enumerate(tokens)}
    tags = ["O"] * len(tokens)
    for span in spans.spans:
        i = starts.get(span.start)
        j = ends.get(span.end)
        if i is None or j is None or i > j:
            raise UnalignedSpan(span)
        if any(tags[k] != "O" for k in range(i, j + 1)):
            raise OverlappingSpans(f"span {span} collides with an earlier span")
        tags[i] = "B"
        for k in range(i + 1, j + 1):
            tags[k] = "I"
    return BioSequence(tags=tuple(tags))


def is_punctuation_token(surface: str) -> bool:
    return bool(surface) and all(
        unicodedata.category(ch).startswith("P") for ch in surface
    )


def nte_label(
    text: str, split: int, min_len: int = 1, max_len: int = 8
) -> tuple[str, BioSequence]:
    """Label continuation tokens that repeat token sequences from the context.

    Greedy left-to-right over the continuation: at each position, the longest
    n-gram (min_len..max_len) whose exact token sequence occurs in the context
    is marked B I...; everything else stays O. Matching is case-sensitive.
    Punctuation-only tokens never take part in a match: they are tagged O and
    no marked n-gram may contain one.
    """
    tokens = tokenize(text)
    n = len(tokens)
    if not 0 < split < n:
        raise BadSplit(split, n)
    if not 1 <= min_len <= max_len:
        raise ValueError(f"need 1 <= min_len <= max_len, got {min_len}..{max_len}")
    surfaces = tokens.surfaces()
    context_surfaces = surfaces[:split]
    continuation = surfaces[split:]
    punct = [is_punctuation_token(s) for s in continuation]
    context_str = text[: tokens[split].start]

    def occurs(gram: list[str]) -> bool:
        limit = len(context_surfaces) - len(gram)
        return any(
            context_surfaces[i : i + len(gram)] == gram for i in range(limit + 1)
        )

    tags = ["O"] * len(continuation)
    p = 0
    while p < len(continuation):
        if punct[p]:
            p += 1
            continue
        matched = 0
        for n_len in range(min(max_len, len(continuation) - p), min_len - 1, -1):
            if any(punct[p : p + n_len]):
                continue
            if occurs(continuation[p : p + n_len]):
                matched = n_len
                break
        if matched:
            tags[p] = "B"
            for k in range(p + 1, p + matched):
                tags[k] = "I"
            p += matched
        else:
            p += 1
    return context_str, BioSequence(tags=tuple(tags))
