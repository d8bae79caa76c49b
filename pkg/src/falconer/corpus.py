"""Corpus ingestion, deterministic tokenization, and seeded sampling.

The tokenizer here ("tok-v1") is the single definition of a "word" used
everywhere downstream: BIO alignment, word-level F1, and the mock backend's
keyword matching. Its rule is frozen: split on maximal runs of Unicode
whitespace, then peel maximal leading and trailing runs of Unicode punctuation
off each chunk into their own tokens. Interior punctuation stays attached, so
"don't" is one token. Offsets index Unicode scalar values of the original
string, never bytes.
"""

from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

from .errors import DuplicateId, EmptyCorpus, InvalidFraction, MalformedLine
from .seeding import sample_indices

TOKENIZER_VERSION = "tok-v1"


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int  # exclusive


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    def __getitem__(self, i: int) -> Token:
        return self.tokens[i]

    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    text: str
    meta: Mapping[str, str] | None = None


@dataclass(frozen=True)
class Corpus:
    records: tuple[CorpusRecord, ...]
    source: str = ""
    _by_id: dict[str, CorpusRecord] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        by_id = {r.id: r for r in self.records}
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[CorpusRecord]:
        return iter(self.records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._by_id

    def get(self, record_id: str) -> CorpusRecord | None:
        return self._by_id.get(record_id)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> TokenSequence:
    """Split text into tok-v1 tokens with exact offsets into ``text``."""
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        tokens.extend(_split_chunk(text, i, j))
        i = j
    return TokenSequence(tuple(tokens))


def _split_chunk(text: str, start: int, end: int) -> list[Token]:
    """Peel leading/trailing punctuation runs off text[start:end]."""
    lead = start
    while lead < end and _is_punct(text[lead]):
        lead += 1
    out: list[Token] = []
    if lead > start:
        out.append(Token(text[start:lead], start, lead))
    if lead == end:
        return out
    trail = end
    while trail > lead and _is_punct(text[trail - 1]):
        trail -= 1
    # lead < trail is guaranteed: at least one non-punctuation char remains
    out.append(Token(text[lead:trail], lead, trail))
    if trail < end:
        out.append(Token(text[trail:end], trail, end))
    return out


def load_corpus(path: str | Path, format: str = "jsonl") -> Corpus:
    """Load a JSONL corpus: one object per line with "text", optional "id"/"meta".

    Missing ids are auto-assigned from the zero-based physical line number
    ("rec-000017"). Blank lines are skipped. Error line numbers are 1-based.
    """
    if format != "jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    path = Path(path)
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            if not line.strip():
                continue
            line_no = idx + 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise MalformedLine(line_no) from None
            if not isinstance(obj, dict):
                raise MalformedLine(line_no, "expected a JSON object")
            text = obj.get("text")
            if not isinstance(text, str):
                raise MalformedLine(line_no, 'missing string field "text"')
            rec_id = obj.get("id")
            if rec_id is None:
                rec_id = f"rec-{idx:06d}"
            elif not isinstance(rec_id, str) or not rec_id:
                raise MalformedLine(line_no, '"id" must be a non-empty string')
            meta = obj.get("meta")
            if meta is not None:
                if not isinstance(meta, dict) or not all(
                    isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
                ):
                    raise MalformedLine(line_no, '"meta" must map strings to strings')
            if rec_id in seen:
                raise DuplicateId(rec_id)
            seen.add(rec_id)
            records.append(CorpusRecord(id=rec_id, text=text, meta=meta))
    if not records:
        raise EmptyCorpus(f"no records in {path}")
    return Corpus(records=tuple(records), source=str(path))


def sample_fraction(corpus: Corpus, fraction: float, seed: int) -> Corpus:
    """Uniformly sample ceil(fraction * |records|) records without replacement.

    Order-preserving and deterministic in (corpus, fraction, seed).
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidFraction(fraction)
    if not corpus.records:
        raise EmptyCorpus("cannot sample an empty corpus")
    n = len(corpus.records)
    target = fraction * n
    # ceil, but immune to float noise (0.07 * 100 == 7.000000000000001)
    nearest = round(target)
    k = nearest if math.isclose(target, nearest, rel_tol=0, abs_tol=1e-9) else math.ceil(target)
    k = min(max(k, 1), n)
    chosen = sample_indices(n, k, seed)
    return Corpus(
        records=tuple(corpus.records[i] for i in chosen),
        source=corpus.source,
    )
