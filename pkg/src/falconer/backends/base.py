"""Uniform classify/extract dispatch shared by every inference provider.

The base class owns everything that must behave identically across providers:
cache lookup, chunking into <= max_batch wire requests, optional thread-pool
fan-out with order-restoring merge, usage counters, span sanitization, and the
simulated-latency mode that makes speed-ratio tests machine-independent.
Subclasses implement only the wire calls (_classify_batch / _extract_batch).
"""

from __future__ import annotations

import dataclasses
import logging
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import Executor as PoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from ..errors import BackendError, FalconerError, ProtocolError
from ..primitives import Span, SpanSet
from .cache import ResponseCache, cache_key

log = logging.getLogger(__name__)

# (start, end, surface-or-None) as received from a provider, pre-validation
RawSpan = tuple[Any, Any, Any]

BACKEND_KINDS = frozenset({"mock", "http_proxy", "llm_annotator"})


@dataclass(frozen=True)
class ClassifyItem:
    text: str
    label: str


@dataclass(frozen=True)
class ClassifyResult:
    score: float
    answer: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.answer not in ("yes", "no"):
            raise ValueError(f"answer must be yes|no, got {self.answer!r}")
        if (self.answer == "yes") != (self.score >= 0.5):
            raise ValueError(f"answer {self.answer!r} inconsistent with score {self.score}")

    @classmethod
    def from_score(cls, score: float) -> "ClassifyResult":
        return cls(score=score, answer="yes" if score >= 0.5 else "no")


@dataclass(frozen=True)
class ExtractItem:
    text: str
    instruction: str


@dataclass(frozen=True)
class BackendDescriptor:
    id: str
    kind: str
    per_call: float = 0.0
    per_1k_chars: float = 0.0
    max_batch: int = 64
    # When set, wall time is charged as items * this value instead of being
    # measured, so speedup ratios are deterministic across machines.
    sim_latency_per_item: float | None = None
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.per_call < 0 or self.per_1k_chars < 0:
            raise ValueError("costs must be non-negative")


@dataclass
class BackendStats:
    wire_calls: int = 0
    items_sent: int = 0
    chars_sent: int = 0
    cache_hits: int = 0
    dropped_spans: int = 0
    wall_time: float = 0.0

    def snapshot(self) -> "BackendStats":
        return dataclasses.replace(self)

    def since(self, earlier: "BackendStats") -> "BackendStats":
        return BackendStats(
            wire_calls=self.wire_calls - earlier.wire_calls,
            items_sent=self.items_sent - earlier.items_sent,
            chars_sent=self.chars_sent - earlier.chars_sent,
            cache_hits=self.cache_hits - earlier.cache_hits,
            dropped_spans=self.dropped_spans - earlier.dropped_spans,
            wall_time=self.wall_time - earlier.wall_time,
        )


class Backend(ABC):
    """Shared dispatch; providers fill in the two wire methods."""

    def __init__(
        self,
        descriptor: BackendDescriptor,
        cache: ResponseCache | None = None,
        max_inflight: int = 8,
    ):
        self.descriptor = descriptor
        self.cache = cache
        self.stats = BackendStats()
        self._lock = threading.Lock()
        self._inflight = threading.BoundedSemaphore(max_inflight)

    # --- provider wire calls ------------------------------------------------

    @abstractmethod
    def _classify_batch(self, items: Sequence[ClassifyItem]) -> list[ClassifyResult]:
        raise NotImplementedError

    @abstractmethod
    def _extract_batch(self, items: Sequence[ExtractItem]) -> list[list[RawSpan]]:
        raise NotImplementedError

    # --- public API -----------------------------------------------------------

    def classify(
        self,
        items: Sequence[ClassifyItem],
        *,
        batch: int | None = None,
        pool: PoolExecutor | None = None,
        use_cache: bool = True,
        on_error: str = "raise",
    ) -> list[ClassifyResult | None]:
        return self._dispatch(items, "label", batch, pool, use_cache, on_error)

    def extract(
        self,
        items: Sequence[ExtractItem],
        *,
        batch: int | None = None,
        pool: PoolExecutor | None = None,
        use_cache: bool = True,
        on_error: str = "raise",
    ) -> list[SpanSet | None]:
        return self._dispatch(items, "span", batch, pool, use_cache, on_error)

    # --- dispatch machinery -----------------------------------------------------

    @staticmethod
    def _instruction_of(item: ClassifyItem | ExtractItem) -> str:
        return item.label if isinstance(item, ClassifyItem) else item.instruction

    def _dispatch(
        self,
        items: Sequence[Any],
        primitive: str,
        batch: int | None,
        pool: PoolExecutor | None,
        use_cache: bool,
        on_error: str,
    ) -> list[Any]:
        if on_error not in ("raise", "none"):
            raise ValueError(f"unknown on_error mode {on_error!r}")
        n = len(items)
        if n == 0:
            return []
        results: list[Any] = [None] * n
        keys: list[str] | None = None
        miss: list[int] = list(range(n))

        if self.cache is not None and use_cache:
            keys = [
                cache_key(self.descriptor.id, primitive, self._instruction_of(it), it.text)
                for it in items
            ]
            miss = []
            hits = 0
            for i, key in enumerate(keys):
                value = self.cache.get(key)
                decoded = self._decode_cached(primitive, value) if value is not None else None
                if decoded is None:
                    miss.append(i)
                else:
                    results[i] = decoded
                    hits += 1
            if hits:
                with self._lock:
                    self.stats.cache_hits += hits

        size = self.descriptor.max_batch if not batch else min(batch, self.descriptor.max_batch)
        chunks = [miss[i : i + size] for i in range(0, len(miss), size)]

        def run_chunk(chunk: list[int]) -> list[Any]:
            chunk_items = [items[i] for i in chunk]
            with self._inflight:
                started = time.perf_counter()
                if primitive == "label":
                    out: list[Any] = self._classify_batch(chunk_items)
                else:
                    out = self._extract_batch(chunk_items)
                elapsed = time.perf_counter() - started
            if len(out) != len(chunk_items):
                raise ProtocolError(
                    f"backend returned {len(out)} results for {len(chunk_items)} items"
                )
            sim = self.descriptor.sim_latency_per_item
            with self._lock:
                self.stats.wire_calls += 1
                self.stats.items_sent += len(chunk_items)
                self.stats.chars_sent += sum(
                    len(it.text) + len(self._instruction_of(it)) for it in chunk_items
                )
                self.stats.wall_time += len(chunk_items) * sim if sim is not None else elapsed
            return out

        if pool is not None and len(chunks) > 1:
            futures = [pool.submit(run_chunk, chunk) for chunk in chunks]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except BackendError as exc:
                    outcomes.append(exc)
        else:
            outcomes = []
            for chunk in chunks:
                try:
                    outcomes.append(run_chunk(chunk))
                except BackendError as exc:
                    outcomes.append(exc)

        for chunk, outcome in zip(chunks, outcomes):
            if isinstance(outcome, BackendError):
                if on_error == "raise":
                    raise outcome
                log.warning("chunk of %d items failed: %s", len(chunk), outcome)
                continue  # leave None entries for this chunk
            for i, raw in zip(chunk, outcome):
                if primitive == "label":
                    value: Any = raw
                else:
                    value = SpanSet(record_id="", spans=self._sanitize_spans(items[i].text, raw))
                results[i] = value
                if keys is not None:
                    self.cache.put(keys[i], self._encode_cached(primitive, value))  # type: ignore[union-attr]
        return results

    def _sanitize_spans(self, text: str, raw: list[RawSpan]) -> tuple[Span, ...]:
        """Bounds-check, surface-check, sort, and de-overlap provider spans."""
        candidates: list[Span] = []
        dropped = 0
        for entry in raw:
            try:
                start, end, surface = entry
            except (TypeError, ValueError):
                dropped += 1
                continue
            if (
                not isinstance(start, int)
                or not isinstance(end, int)
                or isinstance(start, bool)
                or isinstance(end, bool)
                or not 0 <= start < end <= len(text)
            ):
                dropped += 1
                continue
            actual = text[start:end]
            if surface is not None and surface != actual:
                dropped += 1
                continue
            candidates.append(Span(start, end, actual))
        candidates.sort(key=lambda s: (s.start, s.end))
        kept: list[Span] = []
        prev_end = -1
        for span in candidates:
            if span.start < prev_end:
                dropped += 1
                continue
            kept.append(span)
            prev_end = span.end
        if dropped:
            with self._lock:
                self.stats.dropped_spans += dropped
            log.warning("dropped %d invalid span(s) from %s", dropped, self.descriptor.id)
        return tuple(kept)

    @staticmethod
    def _encode_cached(primitive: str, value: Any) -> dict[str, Any]:
        if primitive == "label":
            return {"score": value.score, "answer": value.answer}
        return {
            "spans": [
                {"start": s.start, "end": s.end, "surface": s.surface} for s in value.spans
            ]
        }

    @staticmethod
    def _decode_cached(primitive: str, value: dict[str, Any]) -> Any:
        try:
            if primitive == "label":
                return ClassifyResult(score=value["score"], answer=value["answer"])
            spans = tuple(
                Span(s["start"], s["end"], s["surface"]) for s in value["spans"]
            )
            return SpanSet(record_id="", spans=spans)
        except (KeyError, TypeError, ValueError, FalconerError):
            return None  # corrupt entry: treat as a miss
