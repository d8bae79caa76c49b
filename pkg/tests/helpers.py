"""Shared test helpers: scripted backends and corpus builders."""

from __future__ import annotations

from typing import Sequence

from falconer.backends.base import (
    Backend,
    BackendDescriptor,
    ClassifyItem,
    ClassifyResult,
    ExtractItem,
    RawSpan,
)
from falconer.corpus import Corpus, CorpusRecord, tokenize
from falconer.errors import BackendUnavailable
from falconer.seeding import derive_seed


def make_corpus(texts: Sequence[str], prefix: str = "r") -> Corpus:
    records = tuple(
        CorpusRecord(id=f"{prefix}{i:04d}", text=t, meta={}) for i, t in enumerate(texts)
    )
    return Corpus(records=records)


class ScriptedBackend(Backend):
    """Deterministic pseudo-random scores and spans keyed by (seed, item).

    Scores come from a hash of (label, text), so any test can recompute the
    exact value. Extraction returns the tokens whose per-token hash is even,
    each as its own span. A text listed in fail_texts raises
    BackendUnavailable when it reaches the provider layer.
    """

    def __init__(self, seed: int = 0, descriptor: BackendDescriptor | None = None,
                 cache=None, fail_texts: frozenset[str] = frozenset()):
        if descriptor is None:
            descriptor = BackendDescriptor(id=f"scripted-{seed}", kind="mock")
        super().__init__(descriptor, cache=cache)
        self.seed = seed
        self.fail_texts = fail_texts

    def score_of(self, label: str, text: str) -> float:
        return (derive_seed(self.seed, label, text) % 1000001) / 1000000

    def _classify_batch(self, items: Sequence[ClassifyItem]) -> list[ClassifyResult]:
        out = []
        for item in items:
            if item.text in self.fail_texts:
                raise BackendUnavailable("scripted failure")
            out.append(ClassifyResult.from_score(self.score_of(item.label, item.text)))
        return out

    def _extract_batch(self, items: Sequence[ExtractItem]) -> list[list[RawSpan]]:
        out: list[list[RawSpan]] = []
        for item in items:
            if item.text in self.fail_texts:
                raise BackendUnavailable("scripted failure")
            spans: list[RawSpan] = []
            for tok in tokenize(item.text):
                if derive_seed(self.seed, item.instruction, tok.surface, tok.start) % 2 == 0:
                    spans.append((tok.start, tok.end, tok.surface))
            out.append(spans)
        return out


class PresetScoreBackend(Backend):
    """Classifier that replays a fixed text→score table (for oracle tests)."""

    def __init__(self, scores: dict[str, float], descriptor: BackendDescriptor | None = None):
        if descriptor is None:
            descriptor = BackendDescriptor(id="preset", kind="mock")
        super().__init__(descriptor)
        self.scores = scores

    def _classify_batch(self, items: Sequence[ClassifyItem]) -> list[ClassifyResult]:
        return [ClassifyResult.from_score(self.scores[item.text]) for item in items]

    def _extract_batch(self, items: Sequence[ExtractItem]) -> list[list[RawSpan]]:
        return [[] for _ in items]
