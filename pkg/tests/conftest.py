"""Shared fixtures: the TED-style corpus, mock rules, and reference plans."""

from __future__ import annotations

from pathlib import Path

import pytest

from falconer import load_corpus, make_filter_extract, parse_plan
from falconer.backends import MockBackend

FIXTURES = Path(__file__).parent / "fixtures"

FINANCE_IDS = ["ted-00", "ted-02", "ted-10", "ted-12", "ted-14", "ted-16", "ted-18"]
HEALTH_IDS = ["ted-04", "ted-05", "ted-06", "ted-07", "ted-08"]
BRAIN_IDS = ["ted-06", "ted-07", "ted-08", "ted-09"]


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def ted_corpus_path() -> Path:
    return FIXTURES / "ted_corpus.jsonl"


@pytest.fixture(scope="session")
def ted_corpus(ted_corpus_path):
    return load_corpus(ted_corpus_path)


@pytest.fixture(scope="session")
def rules_path() -> Path:
    return FIXTURES / "mock_rules.json"


@pytest.fixture()
def mock_backend(rules_path):
    # Function-scoped: each test starts with zeroed counters.
    return MockBackend(rules_path)


@pytest.fixture()
def f1_plan():
    """The finance-then-lecturer two-stage reference plan."""
    return make_filter_extract("Is this text about finance?", "Extract the lecturer name")


@pytest.fixture()
def and_plan():
    """Filter on And(health, brain), then extract the lecturer."""
    return parse_plan(
        {
            "version": "plan-v1",
            "nodes": [
                {"id": "src", "kind": "Source"},
                {
                    "id": "health",
                    "kind": "Label",
                    "input": "src",
                    "instruction": "Is this text about health?",
                },
                {
                    "id": "brain",
                    "kind": "Label",
                    "input": "src",
                    "instruction": "Is this text about the brain?",
                },
                {"id": "both", "kind": "Bool", "op": "And", "inputs": ["health", "brain"]},
                {"id": "keep", "kind": "Filter", "input": "src", "predicate": "both"},
                {
                    "id": "who",
                    "kind": "Span",
                    "input": "keep",
                    "instruction": "Extract the lecturer name",
                },
                {
                    "id": "out",
                    "kind": "Output",
                    "fields": [{"name": "text", "node": "keep"}, {"name": "spans", "node": "who"}],
                },
            ],
            "output": "out",
        }
    )
