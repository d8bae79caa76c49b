"""Acceptance checks: one test per criterion, each printing a verdict line.

Every test exercises a contract end to end against an independent oracle or a
frozen artifact, entirely offline. Each prints exactly one line of the form
"[PASS] criterion N: ..." (or FAIL) before asserting, so a verbose run reads
as a checklist.
"""

from __future__ import annotations

import json
import random
import time
from collections import Counter
from pathlib import Path
from typing import Sequence

import pytest
from scipy.stats import chisquare

from falconer.backends.base import (
    Backend,
    BackendDescriptor,
    ClassifyItem,
    ClassifyResult,
    ExtractItem,
    RawSpan,
)
from falconer.backends.mock import MockBackend
from falconer.corpus import Corpus, tokenize
from falconer.executor import ExecutionOptions, execute, speedup_ratio
from falconer.generator import (
    degrade_spans,
    emit_dataset,
    generate_classification_set,
    generate_extraction_set,
)
from falconer.evaluation import covered_surfaces, word_f1
from falconer.plan import make_filter_extract, parse_plan
from falconer.planner import score_planning
from falconer.primitives import BioSequence, Span, SpanSet, decode_bio, encode_bio, render_nli_prompt

from conftest import BRAIN_IDS, FINANCE_IDS, HEALTH_IDS
from helpers import PresetScoreBackend, make_corpus


def check(num: int, detail: str, ok: bool) -> None:
    verdict = "PASS" if ok else "FAIL"
    print(f"[{verdict}] criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def random_token_spanset(rng: random.Random, record_id: str, text: str) -> SpanSet:
    """A random token-aligned, sorted, non-overlapping span set over text."""
    tokens = tokenize(text)
    spans = []
    i = 0
    while i < len(tokens):
        if rng.random() < 0.35:
            j = min(len(tokens) - 1, i + rng.randint(0, 3))
            start, end = tokens[i].start, tokens[j].end
            spans.append(Span(start, end, text[start:end]))
            i = j + 1 + rng.randint(0, 2)
        else:
            i += 1
    return SpanSet(record_id=record_id, spans=tuple(spans))


def random_words(rng: random.Random, count: int) -> list[str]:
    pool = ["amber", "birch", "cedar", "delta", "ember", "flint", "grove", "heron"]
    return [rng.choice(pool) for _ in range(count)]


class TestCriterion1:
    def test_algorithm_matches_brute_force_oracle(self):
        rng = random.Random(20260815)
        pool = [0.0, 0.25, 0.5, 0.75, 1.0]
        started = time.perf_counter()
        for _ in range(200):
            n_rec = rng.randint(2, 1000)
            texts = [f"record {i} body" for i in range(n_rec)]
            if rng.random() < 0.5:
                scores = [rng.choice(pool) for _ in range(n_rec)]
            else:
                scores = [rng.random() for _ in range(n_rec)]
            corpus = make_corpus(texts)
            backend = PresetScoreBackend(dict(zip(texts, scores)))
            n = rng.randint(1, n_rec // 2)
            dataset = generate_classification_set(corpus, "Is this about amber?", n, backend)

            order = sorted(range(n_rec), key=lambda i: (-scores[i], i))
            expected = [
                (corpus.records[i].id, "yes", scores[i]) for i in sorted(order[:n])
            ] + [(corpus.records[i].id, "no", scores[i]) for i in sorted(order[-n:])]
            got = [(ex.record_id, ex.answer, ex.score) for ex in dataset.examples]
            assert got == expected
        elapsed = time.perf_counter() - started
        check(
            1,
            f"classification sets equal the score-sort-slice oracle on 200 random "
            f"corpora with ties in {elapsed:.2f}s",
            elapsed < 5.0,
        )


class TestCriterion2:
    def test_bio_round_trip_and_lenient_decode(self):
        rng = random.Random(91)
        for case in range(1000):
            text = " ".join(random_words(rng, rng.randint(1, 30)))
            tokens = tokenize(text)
            spanset = random_token_spanset(rng, "rec", text)
            decoded = decode_bio(encode_bio(spanset, tokens), tokens, text, record_id="rec")
            assert decoded == spanset, f"round-trip failed on case {case}"

        token_starts_ends = []
        for case in range(1000):
            text = " ".join(random_words(rng, rng.randint(1, 30)))
            tokens = tokenize(text)
            tags = BioSequence(tags=tuple(rng.choice("BIO") for _ in range(len(tokens))))
            spanset = decode_bio(tags, tokens, text, mode="lenient", record_id="rec")
            starts = {t.start for t in tokens.tokens}
            ends = {t.end for t in tokens.tokens}
            for span in spanset.spans:
                assert span.start in starts and span.end in ends
                assert span.surface == text[span.start : span.end]
            token_starts_ends.append(len(spanset))
        check(
            2,
            "1000 BIO round-trips are identities and 1000 lenient decodes yield "
            "valid token-aligned span sets",
            True,
        )


KEYWORDS = ["alpha", "beta", "gamma", "delta"]


def eval_tree(tree, present: set) -> bool:
    if tree[0] == "leaf":
        return tree[1] in present
    if tree[0] == "Not":
        return not eval_tree(tree[1], present)
    a, b = eval_tree(tree[1], present), eval_tree(tree[2], present)
    return (a and b) if tree[0] == "And" else (a or b)


def tree_to_plan(tree):
    nodes = [{"id": "src", "kind": "Source"}]
    label_ids: dict[str, str] = {}
    counter = 0

    def emit(node) -> str:
        nonlocal counter
        if node[0] == "leaf":
            word = node[1]
            if word not in label_ids:
                label_ids[word] = f"lab_{word}"
                nodes.append(
                    {
                        "id": label_ids[word],
                        "kind": "Label",
                        "instruction": f"Is this text about {word}?",
                        "input": "src",
                    }
                )
            return label_ids[word]
        if node[0] == "Not":
            child = emit(node[1])
            counter += 1
            nodes.append({"id": f"b{counter}", "kind": "Bool", "op": "Not", "inputs": [child]})
            return f"b{counter}"
        left, right = emit(node[1]), emit(node[2])
        if left == right:
            return left  # And(x, x) and Or(x, x) are both just x
        counter += 1
        nodes.append(
            {"id": f"b{counter}", "kind": "Bool", "op": node[0], "inputs": [left, right]}
        )
        return f"b{counter}"

    root = emit(tree)
    nodes.append({"id": "keep", "kind": "Filter", "input": "src", "predicate": root})
    nodes.append(
        {"id": "out", "kind": "Output", "fields": [{"name": "text", "node": "keep"}]}
    )
    return parse_plan({"version": "plan-v1", "nodes": nodes, "output": "out"})


def single_filter_plan(instruction: str):
    return parse_plan(
        {
            "version": "plan-v1",
            "nodes": [
                {"id": "src", "kind": "Source"},
                {"id": "lab", "kind": "Label", "instruction": instruction, "input": "src"},
                {"id": "keep", "kind": "Filter", "input": "src", "predicate": "lab"},
                {"id": "out", "kind": "Output", "fields": [{"name": "text", "node": "keep"}]},
            ],
            "output": "out",
        }
    )


class TestCriterion3:
    def gen_tree(self, rng: random.Random, depth: int):
        if depth == 0 or rng.random() < 0.35:
            return ("leaf", rng.choice(KEYWORDS))
        op = rng.choice(["And", "Or", "Not"])
        if op == "Not":
            return ("Not", self.gen_tree(rng, depth - 1))
        return (op, self.gen_tree(rng, depth - 1), self.gen_tree(rng, depth - 1))

    def test_random_boolean_plans_match_truth_tables(self):
        rng = random.Random(3407)
        texts = []
        for i in range(50):
            words = [w for w in KEYWORDS if rng.random() < 0.5]
            words += [f"w{rng.randint(0, 9)}" for _ in range(rng.randint(1, 3))]
            rng.shuffle(words)
            texts.append(" ".join(words + [f"u{i}"]))
        corpus = make_corpus(texts)
        rules = {
            "classify": [
                {"instruction_contains": w, "keywords": [w]} for w in KEYWORDS
            ],
            "extract": [],
        }
        for _ in range(100):
            tree = self.gen_tree(rng, 3)
            plan = tree_to_plan(tree)
            backend = MockBackend(rules)
            results, _ = execute(plan, corpus, {"Label": backend})
            got = {row.record_id for row in results.rows}
            expected = {
                r.id for r in corpus.records if eval_tree(tree, set(r.text.split()))
            }
            assert got == expected, f"plan rows diverge from truth table for {tree}"
        check(3, "100 random boolean plans match the per-record truth-table oracle", True)

    def test_and_fixture_equals_intersection(self, and_plan, ted_corpus, rules_path):
        def run(plan):
            backend = MockBackend(rules_path)
            results, _ = execute(plan, ted_corpus, {"Label": backend, "Span": backend})
            return {row.record_id for row in results.rows}

        both = run(and_plan)
        health = run(single_filter_plan("Is this text about health?"))
        brain = run(single_filter_plan("Is this text about the brain?"))
        check(
            3,
            "And(health, brain) run equals the intersection of single-label runs",
            both == (health & brain) and both == set(HEALTH_IDS) & set(BRAIN_IDS),
        )


class TestCriterion4:
    def test_extract_sees_only_surviving_records(self, f1_plan, ted_corpus, rules_path):
        label_backend = MockBackend(rules_path)
        span_backend = MockBackend(rules_path)
        results, _ = execute(
            f1_plan, ted_corpus, {"Label": label_backend, "Span": span_backend}
        )
        ok = (
            span_backend.stats.items_sent == 7
            and label_backend.stats.items_sent == 20
            and len(results.rows) == 7
            and [row.record_id for row in results.rows] == FINANCE_IDS
        )
        check(
            4,
            "extract backend received exactly 7 items and results carry exactly 7 rows",
            ok,
        )


class FixedRangeBackend(Backend):
    """Extracts the char range spanning token 6 through token 10 of any text."""

    def __init__(self):
        super().__init__(BackendDescriptor(id="fixed-range", kind="mock", max_batch=512))

    def _classify_batch(self, items: Sequence[ClassifyItem]) -> list[ClassifyResult]:
        return [ClassifyResult.from_score(0.0) for _ in items]

    def _extract_batch(self, items: Sequence[ExtractItem]) -> list[list[RawSpan]]:
        out = []
        for item in items:
            tokens = tokenize(item.text)
            out.append([(tokens[6].start, tokens[10].end, None)])
        return out


class TestCriterion5:
    def test_degradation_preserves_ends_and_randomizes_starts(self):
        texts = [" ".join(f"tok{k}" for k in range(11)) + f" r{i}" for i in range(10000)]
        corpus = make_corpus(texts)
        dataset = generate_extraction_set(
            corpus, "Extract the fixed range", 10000, 7, FixedRangeBackend()
        )
        degraded = degrade_spans(dataset, seed=123)

        prefix_tokens = tokenize(texts[0])
        start_to_index = {prefix_tokens[k].start: k for k in range(11)}
        end_token_index = 10
        counts = Counter()
        bad_ends = bad_starts = 0
        for before, after in zip(dataset.examples, degraded.examples):
            assert after.record_id == before.record_id
            assert len(after.spans) == 1 and len(before.spans) == 1
            old, new = before.spans.spans[0], after.spans.spans[0]
            if new.end != old.end:
                bad_ends += 1
            index = start_to_index.get(new.start)
            if index is None or not 0 <= index <= end_token_index:
                bad_starts += 1
            else:
                counts[index] += 1

        observed = [counts[k] for k in range(end_token_index + 1)]
        p_value = chisquare(observed).pvalue
        check(
            5,
            f"10000 degraded spans kept every end, drew starts in [0, end], "
            f"chi-square uniformity p={p_value:.3f}",
            bad_ends == 0 and bad_starts == 0 and p_value > 0.01,
        )


def oracle_f1(pred: Sequence[SpanSet], gold: Sequence[SpanSet], corpus: Corpus):
    pred_by_id = {s.record_id: s for s in pred}
    gold_by_id = {s.record_id: s for s in gold}
    matched = pred_total = gold_total = 0
    for rid in set(pred_by_id) | set(gold_by_id):
        text = corpus.get(rid).text
        p = covered_surfaces(pred_by_id[rid], text) if rid in pred_by_id else Counter()
        g = covered_surfaces(gold_by_id[rid], text) if rid in gold_by_id else Counter()
        matched += sum((p & g).values())
        pred_total += sum(p.values())
        gold_total += sum(g.values())
    precision = 1.0 if pred_total == 0 else matched / pred_total
    recall = 1.0 if gold_total == 0 else matched / gold_total
    if pred_total == 0 and gold_total == 0:
        f1 = 1.0
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1, matched, pred_total, gold_total


class TestCriterion6:
    def test_worked_examples_and_random_oracle(self):
        text = "a b c d"
        corpus = make_corpus([text])
        rid = corpus.records[0].id
        full = SpanSet(rid, (Span(0, 7, text),))
        half = SpanSet(rid, (Span(0, 3, "a b"),))
        tail = SpanSet(rid, (Span(4, 7, "c d"),))

        identical = word_f1([full], [full], corpus)
        partial = word_f1([half], [full], corpus)
        disjoint = word_f1([half], [tail], corpus)
        worked = (
            identical.f1 == 1.0
            and partial.precision == 1.0
            and partial.recall == 0.5
            and abs(partial.f1 - 2.0 / 3.0) < 1e-12
            and disjoint.f1 == 0.0
        )

        rng = random.Random(66)
        agree = True
        for _ in range(500):
            texts = [" ".join(random_words(rng, rng.randint(1, 20))) for _ in range(3)]
            rand_corpus = make_corpus(texts)
            pred = [
                random_token_spanset(rng, r.id, r.text) for r in rand_corpus.records
            ]
            gold = [
                random_token_spanset(rng, r.id, r.text) for r in rand_corpus.records
            ]
            report = word_f1(pred, gold, rand_corpus)
            p, r, f1, m, pt, gt = oracle_f1(pred, gold, rand_corpus)
            agree = agree and (
                (report.matched_tokens, report.pred_tokens, report.gold_tokens)
                == (m, pt, gt)
                and abs(report.precision - p) < 1e-12
                and abs(report.recall - r) < 1e-12
                and abs(report.f1 - f1) < 1e-12
            )

        monotone = True
        for _ in range(100):
            text = " ".join(random_words(rng, rng.randint(2, 20)))
            mono_corpus = make_corpus([text])
            rid = mono_corpus.records[0].id
            gold_set = random_token_spanset(rng, rid, text)
            previous_recall = -1.0
            for k in range(len(gold_set.spans) + 1):
                prefix = SpanSet(rid, gold_set.spans[:k])
                report = word_f1([prefix], [gold_set], mono_corpus)
                monotone = monotone and report.precision == 1.0
                monotone = monotone and report.recall >= previous_recall - 1e-12
                previous_recall = report.recall

        check(
            6,
            "word_f1 reproduces the worked examples to 1e-12 and matches the "
            "multiset oracle on 500 random fixtures with monotone recall",
            worked and agree and monotone,
        )


def rename_plan_ids(plan, mapping: dict[str, str]):
    doc = json.loads(plan.to_json())
    rename = lambda name: mapping.get(name, name)
    for node in doc["nodes"]:
        node["id"] = rename(node["id"])
        if "input" in node:
            node["input"] = rename(node["input"])
        if "predicate" in node:
            node["predicate"] = rename(node["predicate"])
        if "inputs" in node:
            node["inputs"] = [rename(n) for n in node["inputs"]]
        for field in node.get("fields", []):
            field["node"] = rename(field["node"])
    doc["output"] = rename(doc["output"])
    return parse_plan(doc)


class TestCriterion7:
    def test_24_of_25_scores_exactly_096(self, f1_plan, ted_corpus, rules_path):
        golden = {"finance lecturers": f1_plan}
        renamed = rename_plan_ids(
            f1_plan,
            {"source": "s1", "label": "is_fin", "keep": "surv", "span": "who", "output": "sink"},
        )
        wrong = make_filter_extract(
            "Is this text about health?", "Extract the lecturer name"
        )
        candidates = [("finance lecturers", f1_plan)] * 23
        candidates.append(("finance lecturers", renamed))
        candidates.append(("finance lecturers", wrong))

        score = score_planning(candidates, golden, ted_corpus, MockBackend(rules_path))
        self_score = score_planning(
            [("finance lecturers", f1_plan)], golden, ted_corpus, MockBackend(rules_path)
        )
        check(
            7,
            f"24 of 25 behaviorally-correct candidates score {score.score} and "
            f"golden-vs-golden scores {self_score.score}",
            score.correct == 24
            and score.total == 25
            and score.score == 0.96
            and self_score.score == 1.0,
        )


class TestCriterion8:
    def test_parallelism_and_seeds_are_deterministic(
        self, f1_plan, ted_corpus, rules_path, tmp_path
    ):
        outputs = []
        for workers in (1, 8):
            backend = MockBackend(rules_path)
            results, cost = execute(
                f1_plan,
                ted_corpus,
                {"Label": backend, "Span": backend},
                ExecutionOptions(batch=3, parallel=workers, cache=False),
            )
            outputs.append(results.to_jsonl(cost).encode("utf-8"))

        digests = []
        for name in ("first", "second"):
            dataset = generate_extraction_set(
                ted_corpus, "Extract the lecturer name", 10, 5, MockBackend(rules_path)
            )
            manifest = emit_dataset(dataset, tmp_path / name)
            digests.append(manifest["digest"])
        same_files = (tmp_path / "first" / "extraction.jsonl").read_bytes() == (
            tmp_path / "second" / "extraction.jsonl"
        ).read_bytes()
        check(
            8,
            "results are byte-identical across parallel=1 vs 8 and repeated "
            "generation with one seed reproduces the dataset digest",
            outputs[0] == outputs[1] and digests[0] == digests[1] and same_files,
        )


class TestCriterion9:
    def test_simulated_speedup_ratio(self, f1_plan, ted_corpus, rules_path):
        started = time.perf_counter()
        proxy = MockBackend(
            rules_path,
            BackendDescriptor(
                id="proxy", kind="mock", per_call=0.125, sim_latency_per_item=1 / 1024
            ),
        )
        annotator = MockBackend(
            rules_path,
            BackendDescriptor(
                id="annotator", kind="mock", per_call=1.25, sim_latency_per_item=20 / 1024
            ),
        )
        options = ExecutionOptions(cache=False)
        _, proxy_cost = execute(
            f1_plan, ted_corpus, {"Label": proxy, "Span": proxy}, options
        )
        _, annotator_cost = execute(
            f1_plan, ted_corpus, {"Label": annotator, "Span": annotator}, options
        )
        wall_ratio, cost_ratio = speedup_ratio(proxy_cost, annotator_cost)
        elapsed = time.perf_counter() - started
        check(
            9,
            f"constructed 20x/10x backends report speedup ({wall_ratio}, {cost_ratio}) "
            f"in {elapsed:.2f}s",
            wall_ratio >= 20.0
            and cost_ratio >= 10.0
            and wall_ratio == pytest.approx(20.0)
            and cost_ratio == pytest.approx(10.0)
            and elapsed < 10.0,
        )


class TestCriterion10:
    def test_nli_prompt_matches_frozen_golden(self, fixtures_dir):
        golden = (fixtures_dir / "nli_prompt.golden.txt").read_bytes()
        rendered = render_nli_prompt("t", "finance").rendered.encode("utf-8")
        check(10, "rendered NLI prompt for ('t', 'finance') is byte-identical", rendered == golden)
