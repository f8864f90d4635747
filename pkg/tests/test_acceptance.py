"""Acceptance suite: one test per release criterion, at pinned tolerances.

Each test prints a PASS/FAIL line (visible with pytest -s or in failure
output) so a run doubles as a checklist. Thresholds are fixed here, not
tuned: zero round-trip failures, 100% oracle agreement, exact filter
counts, call-count identities, a >= 10x latency ratio for the toolkit
simulation, 0.80 +/- 0.03 corrupted-mock accuracy, and zero service-safety
violations.
"""

import json
import random
import threading
import time
from contextlib import contextmanager

import httpx
import pytest

from griffonforge import cli
from griffonforge.curation_filters import FilterStats, default_lexicon, filter_dataset
from griffonforge.curation_service import (
    CurationStore,
    IllegalTransition,
    LeaseViolation,
    SampleRecord,
    SampleState,
    TraceInvalid,
)
from griffonforge.expert_client import ExpertAnalysis, PlanEntry
from griffonforge.eval_harness import MockModel, OracleModel, run, run_toolkit_baseline
from griffonforge.fake_expert import FakeExpertServer
from griffonforge.trace_model import (
    BoundingBox,
    Boxes,
    Capability,
    ImageRef,
    VisualCue,
    validate_trace,
)
from griffonforge.trace_grammar import ParseError, parse
from griffonforge.synthetic import (
    mutate_text,
    planted_corpus,
    random_benchmark_case,
    random_bytes_text,
    random_question,
    random_scene,
    random_trace,
)
from test_geometric_reasoner import brute_force_answer


@contextmanager
def criterion(name: str):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL ({time.perf_counter() - start:.1f}s)")
        raise
    print(f"ACCEPTANCE {name}: PASS ({time.perf_counter() - start:.1f}s)")


def test_trace_round_trip_and_parse_fuzz():
    with criterion("trace round-trip (10k) + parse fuzz (100k)"):
        start = time.perf_counter()
        rng = random.Random(0xC0FFEE)
        image = ImageRef("fuzz", 1022, 1022)

        renders = []
        for i in range(10_000):
            trace = random_trace(rng, image)
            parsed, spans = parse(trace.raw_text)
            assert parsed == trace, f"round-trip failure at trace {i}"
            assert spans.understand_span[0] < spans.think_span[0] < spans.answer_span[0]
            if len(renders) < 2_000:
                renders.append(trace.raw_text)

        survived = 0
        for i in range(70_000):
            text = mutate_text(rng, renders[i % len(renders)])
            if i % 3 == 0:
                text = mutate_text(rng, text)
            try:
                parse(text)
            except ParseError:
                pass
            survived += 1
        for _ in range(30_000):
            try:
                parse(random_bytes_text(rng))
            except ParseError:
                pass
            survived += 1
        assert survived == 100_000

        elapsed = time.perf_counter() - start
        assert elapsed < 120, f"round-trip criterion took {elapsed:.1f}s (budget 120s)"


def test_geometric_oracle_equivalence():
    with criterion("geometric oracle vs brute force (10k scenes)"):
        from types import SimpleNamespace
        from griffonforge.geometric_reasoner import answer

        start = time.perf_counter()
        rng = random.Random(0xBEEF)
        disagreements = 0
        for i in range(10_000):
            scene = random_scene(rng, f"sc{i}", max_objects=10, max_side=1022)
            question, question_type = random_question(rng, scene)
            case = SimpleNamespace(question=question, question_type=question_type)
            verdict, trace = answer(case, scene)
            if verdict != brute_force_answer(scene, question):
                disagreements += 1
            assert validate_trace(trace, scene.image) == [], f"invalid trace for {question!r}"
        assert disagreements == 0, f"{disagreements} disagreements out of 10000"

        elapsed = time.perf_counter() - start
        assert elapsed < 60, f"oracle criterion took {elapsed:.1f}s (budget 60s)"


def test_curation_filter_fidelity():
    with criterion("curation filter fidelity (1000 planted records)"):
        plan = dict(
            yes_no=300,
            relation_keyword=200,
            attribute_keyword=150,
            duplicate=100,
            too_simple=50,
            no_criterion=200,
        )
        assert sum(plan.values()) == 1000
        records, expected = planted_corpus(random.Random(0xFEED), plan)
        lexicon = default_lexicon()
        stats = FilterStats()
        kept_ids = set()
        for record, decision in filter_dataset(records, lexicon):
            stats.record(decision)
            if decision.keep:
                kept_ids.add(record.id)

        assert stats.total == 1000
        assert stats.by_reason == expected, (stats.by_reason, expected)

        # precision = recall = 1.0 against the generator's ground truth
        should_keep = {
            r.id for r in records if r.id.split("-")[0] in ("yn", "rel", "attr")
        }
        assert kept_ids == should_keep


def test_single_pass_invariant_and_latency_shape():
    with criterion("single-pass call counts + toolkit latency ratio >= 10x"):
        rng = random.Random(0xB0B)
        cases = [random_benchmark_case(rng, f"lat{i}") for i in range(6)]
        backend = MockModel.from_cases(cases)

        unified = run(cases, backend)
        assert all(c.model_calls == 1 for c in unified.per_case)
        assert unified.total_model_calls == len(cases)

        toolkit = run_toolkit_baseline(cases, backend, tool_latency=0.1, n_tools=4)
        assert all(c.model_calls == 4 + 2 for c in toolkit.per_case)

        assert unified.mean_time_per_sample > 0
        ratio = toolkit.mean_time_per_sample / unified.mean_time_per_sample
        assert toolkit.mean_time_per_sample >= 0.4  # 4 tools x 100 ms
        assert ratio >= 10, f"toolkit/unified ratio {ratio:.1f} below 10"


def test_closed_loop_eval_accuracy():
    with criterion("closed-loop mock eval: gold=1.0, 20% corruption=0.80+/-0.03"):
        rng = random.Random(0xACE)
        cases = [random_benchmark_case(rng, f"cl{i}") for i in range(5_000)]

        gold_report = run(cases[:1_000], MockModel.from_cases(cases))
        assert gold_report.accuracy == 1.0

        corrupted = MockModel.from_cases(cases, corruption_rate=0.2, seed=1234)
        report = run(cases, corrupted)
        assert abs(report.accuracy - 0.80) <= 0.03, f"accuracy {report.accuracy:.4f}"


def _review_sample(sample_id="s1", targets=("dog",)) -> SampleRecord:
    return SampleRecord(
        id=sample_id,
        image=ImageRef(f"img-{sample_id}", 640, 480, "file:///img.jpg"),
        question="Is there a dog?",
        answer="yes",
        analysis=ExpertAnalysis(tuple(targets), (PlanEntry(Capability.VISUAL_GROUNDING, tuple(targets)),)),
        state=SampleState.AI_ANNOTATED,
    )


def _dog_cue() -> VisualCue:
    return VisualCue("dog", Boxes((BoundingBox(10, 10, 80, 90),)))


def test_service_safety_random_api_sequences(tmp_path):
    with criterion("service safety: 10k random API calls, zero illegal transitions"):
        class Clock:
            now = 1000.0

            def __call__(self):
                return self.now

        clock = Clock()
        store = CurationStore(tmp_path / "fuzz", lease_seconds=120, clock=clock)
        legal_next = {
            SampleState.RAW: {SampleState.RAW, SampleState.AI_ANNOTATED},
            SampleState.AI_ANNOTATED: {SampleState.AI_ANNOTATED, SampleState.HUMAN_REVIEW},
            SampleState.HUMAN_REVIEW: {
                SampleState.HUMAN_REVIEW,
                SampleState.ACCEPTED,
                SampleState.REJECTED,
            },
            SampleState.ACCEPTED: {SampleState.ACCEPTED},
            SampleState.REJECTED: {SampleState.REJECTED},
        }
        observed: dict[str, SampleState] = {}
        violations = []

        def check(sample: SampleRecord):
            previous = observed.get(sample.id)
            if previous is not None and sample.state not in legal_next[previous]:
                violations.append((sample.id, previous, sample.state))
            observed[sample.id] = sample.state

        rng = random.Random(0xD1CE)
        reviewers = [f"r{i}" for i in range(4)]
        next_id = 0
        for step in range(10_000):
            roll = rng.random()
            try:
                if roll < 0.15:
                    next_id += 1
                    store.enqueue([_review_sample(f"s{next_id}")])
                elif roll < 0.45:
                    sample = store.next_for_review(rng.choice(reviewers))
                    if sample:
                        check(sample)
                elif roll < 0.65:
                    check(
                        store.submit_annotation(
                            f"s{rng.randrange(1, next_id + 2)}", rng.choice(reviewers), [_dog_cue()]
                        )
                    )
                elif roll < 0.9:
                    check(
                        store.decide(
                            f"s{rng.randrange(1, next_id + 2)}",
                            rng.choice(reviewers),
                            rng.choice(["accept", "accept", "reject"]),
                        )
                    )
                else:
                    clock.now += rng.choice([15.0, 60.0, 150.0])
            except (LeaseViolation, IllegalTransition, TraceInvalid, KeyError):
                pass
            if step % 500 == 0:
                for sample in store.all_samples():
                    check(sample)
        for sample in store.all_samples():
            check(sample)
        assert violations == [], violations[:5]


def test_service_safety_crash_restart(tmp_path):
    with criterion("service safety: crash-restart loses zero accepted samples"):
        store = CurationStore(tmp_path / "crash", lease_seconds=900)
        store.enqueue([_review_sample(f"s{i}") for i in range(60)])
        accepted_ids = []
        for _ in range(40):
            sample = store.next_for_review("alice")
            store.submit_annotation(sample.id, "alice", [_dog_cue()])
            store.decide(sample.id, "alice", "accept")
            accepted_ids.append(sample.id)
        store.next_for_review("bob")  # leave one lease dangling

        # crash: reopen from disk without closing the first store
        reopened = CurationStore(tmp_path / "crash", lease_seconds=900)
        for sample_id in accepted_ids:
            record = reopened.get(sample_id)
            assert record.state is SampleState.ACCEPTED
            assert record.trace is not None
        stats = reopened.stats()
        assert stats["accepted"] == 40
        assert all(s.lease is None for s in reopened.all_samples())


def test_service_safety_concurrent_reviewers(tmp_path):
    with criterion("service safety: 8 pollers x 500 samples, zero duplicate leases"):
        store = CurationStore(tmp_path / "stress", lease_seconds=900)
        store.enqueue([_review_sample(f"s{i}") for i in range(500)])
        grabbed: list[str] = []
        lock = threading.Lock()

        def poller(reviewer: str):
            while True:
                sample = store.next_for_review(reviewer)
                if sample is None:
                    return
                with lock:
                    grabbed.append(sample.id)

        threads = [threading.Thread(target=poller, args=(f"rev{i}",)) for i in range(8)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        assert len(grabbed) == 500
        assert len(set(grabbed)) == 500, "duplicate lease detected"


def test_expert_client_determinism_via_cli(tmp_path):
    with criterion("expert-client determinism: cmd_annotate twice, cache hit"):
        qa_path = tmp_path / "qa.jsonl"
        with open(qa_path, "w", encoding="utf-8") as handle:
            for i in range(5):
                handle.write(
                    json.dumps(
                        {
                            "id": f"q{i}",
                            "image": {
                                "id": f"img{i}",
                                "width": 640,
                                "height": 480,
                                "uri": f"file:///img/{i}.jpg",
                            },
                            "question": f"Is the red balloon number {i} below the white balloon?",
                            "answer": "yes",
                            "source_dataset": "demo",
                        }
                    )
                    + "\n"
                )

        with FakeExpertServer() as server:
            config_path = tmp_path / "expert.json"
            config_path.write_text(
                json.dumps(
                    {
                        "base_url": server.base_url,
                        "model_name": "fake-expert",
                        "cache_dir": str(tmp_path / "cache"),
                        "backoff_base": 0.01,
                    }
                )
            )
            first_out = tmp_path / "first.jsonl"
            second_out = tmp_path / "second.jsonl"
            code = cli.main(
                ["annotate", str(qa_path), "--expert-config", str(config_path), "--out", str(first_out)]
            )
            assert code == 0
            calls_after_first = server.calls
            assert calls_after_first > 0
            code = cli.main(
                ["annotate", str(qa_path), "--expert-config", str(config_path), "--out", str(second_out)]
            )
            assert code == 0
            assert server.calls == calls_after_first, "second run must make zero network calls"

        assert first_out.read_bytes() == second_out.read_bytes()
