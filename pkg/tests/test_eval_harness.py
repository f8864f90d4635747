import json
import random
import time

import pytest

from griffonforge.trace_model import ImageRef
from griffonforge.trace_grammar import SchemaViolation
from griffonforge.eval_harness import (
    BackendUnavailable,
    EvalCase,
    MockModel,
    NUMBER_WORDS,
    OracleModel,
    RunConfig,
    load_benchmark,
    run,
    run_toolkit_baseline,
    save_benchmark,
    score_answer,
)
from griffonforge.synthetic import random_benchmark_case

IMAGE = ImageRef("img", 100, 100)


def make_cases(n, seed=0):
    rng = random.Random(seed)
    return [random_benchmark_case(rng, f"c{i}") for i in range(n)]


# -- score_answer -------------------------------------------------------------


def test_yes_with_punctuation_scores_true():
    assert score_answer("Yes.", "yes", "existence") is True


def test_true_false_synonyms_for_existence_and_spatial():
    assert score_answer("True", "yes", "existence") is True
    assert score_answer("false", "no", "spatial") is True
    assert score_answer("true", "yes", "count") is False


def test_number_words_compare_as_integers_both_directions():
    for word, value in NUMBER_WORDS.items():
        assert score_answer(word, str(value), "count") is True
        assert score_answer(str(value), word, "count") is True
    assert score_answer("two", "3", "count") is False


def test_spatial_mismatch_is_false():
    assert score_answer("left", "right", "spatial") is False


def test_attribute_answers_compare_exactly():
    assert score_answer("Red.", "red", "attribute") is True
    assert score_answer("reddish", "red", "attribute") is False


# -- run ----------------------------------------------------------------------


class ScriptedModel:
    tag = "scripted"

    def __init__(self, answers):
        self.answers = answers
        self.calls = 0

    def generate(self, image, question, grammar_config):
        self.calls += 1
        return f"UNDERSTAND:\nTHINK:\nANSWER:\n{self.answers[image.id]}\n"


def simple_case(case_id, gold="yes"):
    return EvalCase(case_id, ImageRef(case_id, 100, 100), "Is there a dog?", "existence", gold)


def test_accuracy_three_of_four():
    cases = [simple_case(f"i{k}") for k in range(4)]
    answers = {"i0": "yes", "i1": "yes", "i2": "yes", "i3": "no"}
    report = run(cases, ScriptedModel(answers))
    assert report.accuracy == 0.75


def test_unified_mode_makes_exactly_one_call_per_case():
    cases = [simple_case(f"i{k}") for k in range(7)]
    backend = ScriptedModel({f"i{k}": "yes" for k in range(7)})
    report = run(cases, backend)
    assert backend.calls == len(cases)
    assert all(c.model_calls == 1 for c in report.per_case)
    assert report.total_model_calls == len(cases)


def test_oracle_on_oracle_generated_cases_is_perfect():
    cases = make_cases(100, seed=7)
    report = run(cases, OracleModel.from_cases(cases))
    assert report.accuracy == 1.0


def test_parse_failure_counts_incorrect_with_code():
    class Gibberish:
        tag = "gibberish"

        def generate(self, image, question, grammar_config):
            return "no markers whatsoever"

    report = run([simple_case("i0")], Gibberish())
    assert report.accuracy == 0.0
    assert report.per_case[0].failure_code == "MissingMarker"


def test_accuracy_is_permutation_invariant():
    cases = make_cases(50, seed=3)
    backend = MockModel.from_cases(cases, corruption_rate=0.4, seed=5)
    forward = run(cases, backend)
    shuffled = list(cases)
    random.Random(0).shuffle(shuffled)
    backward = run(shuffled, backend)
    assert forward.accuracy == backward.accuracy


def test_backend_unavailable_flags_partial_report():
    class Flaky:
        tag = "flaky"

        def __init__(self):
            self.calls = 0

        def generate(self, image, question, grammar_config):
            self.calls += 1
            if self.calls == 2:
                raise BackendUnavailable("gone")
            return "UNDERSTAND:\nTHINK:\nANSWER:\nyes\n"

    report = run([simple_case(f"i{k}") for k in range(3)], Flaky())
    assert report.partial is True
    assert len(report.per_case) == 2


def test_parallel_run_matches_sequential():
    cases = make_cases(40, seed=11)
    backend = OracleModel.from_cases(cases)
    sequential = run(cases, backend, RunConfig(parallelism=1))
    parallel = run(cases, backend, RunConfig(parallelism=4))
    assert [c.predicted for c in sequential.per_case] == [c.predicted for c in parallel.per_case]
    assert parallel.accuracy == 1.0


# -- toolkit baseline ---------------------------------------------------------


def test_toolkit_call_accounting():
    cases = [simple_case(f"i{k}") for k in range(3)]
    backend = ScriptedModel({f"i{k}": "yes" for k in range(3)})
    report = run_toolkit_baseline(cases, backend, tool_latency=0.0, n_tools=2)
    assert all(c.model_calls == 4 for c in report.per_case)
    assert backend.calls == 6  # planning + answer per case


def test_toolkit_latency_includes_tool_sleeps():
    cases = [simple_case(f"i{k}") for k in range(2)]
    backend = ScriptedModel({f"i{k}": "yes" for k in range(2)})
    unified = run(cases, backend)
    toolkit = run_toolkit_baseline(cases, backend, tool_latency=0.05, n_tools=2)
    assert toolkit.mean_time_per_sample >= 0.1
    assert toolkit.mean_time_per_sample > unified.mean_time_per_sample


def test_toolkit_requires_at_least_one_tool():
    with pytest.raises(ValueError):
        run_toolkit_baseline([], ScriptedModel({}), tool_latency=0.0, n_tools=0)


def test_toolkit_mean_time_tracks_n_tools_times_latency():
    # mean time should sit within 10% of the closed-form n_tools * latency
    # (model calls are instant here) and grow linearly with it
    cases = [simple_case(f"i{k}") for k in range(4)]
    backend = ScriptedModel({f"i{k}": "yes" for k in range(4)})
    means = {}
    for n_tools, latency in ((2, 0.05), (4, 0.05)):
        report = run_toolkit_baseline(cases, backend, tool_latency=latency, n_tools=n_tools)
        expected = n_tools * latency
        assert expected <= report.mean_time_per_sample <= expected * 1.10, (
            n_tools,
            report.mean_time_per_sample,
        )
        means[n_tools] = report.mean_time_per_sample
    ratio = means[4] / means[2]
    assert 1.8 <= ratio <= 2.2


# -- mock corruption ----------------------------------------------------------


def test_mock_without_corruption_is_gold():
    cases = make_cases(60, seed=2)
    report = run(cases, MockModel.from_cases(cases, corruption_rate=0.0))
    assert report.accuracy == 1.0


def test_mock_corrupted_answers_are_always_wrong():
    cases = make_cases(200, seed=4)
    mock = MockModel.from_cases(cases, corruption_rate=0.5, seed=21)
    report = run(cases, mock)
    for case, result in zip(cases, report.per_case):
        corrupted = mock._should_corrupt(case.image, case.question)
        assert result.correct == (not corrupted)


def test_mock_is_deterministic_for_fixed_seed():
    cases = make_cases(50, seed=6)
    report_a = run(cases, MockModel.from_cases(cases, corruption_rate=0.3, seed=9))
    report_b = run(cases, MockModel.from_cases(cases, corruption_rate=0.3, seed=9))
    assert [c.predicted for c in report_a.per_case] == [c.predicted for c in report_b.per_case]


# -- benchmark files and reports ----------------------------------------------


def test_benchmark_round_trip(tmp_path):
    cases = make_cases(20, seed=13)
    path = tmp_path / "bench.jsonl"
    assert save_benchmark(cases, path) == 20
    assert load_benchmark(path) == cases


def test_empty_benchmark_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_benchmark(path) == []


def test_malformed_line_reports_line_number(tmp_path):
    cases = make_cases(3, seed=1)
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join([
        json.dumps(_case_obj(cases[0])),
        json.dumps(_case_obj(cases[1])),
        "{not json",
    ]), encoding="utf-8")
    with pytest.raises(SchemaViolation) as err:
        load_benchmark(path)
    assert "line 3" in err.value.path


def _case_obj(case):
    from griffonforge.eval_harness import case_to_obj

    return case_to_obj(case)


def test_report_serialization_isolates_timing():
    cases = make_cases(10, seed=8)
    report = run(cases, OracleModel.from_cases(cases))
    obj = report.to_obj()
    assert set(obj) == {"backend_tag", "mode", "partial", "accuracy", "total_model_calls", "cases", "timing"}
    assert all("wall_time" not in c for c in obj["cases"])
    assert all(t["wall_time"] >= 0 for t in obj["timing"]["per_case"])
    assert json.loads(report.to_json()) == obj
    rendered = report.render_table()
    assert "accuracy 1.0000" in rendered


def test_oracle_requires_scenes():
    sceneless = EvalCase("x", IMAGE, "Is there a dog?", "existence", "yes", scene=None)
    with pytest.raises(ValueError):
        OracleModel.from_cases([sceneless])


def test_gold_answer_must_be_non_empty():
    with pytest.raises(ValueError):
        EvalCase("x", IMAGE, "Is there a dog?", "existence", "  ")


def test_unknown_question_type_rejected():
    with pytest.raises(ValueError):
        EvalCase("x", IMAGE, "Q?", "philosophy", "yes")
