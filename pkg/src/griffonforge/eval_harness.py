"""Benchmark runner for the single-pass reasoning pipeline.

Feeds each case to a pluggable backend exactly once (unified mode), parses
the returned trace leniently, scores plain accuracy, and accounts model
calls plus wall-clock latency per sample. A toolkit-simulation mode exists
purely to compare the latency shape of multi-call pipelines: per case it
spends one planning call, n synthetic tool calls (each sleeping a
configured latency), and one answer call.

Backends: the deterministic geometric oracle, a scripted mock that renders
gold traces from scene graphs (optionally corrupting answers at a seeded
rate), or any chat-completion HTTP endpoint.
"""

from __future__ import annotations

import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .trace_model import ImageRef, ReasoningTrace, TraceKind
from .trace_grammar import (
    DEFAULT_GRAMMAR,
    GrammarConfig,
    ParseError,
    SchemaViolation,
    parse,
    render,
    with_raw_text,
)
from . import geometric_reasoner as geometry
from .geometric_reasoner import SceneGraph, image_from_obj, scene_from_obj, scene_to_obj

logger = logging.getLogger(__name__)

QUESTION_TYPES = ("spatial", "count", "existence", "attribute")

NUMBER_WORDS = {
    word: value
    for value, word in enumerate(
        [
            "zero", "one", "two", "three", "four", "five", "six", "seven",
            "eight", "nine", "ten", "eleven", "twelve", "thirteen", "fourteen",
            "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
        ]
    )
}

_YES_NO_SYNONYMS = {"true": "yes", "false": "no", "yeah": "yes", "nope": "no"}


class BackendUnavailable(RuntimeError):
    """The model backend cannot serve requests; the run is aborted."""


@dataclass(frozen=True)
class EvalCase:
    """One benchmark item. ``scene`` is required for the oracle/mock backends."""

    id: str
    image: ImageRef
    question: str
    question_type: str
    gold_answer: str
    scene: SceneGraph | None = None

    def __post_init__(self) -> None:
        if self.question_type not in QUESTION_TYPES:
            raise ValueError(f"question_type must be one of {QUESTION_TYPES}")
        if not self.gold_answer.strip():
            raise ValueError("gold_answer must be non-empty")


class ModelClient(Protocol):
    """One generate invocation is one model call in the accounting."""

    def generate(self, image: ImageRef, question: str, grammar_config: GrammarConfig) -> str:
        ...


class OracleModel:
    """Answers from gold scene geometry; the reference backend."""

    tag = "oracle"

    def __init__(self, scenes: dict[str, SceneGraph]):
        self.scenes = scenes

    @classmethod
    def from_cases(cls, cases: Iterable[EvalCase]) -> "OracleModel":
        scenes = {}
        for case in cases:
            if case.scene is None:
                raise ValueError(f"case {case.id!r} has no scene; the oracle backend needs one")
            scenes[case.image.id] = case.scene
        return cls(scenes)

    def generate(self, image: ImageRef, question: str, grammar_config: GrammarConfig) -> str:
        scene = self.scenes.get(image.id)
        if scene is None:
            raise BackendUnavailable(f"no scene for image {image.id!r}")
        try:
            _, trace = geometry.answer(
                _QuestionOnly(question), scene, cfg=grammar_config
            )
        except (geometry.UnsupportedQuestionType, geometry.AmbiguousEntity):
            trace = with_raw_text(
                ReasoningTrace(TraceKind.SHORTCUT, (), (), "", "unknown"), grammar_config
            )
        return trace.raw_text


class _QuestionOnly:
    def __init__(self, question: str):
        self.question = question


class MockModel:
    """Scripted backend: renders gold traces, optionally corrupting the
    answer for a seeded fraction of cases. Corruption is a pure function of
    (seed, image id, question), so runs are reproducible at any parallelism."""

    def __init__(self, scenes: dict[str, SceneGraph], corruption_rate: float = 0.0, seed: int = 0):
        if not 0.0 <= corruption_rate <= 1.0:
            raise ValueError("corruption_rate must be in [0, 1]")
        self.oracle = OracleModel(scenes)
        self.corruption_rate = corruption_rate
        self.seed = seed
        self.tag = f"mock(corruption={corruption_rate})"

    @classmethod
    def from_cases(cls, cases: Iterable[EvalCase], corruption_rate: float = 0.0, seed: int = 0) -> "MockModel":
        return cls(OracleModel.from_cases(cases).scenes, corruption_rate, seed)

    def _should_corrupt(self, image: ImageRef, question: str) -> bool:
        if self.corruption_rate <= 0.0:
            return False
        rng = random.Random(f"{self.seed}|{image.id}|{question}")
        return rng.random() < self.corruption_rate

    def generate(self, image: ImageRef, question: str, grammar_config: GrammarConfig) -> str:
        raw = self.oracle.generate(image, question, grammar_config)
        if not self._should_corrupt(image, question):
            return raw
        trace, _ = parse(raw, grammar_config)
        wrong = _wrong_answer(trace.answer)
        corrupted = ReasoningTrace(
            kind=trace.kind,
            directives=trace.directives,
            cues=trace.cues,
            think=trace.think,
            answer=wrong,
        )
        return render(corrupted, grammar_config)


def _wrong_answer(gold: str) -> str:
    text = gold.strip().lower()
    if text == "yes":
        return "no"
    if text == "no":
        return "yes"
    try:
        return str(int(text) + 1)
    except ValueError:
        return text + " (but mirrored)"


class HttpModel:
    """Chat-completion backend; the question is sent as-is with the image URI."""

    tag = "http"

    def __init__(self, expert_config):
        from .expert_client import ChatClient, TransportError, user_message

        self._client = ChatClient(expert_config)
        self._user_message = user_message
        self._transport_error = TransportError
        self.tag = f"http({expert_config.base_url})"

    def generate(self, image: ImageRef, question: str, grammar_config: GrammarConfig) -> str:
        try:
            return self._client.complete([self._user_message(question, image)])
        except self._transport_error as exc:
            raise BackendUnavailable(str(exc)) from exc

    def close(self) -> None:
        self._client.close()


def normalize_answer(text: str) -> str:
    return text.strip().lower().rstrip(".,!?;: ")


def _as_count(text: str) -> int | None:
    if text.lstrip("-").isdigit():
        return int(text)
    return NUMBER_WORDS.get(text)


def score_answer(predicted: str, gold: str, question_type: str) -> bool:
    """Plain-accuracy comparison with light normalization.

    Yes/no synonyms apply to existence and spatial questions; count answers
    compare as integers with a 0-20 number-word table; everything else is
    exact match after normalization.
    """
    p, g = normalize_answer(predicted), normalize_answer(gold)
    if question_type in ("existence", "spatial"):
        p = _YES_NO_SYNONYMS.get(p, p)
        g = _YES_NO_SYNONYMS.get(g, g)
        return p == g
    if question_type == "count":
        pn, gn = _as_count(p), _as_count(g)
        if pn is not None and gn is not None:
            return pn == gn
        return p == g
    return p == g


@dataclass
class CaseResult:
    id: str
    predicted: str
    gold: str
    correct: bool
    model_calls: int
    wall_time: float
    failure_code: str | None = None

    def to_obj(self) -> dict:
        return {
            "id": self.id,
            "predicted": self.predicted,
            "gold": self.gold,
            "correct": self.correct,
            "model_calls": self.model_calls,
            "failure_code": self.failure_code,
        }


@dataclass
class RunReport:
    backend_tag: str
    mode: str
    per_case: list[CaseResult] = field(default_factory=list)
    partial: bool = False

    @property
    def accuracy(self) -> float:
        if not self.per_case:
            return 0.0
        return sum(1 for c in self.per_case if c.correct) / len(self.per_case)

    @property
    def total_model_calls(self) -> int:
        return sum(c.model_calls for c in self.per_case)

    @property
    def mean_time_per_sample(self) -> float:
        if not self.per_case:
            return 0.0
        return sum(c.wall_time for c in self.per_case) / len(self.per_case)

    def to_obj(self) -> dict:
        # Wall-clock numbers live only under "timing" so the rest of the
        # report is byte-reproducible for fixed inputs and seed.
        return {
            "backend_tag": self.backend_tag,
            "mode": self.mode,
            "partial": self.partial,
            "accuracy": self.accuracy,
            "total_model_calls": self.total_model_calls,
            "cases": [c.to_obj() for c in self.per_case],
            "timing": {
                "mean_time_per_sample": self.mean_time_per_sample,
                "per_case": [{"id": c.id, "wall_time": c.wall_time} for c in self.per_case],
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), ensure_ascii=False, indent=2)

    def render_table(self) -> str:
        header = f"{'case':<16} {'gold':<12} {'predicted':<16} {'ok':<3} {'calls':>5} {'ms':>9}"
        lines = [header, "-" * len(header)]
        for c in self.per_case:
            ok = "y" if c.correct else "n"
            predicted = (c.predicted or c.failure_code or "")[:16]
            lines.append(
                f"{c.id[:16]:<16} {c.gold[:12]:<12} {predicted:<16} {ok:<3} "
                f"{c.model_calls:>5} {c.wall_time * 1000:>9.2f}"
            )
        lines.append("-" * len(header))
        lines.append(
            f"accuracy {self.accuracy:.4f} over {len(self.per_case)} cases | "
            f"mean time/sample {self.mean_time_per_sample * 1000:.2f} ms | "
            f"model calls {self.total_model_calls}"
            + (" | PARTIAL" if self.partial else "")
        )
        return "\n".join(lines)


@dataclass
class RunConfig:
    grammar: GrammarConfig = DEFAULT_GRAMMAR
    parallelism: int = 1


def _extract_answer(raw: str, grammar: GrammarConfig) -> tuple[str, str | None]:
    try:
        trace, _ = parse(raw, grammar)
        return trace.answer, None
    except ParseError as exc:
        return "", type(exc).__name__


def _score_case(case: EvalCase, raw: str, wall: float, calls: int, grammar: GrammarConfig) -> CaseResult:
    predicted, failure = _extract_answer(raw, grammar)
    correct = failure is None and score_answer(predicted, case.gold_answer, case.question_type)
    return CaseResult(
        id=case.id,
        predicted=predicted,
        gold=case.gold_answer,
        correct=correct,
        model_calls=calls,
        wall_time=wall,
        failure_code=failure,
    )


def _run_cases(
    cases: Sequence[EvalCase],
    worker,
    backend_tag: str,
    mode: str,
    parallelism: int,
) -> RunReport:
    report = RunReport(backend_tag=backend_tag, mode=mode)
    results: list[CaseResult | None] = [None] * len(cases)

    def guarded(index_case):
        index, case = index_case
        try:
            return index, worker(case), None
        except BackendUnavailable as exc:
            return index, None, exc

    iterable = list(enumerate(cases))
    if parallelism <= 1:
        outcomes = map(guarded, iterable)
    else:
        pool = ThreadPoolExecutor(max_workers=parallelism)
        outcomes = pool.map(guarded, iterable)

    aborted = False
    for index, result, exc in outcomes:
        if exc is not None:
            logger.error("backend unavailable at case %s: %s", cases[index].id, exc)
            aborted = True
            continue
        results[index] = result
    if parallelism > 1:
        pool.shutdown(wait=True)

    report.per_case = [r for r in results if r is not None]
    report.partial = aborted
    return report


def run(cases: Sequence[EvalCase], backend: ModelClient, cfg: RunConfig | None = None) -> RunReport:
    """Unified mode: exactly one backend call per case.

    Wall time is measured around generate only. Parse failures score as
    incorrect with the failure code recorded.
    """
    cfg = cfg or RunConfig()

    def worker(case: EvalCase) -> CaseResult:
        start = time.perf_counter()
        raw = backend.generate(case.image, case.question, cfg.grammar)
        wall = time.perf_counter() - start
        return _score_case(case, raw, wall, calls=1, grammar=cfg.grammar)

    return _run_cases(cases, worker, getattr(backend, "tag", "backend"), "unified", cfg.parallelism)


def run_toolkit_baseline(
    cases: Sequence[EvalCase],
    backend: ModelClient,
    tool_latency: float,
    n_tools: int,
    cfg: RunConfig | None = None,
) -> RunReport:
    """Simulated multi-call regime for latency-shape comparison.

    Per case: one planning call, n_tools synthetic tool invocations (each
    sleeping tool_latency), then one answer call; n_tools + 2 model calls
    total. Answers still come from the same backend.
    """
    if n_tools < 1:
        raise ValueError("n_tools must be >= 1")
    cfg = cfg or RunConfig()

    def worker(case: EvalCase) -> CaseResult:
        start = time.perf_counter()
        backend.generate(case.image, case.question, cfg.grammar)  # planning pass
        for _ in range(n_tools):
            time.sleep(tool_latency)
        raw = backend.generate(case.image, case.question, cfg.grammar)
        wall = time.perf_counter() - start
        return _score_case(case, raw, wall, calls=n_tools + 2, grammar=cfg.grammar)

    tag = getattr(backend, "tag", "backend")
    return _run_cases(cases, worker, tag, "toolkit", cfg.parallelism)


def case_to_obj(case: EvalCase) -> dict:
    obj = {
        "id": case.id,
        "image": {
            "id": case.image.id,
            "width": case.image.width,
            "height": case.image.height,
            "uri": case.image.uri,
        },
        "question": case.question,
        "question_type": case.question_type,
        "gold_answer": case.gold_answer,
        "scene": None,
    }
    if case.scene is not None:
        scene_obj = scene_to_obj(case.scene)
        del scene_obj["image"]  # implied by the case's image
        obj["scene"] = scene_obj
    return obj


def case_from_obj(obj, path: str = "") -> EvalCase:
    if not isinstance(obj, dict):
        raise SchemaViolation(path or "/", "expected object")
    for key in ("id", "image", "question", "question_type", "gold_answer"):
        if key not in obj:
            raise SchemaViolation(f"{path}/{key}", "required")
    image = image_from_obj(obj["image"], f"{path}/image")
    scene = None
    if obj.get("scene") is not None:
        scene = scene_from_obj(obj["scene"], f"{path}/scene", image=image)
    try:
        return EvalCase(
            id=str(obj["id"]),
            image=image,
            question=str(obj["question"]),
            question_type=str(obj["question_type"]),
            gold_answer=str(obj["gold_answer"]),
            scene=scene,
        )
    except ValueError as exc:
        raise SchemaViolation(path or "/", str(exc)) from None


def load_benchmark(path: str | Path) -> list[EvalCase]:
    """Read EvalCases from JSONL; schema errors cite the line number."""
    cases = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"line {line_no}", f"not valid JSON: {exc}") from None
            cases.append(case_from_obj(obj, f"line {line_no}"))
    return cases


def save_benchmark(cases: Iterable[EvalCase], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as handle:
        for case in cases:
            handle.write(json.dumps(case_to_obj(case), ensure_ascii=False, separators=(",", ":")) + "\n")
            n += 1
    return n
