"""Human-in-the-loop review backend: durable sample queue with leases.

Samples arrive pre-annotated by the expert stage, get handed to reviewers
one at a time under a time-limited lease, and end up Accepted (with a
validated reasoning trace synthesized from the merged cues) or Rejected.

Persistence is an append-only JSONL event log plus a compacted snapshot:
trivially durable and diffable. Leases are deliberately in-memory only, so
a crash-restart frees every sample for review again without losing any
decided one. All mutations are serialized through one lock; reads return
snapshots.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from types import SimpleNamespace
from typing import Callable, Iterable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import geometric_reasoner as geometry
from .expert_client import ExpertAnalysis, PlanEntry
from .trace_grammar import (
    DEFAULT_GRAMMAR,
    InvalidTrace,
    SchemaViolation,
    cue_to_obj,
    cue_from_obj,
    trace_from_obj,
    trace_to_obj,
    with_raw_text,
)
from .trace_model import (
    Boxes,
    Capability,
    ImageRef,
    ReasoningTrace,
    TraceKind,
    UnderstandDirective,
    Violation,
    VisualCue,
    validate_box,
    validate_trace,
)
from .geometric_reasoner import SceneGraph, SceneObject, image_from_obj

logger = logging.getLogger(__name__)

DEFAULT_LEASE_SECONDS = 15 * 60


class SampleState(Enum):
    RAW = "raw"
    AI_ANNOTATED = "ai_annotated"
    HUMAN_REVIEW = "human_review"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


LEGAL_TRANSITIONS: dict[SampleState, frozenset[SampleState]] = {
    SampleState.RAW: frozenset({SampleState.AI_ANNOTATED}),
    SampleState.AI_ANNOTATED: frozenset({SampleState.HUMAN_REVIEW}),
    SampleState.HUMAN_REVIEW: frozenset({SampleState.ACCEPTED, SampleState.REJECTED}),
    SampleState.ACCEPTED: frozenset(),
    SampleState.REJECTED: frozenset(),
}


class DuplicateId(ValueError):
    def __init__(self, sample_id: str):
        super().__init__(f"sample {sample_id!r} already enqueued")
        self.sample_id = sample_id


class UnknownSample(KeyError):
    def __init__(self, sample_id: str):
        super().__init__(sample_id)
        self.sample_id = sample_id


class LeaseViolation(PermissionError):
    pass


class IllegalTransition(ValueError):
    def __init__(self, sample_id: str, current: SampleState, wanted: SampleState):
        super().__init__(f"sample {sample_id!r}: {current.value} -> {wanted.value} is not a legal transition")
        self.current = current
        self.wanted = wanted


class InvalidCue(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class TraceInvalid(ValueError):
    def __init__(self, report: list[Violation]):
        super().__init__("; ".join(f"{v.code}@{v.path}" for v in report) or "trace invalid")
        self.report = report


@dataclass(frozen=True)
class Lease:
    reviewer_id: str
    expiry: float


@dataclass
class SampleRecord:
    """One image+question unit moving through the curation state machine."""

    id: str
    image: ImageRef
    question: str
    answer: str = ""
    source_dataset: str = ""
    analysis: ExpertAnalysis | None = None
    cues: list[VisualCue] = field(default_factory=list)
    state: SampleState = SampleState.RAW
    review_notes: str = ""
    lease: Lease | None = None
    trace: ReasoningTrace | None = None
    enqueue_seq: int = 0
    accepted_seq: int | None = None

    def to_obj(self, include_lease: bool = True) -> dict:
        obj: dict = {
            "id": self.id,
            "image": {
                "id": self.image.id,
                "width": self.image.width,
                "height": self.image.height,
                "uri": self.image.uri,
            },
            "question": self.question,
            "answer": self.answer,
            "source_dataset": self.source_dataset,
            "state": self.state.value,
            "analysis": self.analysis.to_obj() if self.analysis else None,
            "cues": [cue_to_obj(c) for c in self.cues],
            "review_notes": self.review_notes,
        }
        if self.trace is not None:
            obj["trace"] = trace_to_obj(self.trace)
        if self.accepted_seq is not None:
            obj["accepted_seq"] = self.accepted_seq
        if include_lease and self.lease is not None:
            obj["lease"] = {"reviewer_id": self.lease.reviewer_id, "expiry": self.lease.expiry}
        return obj

    @classmethod
    def from_obj(cls, obj: dict, path: str = "") -> "SampleRecord":
        if not isinstance(obj, dict):
            raise SchemaViolation(path or "/", "expected object")
        for key in ("id", "image", "question"):
            if key not in obj:
                raise SchemaViolation(f"{path}/{key}", "required")
        state_text = obj.get("state", "raw")
        try:
            state = SampleState(state_text)
        except ValueError:
            raise SchemaViolation(f"{path}/state", f"unknown state {state_text!r}") from None
        analysis = None
        if obj.get("analysis") is not None:
            try:
                analysis = ExpertAnalysis.from_obj(obj["analysis"])
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaViolation(f"{path}/analysis", str(exc)) from None
        cues = [
            cue_from_obj(c, f"{path}/cues/{i}") for i, c in enumerate(obj.get("cues", []))
        ]
        trace = None
        if obj.get("trace") is not None:
            trace = trace_from_obj(obj["trace"], f"{path}/trace")
        return cls(
            id=str(obj["id"]),
            image=image_from_obj(obj["image"], f"{path}/image"),
            question=str(obj["question"]),
            answer=str(obj.get("answer", "")),
            source_dataset=str(obj.get("source_dataset", "")),
            analysis=analysis,
            cues=cues,
            state=state,
            review_notes=str(obj.get("review_notes", "")),
            trace=trace,
            accepted_seq=obj.get("accepted_seq"),
        )


def merge_cues(existing: Iterable[VisualCue], incoming: Iterable[VisualCue]) -> list[VisualCue]:
    """Label-keyed merge; incoming (human) cues override existing (AI) ones."""
    merged = list(existing)
    index = {cue.label: i for i, cue in enumerate(merged)}
    for cue in incoming:
        if cue.label in index:
            merged[index[cue.label]] = cue
        else:
            index[cue.label] = len(merged)
            merged.append(cue)
    return merged


def _scene_from_cues(image: ImageRef, cues: Iterable[VisualCue]) -> SceneGraph:
    objects = []
    for cue in cues:
        if isinstance(cue.payload, Boxes):
            for box in cue.payload.boxes:
                objects.append(SceneObject(cue.label, (), box))
    return SceneGraph(image=image, objects=tuple(objects))


def _directive_for_entry(entry: PlanEntry) -> UnderstandDirective:
    if entry.capability in (Capability.CAPTION, Capability.GLOBAL_UNDERSTANDING) and not entry.targets:
        instruction = f"Use {entry.capability.display} to take in the whole image."
    else:
        instruction = f"Use {entry.capability.display} to gather: {', '.join(entry.targets)}."
    return UnderstandDirective(entry.capability, entry.targets, instruction)


def synthesize_trace(sample: SampleRecord) -> ReasoningTrace:
    """Final trace for an accepted sample: directives from the analysis,
    cues from the merged set, think+answer from geometry when the question
    is in a supported canonical form, else the human-entered answer.

    Raises TraceInvalid if the result fails validation (including any
    pending grounding target that never received a cue).
    """
    if sample.analysis is not None and sample.analysis.plan:
        directives = tuple(_directive_for_entry(e) for e in sample.analysis.plan)
    else:
        labels = tuple(cue.label for cue in sample.cues)
        directives = (
            UnderstandDirective(
                Capability.VISUAL_GROUNDING,
                labels,
                f"Locate in the image: {', '.join(labels)}." if labels else "Inspect the image.",
            ),
        ) if labels else ()

    think = ""
    answer = ""
    try:
        parsed = geometry.parse_question(sample.question)
        case = SimpleNamespace(question=sample.question, question_type=parsed.question_type)
        scene = _scene_from_cues(sample.image, sample.cues)
        answer, oracle_trace = geometry.answer(case, scene)
        think = oracle_trace.think
    except (geometry.UnsupportedQuestionType, geometry.AmbiguousEntity):
        pass
    if not answer:
        answer = sample.answer.strip()
    if not think:
        labels = ", ".join(cue.label for cue in sample.cues) or "the image as a whole"
        think = f"Weighing the gathered evidence ({labels}) against the question leads to the answer."
    if not answer:
        raise TraceInvalid([Violation("EMPTY_ANSWER", "no answer available for this sample", "/answer")])

    trace = ReasoningTrace(
        kind=TraceKind.UNIFIED,
        directives=directives,
        cues=tuple(sample.cues),
        think=think,
        answer=answer,
    )
    try:
        trace = with_raw_text(trace, DEFAULT_GRAMMAR)
    except InvalidTrace as exc:
        raise TraceInvalid([Violation("RENDER_FAILED", str(exc), "/raw_text")]) from None
    report = validate_trace(trace, sample.image)
    if report:
        raise TraceInvalid(report)
    return trace


class CurationStore:
    """Durable sample store with lease-based assignment.

    Thread-safe: every mutation happens under one lock and is appended to
    the event log before the call returns. ``clock`` is injectable for
    lease-expiry tests.
    """

    def __init__(
        self,
        data_dir: str | Path,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        clock: Callable[[], float] = time.time,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.lease_seconds = lease_seconds
        self.clock = clock
        self._lock = threading.RLock()
        self._samples: dict[str, SampleRecord] = {}
        self._enqueue_seq = 0
        self._accepted_seq = 0
        self._events_path = self.data_dir / "events.jsonl"
        self._snapshot_path = self.data_dir / "snapshot.json"
        self._replay()
        self._events = open(self._events_path, "a", encoding="utf-8")

    # -- persistence ------------------------------------------------------

    def _replay(self) -> None:
        if self._snapshot_path.exists():
            snapshot = json.loads(self._snapshot_path.read_text(encoding="utf-8"))
            self._enqueue_seq = snapshot["enqueue_seq"]
            self._accepted_seq = snapshot["accepted_seq"]
            for obj in snapshot["samples"]:
                record = SampleRecord.from_obj(obj)
                record.enqueue_seq = obj.get("enqueue_seq", 0)
                self._samples[record.id] = record
        if not self._events_path.exists():
            return
        with open(self._events_path, encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    self._apply(json.loads(line))

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "enqueue":
            record = SampleRecord.from_obj(event["sample"])
            record.enqueue_seq = event["enqueue_seq"]
            self._samples[record.id] = record
            self._enqueue_seq = max(self._enqueue_seq, record.enqueue_seq)
            return
        sample = self._samples.get(event.get("id", ""))
        if sample is None:
            logger.warning("skipping event for unknown sample %r", event.get("id"))
            return
        if kind == "transition":
            sample.state = SampleState(event["to"])
        elif kind == "annotation":
            incoming = [cue_from_obj(c, "/cues") for c in event["cues"]]
            sample.cues = merge_cues(sample.cues, incoming)
        elif kind == "decision":
            sample.state = SampleState(event["state"])
            sample.review_notes = event.get("notes", "")
            if event.get("trace") is not None:
                sample.trace = trace_from_obj(event["trace"])
            if event.get("accepted_seq") is not None:
                sample.accepted_seq = event["accepted_seq"]
                self._accepted_seq = max(self._accepted_seq, sample.accepted_seq)
        else:
            logger.warning("skipping unknown event type %r", kind)

    def _append(self, event: dict, durable: bool = False) -> None:
        self._events.write(json.dumps(event, ensure_ascii=False, separators=(",", ":")) + "\n")
        self._events.flush()
        if durable:
            os.fsync(self._events.fileno())

    def compact(self) -> None:
        """Fold the event log into the snapshot (atomic rename, then truncate)."""
        with self._lock:
            snapshot = {
                "enqueue_seq": self._enqueue_seq,
                "accepted_seq": self._accepted_seq,
                "samples": [
                    {**s.to_obj(include_lease=False), "enqueue_seq": s.enqueue_seq}
                    for s in sorted(self._samples.values(), key=lambda s: s.enqueue_seq)
                ],
            }
            tmp = self._snapshot_path.with_suffix(".tmp")
            tmp.write_text(json.dumps(snapshot, ensure_ascii=False), encoding="utf-8")
            with open(tmp, "r+b") as handle:
                os.fsync(handle.fileno())
            os.replace(tmp, self._snapshot_path)
            self._events.close()
            self._events = open(self._events_path, "w", encoding="utf-8")

    def close(self) -> None:
        with self._lock:
            self.compact()
            self._events.close()

    # -- queue operations -------------------------------------------------

    def enqueue(self, samples: Iterable[SampleRecord]) -> tuple[int, list[str]]:
        """Append new samples; duplicates are rejected per id, not fatal."""
        inserted = 0
        warnings = []
        with self._lock:
            for sample in samples:
                if sample.state not in (SampleState.RAW, SampleState.AI_ANNOTATED):
                    raise IllegalTransition(sample.id, sample.state, SampleState.RAW)
                if sample.id in self._samples:
                    warnings.append(f"DuplicateId: {sample.id}")
                    continue
                self._enqueue_seq += 1
                record = replace_sample(sample, enqueue_seq=self._enqueue_seq)
                self._samples[record.id] = record
                self._append(
                    {
                        "event": "enqueue",
                        "enqueue_seq": record.enqueue_seq,
                        "sample": record.to_obj(include_lease=False),
                    }
                )
                inserted += 1
        return inserted, warnings

    def _lease_active(self, sample: SampleRecord) -> bool:
        return sample.lease is not None and sample.lease.expiry > self.clock()

    def next_for_review(self, reviewer_id: str) -> SampleRecord | None:
        """Oldest reviewable sample without an active lease, now leased to
        the caller. Grabbing an AI-annotated sample moves it to review."""
        with self._lock:
            candidates = sorted(
                (
                    s
                    for s in self._samples.values()
                    if s.state in (SampleState.AI_ANNOTATED, SampleState.HUMAN_REVIEW)
                    and not self._lease_active(s)
                ),
                key=lambda s: s.enqueue_seq,
            )
            if not candidates:
                return None
            sample = candidates[0]
            if sample.state is SampleState.AI_ANNOTATED:
                self._transition(sample, SampleState.HUMAN_REVIEW)
            sample.lease = Lease(reviewer_id, self.clock() + self.lease_seconds)
            return replace_sample(sample)

    def _transition(self, sample: SampleRecord, to: SampleState) -> None:
        if to not in LEGAL_TRANSITIONS[sample.state]:
            raise IllegalTransition(sample.id, sample.state, to)
        sample.state = to
        self._append({"event": "transition", "id": sample.id, "to": to.value})

    def _checked_out(self, sample_id: str, reviewer_id: str) -> SampleRecord:
        sample = self._samples.get(sample_id)
        if sample is None:
            raise UnknownSample(sample_id)
        if not self._lease_active(sample) or sample.lease.reviewer_id != reviewer_id:
            raise LeaseViolation(f"reviewer {reviewer_id!r} does not hold the lease on {sample_id!r}")
        return sample

    def submit_annotation(self, sample_id: str, reviewer_id: str, cues: list[VisualCue]) -> SampleRecord:
        """Merge reviewer cues into the sample (human cues win on label collision)."""
        with self._lock:
            sample = self._checked_out(sample_id, reviewer_id)
            if sample.state is not SampleState.HUMAN_REVIEW:
                raise IllegalTransition(sample_id, sample.state, SampleState.HUMAN_REVIEW)
            for cue in cues:
                if not cue.label.strip():
                    raise InvalidCue("EMPTY_LABEL", "cue label must be non-empty")
                if isinstance(cue.payload, Boxes):
                    for box in cue.payload.boxes:
                        report = validate_box(box, sample.image)
                        if report:
                            raise InvalidCue(report[0].code, report[0].message)
            sample.cues = merge_cues(sample.cues, cues)
            self._append({"event": "annotation", "id": sample_id, "cues": [cue_to_obj(c) for c in cues]})
            return replace_sample(sample)

    def decide(self, sample_id: str, reviewer_id: str, decision: str, notes: str = "") -> SampleRecord:
        """Accept (synthesizing and validating the final trace) or reject."""
        if decision not in ("accept", "reject"):
            raise ValueError(f"decision must be accept or reject, got {decision!r}")
        with self._lock:
            sample = self._checked_out(sample_id, reviewer_id)
            if sample.state is not SampleState.HUMAN_REVIEW:
                raise IllegalTransition(
                    sample_id,
                    sample.state,
                    SampleState.ACCEPTED if decision == "accept" else SampleState.REJECTED,
                )
            if decision == "accept":
                trace = synthesize_trace(sample)
                self._accepted_seq += 1
                sample.trace = trace
                sample.accepted_seq = self._accepted_seq
                sample.state = SampleState.ACCEPTED
                sample.review_notes = notes
                sample.lease = None
                self._append(
                    {
                        "event": "decision",
                        "id": sample_id,
                        "state": SampleState.ACCEPTED.value,
                        "notes": notes,
                        "trace": trace_to_obj(trace),
                        "accepted_seq": sample.accepted_seq,
                    },
                    durable=True,
                )
            else:
                sample.state = SampleState.REJECTED
                sample.review_notes = notes
                sample.lease = None
                self._append(
                    {
                        "event": "decision",
                        "id": sample_id,
                        "state": SampleState.REJECTED.value,
                        "notes": notes,
                    },
                    durable=True,
                )
            return replace_sample(sample)

    # -- reads and export --------------------------------------------------

    def get(self, sample_id: str) -> SampleRecord:
        with self._lock:
            sample = self._samples.get(sample_id)
            if sample is None:
                raise UnknownSample(sample_id)
            return replace_sample(sample)

    def stats(self) -> dict:
        with self._lock:
            counts = {state.value: 0 for state in SampleState}
            for sample in self._samples.values():
                counts[sample.state.value] += 1
            counts["total"] = len(self._samples)
            return counts

    def all_samples(self) -> list[SampleRecord]:
        with self._lock:
            return [replace_sample(s) for s in sorted(self._samples.values(), key=lambda s: s.enqueue_seq)]

    def export_accepted(self, path: str | Path) -> int:
        """Write accepted samples (with embedded trace JSON) as JSONL,
        ordered by acceptance; returns the line count."""
        with self._lock:
            accepted = sorted(
                (s for s in self._samples.values() if s.state is SampleState.ACCEPTED),
                key=lambda s: s.accepted_seq,
            )
            lines = [
                json.dumps(s.to_obj(include_lease=False), ensure_ascii=False, separators=(",", ":"))
                for s in accepted
            ]
        with open(path, "w", encoding="utf-8") as handle:
            for line in lines:
                handle.write(line + "\n")
        return len(lines)

    def import_accepted(self, path: str | Path) -> int:
        """Load a previous export verbatim (ids must not collide)."""
        count = 0
        with self._lock, open(path, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, 1):
                if not line.strip():
                    continue
                record = SampleRecord.from_obj(json.loads(line), f"line {line_no}")
                if record.state is not SampleState.ACCEPTED:
                    raise SchemaViolation(f"line {line_no}/state", "expected accepted sample")
                if record.id in self._samples:
                    raise DuplicateId(record.id)
                self._enqueue_seq += 1
                record.enqueue_seq = self._enqueue_seq
                self._accepted_seq = max(self._accepted_seq, record.accepted_seq or 0)
                self._samples[record.id] = record
                self._append(
                    {
                        "event": "enqueue",
                        "enqueue_seq": record.enqueue_seq,
                        "sample": record.to_obj(include_lease=False),
                    }
                )
                count += 1
        return count


def replace_sample(sample: SampleRecord, **changes) -> SampleRecord:
    """Shallow copy with field overrides (records are handed out as copies)."""
    copied = replace(sample, cues=list(sample.cues), **changes)
    return copied


def create_app(store: CurationStore) -> FastAPI:
    """REST facade over the store; all bodies are JSON."""
    app = FastAPI(title="curation service", docs_url=None, redoc_url=None)

    def error(status: int, name: str, detail: str, extra: dict | None = None) -> JSONResponse:
        body = {"error": name, "detail": detail}
        if extra:
            body.update(extra)
        return JSONResponse(body, status_code=status)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/api/stats")
    def stats():
        return store.stats()

    @app.get("/api/queue/next")
    def queue_next(reviewer: str):
        sample = store.next_for_review(reviewer)
        if sample is None:
            return Response(status_code=204)
        return sample.to_obj()

    @app.get("/api/samples/{sample_id}")
    def get_sample(sample_id: str):
        try:
            return store.get(sample_id).to_obj()
        except UnknownSample:
            return error(404, "UnknownSample", f"no sample {sample_id!r}")

    @app.post("/api/samples/{sample_id}/annotation")
    async def post_annotation(sample_id: str, request: Request):
        body = await request.json()
        reviewer = str(body.get("reviewer", ""))
        try:
            cues = [cue_from_obj(c, f"/cues/{i}") for i, c in enumerate(body.get("cues", []))]
            sample = store.submit_annotation(sample_id, reviewer, cues)
        except SchemaViolation as exc:
            return error(400, "SchemaViolation", str(exc))
        except UnknownSample:
            return error(404, "UnknownSample", f"no sample {sample_id!r}")
        except LeaseViolation as exc:
            return error(409, "LeaseViolation", str(exc))
        except IllegalTransition as exc:
            return error(409, "IllegalTransition", str(exc))
        except InvalidCue as exc:
            return error(422, "InvalidCue", str(exc), {"code": exc.code})
        return sample.to_obj()

    @app.post("/api/samples/{sample_id}/decision")
    async def post_decision(sample_id: str, request: Request):
        body = await request.json()
        reviewer = str(body.get("reviewer", ""))
        decision = str(body.get("decision", ""))
        notes = str(body.get("notes", ""))
        try:
            sample = store.decide(sample_id, reviewer, decision, notes)
        except ValueError as exc:
            if isinstance(exc, TraceInvalid):
                return error(
                    422,
                    "TraceInvalid",
                    str(exc),
                    {"report": [{"code": v.code, "message": v.message, "path": v.path} for v in exc.report]},
                )
            if isinstance(exc, IllegalTransition):
                return error(409, "IllegalTransition", str(exc))
            return error(400, "BadRequest", str(exc))
        except UnknownSample:
            return error(404, "UnknownSample", f"no sample {sample_id!r}")
        except LeaseViolation as exc:
            return error(409, "LeaseViolation", str(exc))
        return sample.to_obj()

    return app
