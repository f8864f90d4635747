"""Client for the external AI-expert LMM behind a chat-completion endpoint.

The expert is asked two things per sample: which physical entities matter
for the question (entity-focus prompt), and which intrinsic capabilities to
use to gather them (capability-plan prompt, conditioned on the first
reply). For capabilities the expert is good at (caption, grounded caption,
text recognition, global understanding) it is then asked to produce the
annotation directly; grounding-heavy work is left pending for a human.

Prompts live in versioned template files so drift is diffable; the template
version participates in the cache key. Responses are cached on disk, so
reruns are free and byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .trace_model import Boxes, Capability, CaptionText, ImageRef, Text, VisualCue
from .trace_grammar import DEFAULT_GRAMMAR, extract_boxes
from .curation_filters import RawQA

logger = logging.getLogger(__name__)

# Capabilities the expert annotates directly; the rest go to human review.
EASY_CAPABILITIES = frozenset(
    {
        Capability.CAPTION,
        Capability.GROUNDED_CAPTION,
        Capability.TEXT_RECOGNITION,
        Capability.GLOBAL_UNDERSTANDING,
    }
)

# Capability menu substituted into the plan prompt by default.
DEFAULT_TASK_LIST = (
    Capability.VISUAL_GROUNDING,
    Capability.GROUNDED_CAPTION,
    Capability.CAPTION,
    Capability.TEXT_RECOGNITION,
    Capability.REC,
    Capability.REG,
)


class ExpertError(Exception):
    """Base for expert-pipeline failures."""


class TransportError(ExpertError):
    """Endpoint unreachable or persistently failing; raised after retries."""


class ParseFailure(ExpertError):
    """Expert reply could not be interpreted; never retried (the model is
    not idempotent), the sample is routed to human review instead."""

    def __init__(self, message: str, raw_response: str):
        super().__init__(message)
        self.raw_response = raw_response


class EmptyQuestion(ValueError):
    pass


class EmptyTaskList(ValueError):
    pass


@dataclass
class ExpertConfig:
    base_url: str
    model_name: str = "expert-lmm"
    api_key_env: str = "EXPERT_API_KEY"
    max_inflight: int = 4
    retry_limit: int = 3
    timeout: float = 30.0
    cache_dir: Path | None = None
    template_version: str = "v1"
    backoff_base: float = 0.2

    def __post_init__(self) -> None:
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")
        if not 0 <= self.retry_limit <= 10:
            raise ValueError("retry_limit must be between 0 and 10")
        if self.cache_dir is not None:
            self.cache_dir = Path(self.cache_dir)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExpertConfig":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**obj)


@dataclass(frozen=True)
class PlanEntry:
    capability: Capability
    targets: tuple[str, ...]

    def to_obj(self) -> dict:
        return {"capability": self.capability.value, "targets": list(self.targets)}


@dataclass(frozen=True)
class ExpertAnalysis:
    """What the expert said about one sample: entities plus gathering plan."""

    key_entities: tuple[str, ...]
    plan: tuple[PlanEntry, ...]
    raw_entity_response: str = ""
    raw_plan_response: str = ""
    warnings: tuple[str, ...] = ()
    cached: bool = field(default=False, compare=False)

    def to_obj(self) -> dict:
        # "cached" is transport metadata, deliberately not serialized: reruns
        # must produce byte-identical artifacts whether or not they hit cache.
        return {
            "key_entities": list(self.key_entities),
            "plan": [entry.to_obj() for entry in self.plan],
            "raw_entity_response": self.raw_entity_response,
            "raw_plan_response": self.raw_plan_response,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_obj(cls, obj: dict, cached: bool = False) -> "ExpertAnalysis":
        return cls(
            key_entities=tuple(obj["key_entities"]),
            plan=tuple(PlanEntry(Capability(p["capability"]), tuple(p["targets"])) for p in obj["plan"]),
            raw_entity_response=obj.get("raw_entity_response", ""),
            raw_plan_response=obj.get("raw_plan_response", ""),
            warnings=tuple(obj.get("warnings", ())),
            cached=cached,
        )

    def pending_entries(self) -> list[PlanEntry]:
        return [entry for entry in self.plan if entry.capability not in EASY_CAPABILITIES]


def _load_template(name: str, version: str) -> str:
    return resources.files("griffonforge").joinpath(f"templates/{name}_{version}.txt").read_text("utf-8")


def build_entity_prompt(question: str, version: str = "v1") -> str:
    """Prompt asking which physical entities matter for the question."""
    if not question.strip():
        raise EmptyQuestion("question must be non-empty")
    return _load_template("entity_focus", version).replace("{question}", question)


def build_plan_prompt(question: str, task_list: Sequence[Capability], version: str = "v1") -> str:
    """Prompt asking which capabilities gather the key entity information."""
    if not question.strip():
        raise EmptyQuestion("question must be non-empty")
    if not task_list:
        raise EmptyTaskList("task_list must be non-empty")
    tasks = "[" + ", ".join(c.display for c in task_list) + "]"
    template = _load_template("capability_plan", version)
    return template.replace("{question}", question).replace("[TASKs]", tasks)


def user_message(text: str, image: ImageRef | None = None) -> dict:
    content: list[dict] = [{"type": "text", "text": text}]
    if image is not None and image.uri:
        content.append({"type": "image_url", "image_url": {"url": image.uri}})
    return {"role": "user", "content": content}


class ChatClient:
    """Minimal chat-completion client: bounded concurrency, retry with
    exponential backoff on transport/5xx errors only."""

    def __init__(self, cfg: ExpertConfig):
        self.cfg = cfg
        headers = {}
        api_key = os.environ.get(cfg.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._http = httpx.Client(base_url=cfg.base_url, timeout=cfg.timeout, headers=headers)
        self._gate = threading.BoundedSemaphore(cfg.max_inflight)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def complete(self, messages: list[dict]) -> str:
        body = {"model": self.cfg.model_name, "messages": messages}
        last_error: Exception | None = None
        for attempt in range(self.cfg.retry_limit + 1):
            if attempt:
                time.sleep(self.cfg.backoff_base * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    response = self._http.post("/chat/completions", json=body)
            except httpx.HTTPError as exc:
                last_error = exc
                logger.warning("expert call failed (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code >= 500:
                last_error = RuntimeError(f"server error {response.status_code}")
                logger.warning("expert returned %d (attempt %d)", response.status_code, attempt + 1)
                continue
            if response.status_code != 200:
                raise TransportError(f"expert endpoint returned {response.status_code}: {response.text[:200]}")
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise TransportError(f"malformed completion payload: {exc}") from exc
        raise TransportError(f"expert endpoint unavailable after {self.cfg.retry_limit + 1} attempts: {last_error}")


def _cache_path(cfg: ExpertConfig, parts: list) -> Path | None:
    if cfg.cache_dir is None:
        return None
    digest = hashlib.sha256(
        json.dumps(parts, ensure_ascii=False, sort_keys=True).encode("utf-8")
    ).hexdigest()
    return cfg.cache_dir / digest[:2] / f"{digest}.json"


def _cache_read(path: Path | None) -> dict | None:
    if path is None or not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def _cache_write(path: Path | None, obj: dict) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as handle:
        json.dump(obj, handle, ensure_ascii=False)
    os.replace(tmp, path)


def _parse_entities(raw: str) -> tuple[str, ...]:
    lines = [line.strip() for line in raw.splitlines() if line.strip()]
    if len(lines) == 1 and "," in lines[0]:
        lines = [part.strip() for part in lines[0].split(",")]
    entities = []
    for line in lines:
        cleaned = line.lstrip("-*•0123456789. ").strip().strip(".").lower()
        if cleaned and cleaned not in entities:
            entities.append(cleaned)
    return tuple(entities)


def _parse_plan(raw: str, key_entities: tuple[str, ...]) -> tuple[tuple[PlanEntry, ...], tuple[str, ...]]:
    warnings: list[str] = []
    text = raw.strip()
    if not text:
        return (), ()
    stripped = text.strip().strip('"').strip("'").rstrip(".").lower()
    if stripped == "global understanding":
        return (PlanEntry(Capability.GLOBAL_UNDERSTANDING, ()),), ()

    entries: list[PlanEntry] = []
    for line in text.splitlines():
        line = line.strip().lstrip("-*•0123456789. ").strip()
        if not line:
            continue
        if ":" in line:
            cap_text, _, target_text = line.partition(":")
            capability, warned = Capability.from_text(cap_text)
            if warned:
                warnings.append(f"unknown capability {cap_text.strip()!r}, using Global Understanding")
            targets = tuple(t.strip().lower() for t in target_text.split(",") if t.strip())
        else:
            capability, warned = Capability.from_text(line)
            if warned:
                warnings.append(f"unknown capability {line!r}, using Global Understanding")
            targets = ()
        if not targets and capability not in (Capability.CAPTION, Capability.GLOBAL_UNDERSTANDING):
            targets = key_entities
        entries.append(PlanEntry(capability, targets))
    # Collapse duplicate capability+targets pairs while keeping order.
    unique = tuple(dict.fromkeys(entries))
    return unique, tuple(warnings)


def analyze(
    sample,
    cfg: ExpertConfig,
    client: ChatClient | None = None,
    task_list: Sequence[Capability] = DEFAULT_TASK_LIST,
) -> ExpertAnalysis:
    """Run the two-stage question analysis against the expert, with caching.

    The plan request is conditioned on the entity reply (sent as prior
    assistant turn). Results are cached by (model, question, image id,
    template version); a cache hit makes zero network calls.
    """
    question, image = sample.question, sample.image
    cache_key = _cache_path(
        cfg, ["analysis", cfg.model_name, cfg.template_version, image.id, question]
    )
    hit = _cache_read(cache_key)
    if hit is not None:
        return ExpertAnalysis.from_obj(hit, cached=True)

    own_client = client is None
    client = client or ChatClient(cfg)
    try:
        entity_prompt = build_entity_prompt(question, cfg.template_version)
        entity_messages = [user_message(entity_prompt, image)]
        raw_entities = client.complete(entity_messages)
        key_entities = _parse_entities(raw_entities)

        plan_prompt = build_plan_prompt(question, task_list, cfg.template_version)
        plan_messages = entity_messages + [
            {"role": "assistant", "content": raw_entities},
            user_message(plan_prompt),
        ]
        raw_plan = client.complete(plan_messages)
        plan, warnings = _parse_plan(raw_plan, key_entities)
    finally:
        if own_client:
            client.close()

    if not plan:
        raise ParseFailure("could not extract a capability plan", raw_plan)
    if not key_entities and plan != (PlanEntry(Capability.GLOBAL_UNDERSTANDING, ()),):
        raise ParseFailure("no key entities but plan is not Global Understanding", raw_entities)

    analysis = ExpertAnalysis(
        key_entities=key_entities,
        plan=plan,
        raw_entity_response=raw_entities,
        raw_plan_response=raw_plan,
        warnings=warnings,
    )
    _cache_write(cache_key, analysis.to_obj())
    return analysis


_TASK_PROMPTS: dict[Capability, Callable[[str, tuple[str, ...]], str]] = {
    Capability.CAPTION: lambda q, t: "Describe the image in one or two sentences.",
    Capability.GROUNDED_CAPTION: lambda q, t: (
        "Describe the image, marking each mentioned object with its bounding box as [x1, y1, x2, y2]."
    ),
    Capability.TEXT_RECOGNITION: lambda q, t: (
        "Read out all text visible in the image." + (f" Focus on: {', '.join(t)}." if t else "")
    ),
    Capability.GLOBAL_UNDERSTANDING: lambda q, t: (
        f"Give a global description of the image as it relates to: {q}"
    ),
}


def annotate_easy_tasks(
    sample,
    analysis: ExpertAnalysis,
    cfg: ExpertConfig,
    client: ChatClient | None = None,
) -> tuple[list[VisualCue], list[PlanEntry]]:
    """Let the expert fill in the plan entries it is good at.

    Returns (cues, pending): cues for caption/grounded-caption/text/global
    entries, and the untouched grounding-style entries for human review.
    Grounded-caption boxes are pulled out with the lenient extractor.
    """
    question, image = sample.question, sample.image
    cues: list[VisualCue] = []
    pending: list[PlanEntry] = []
    own_client = client is None and any(e.capability in EASY_CAPABILITIES for e in analysis.plan)
    client = client if client is not None else (ChatClient(cfg) if own_client else None)
    try:
        for entry in analysis.plan:
            if entry.capability not in EASY_CAPABILITIES:
                pending.append(entry)
                continue
            cache_key = _cache_path(
                cfg,
                [
                    "task",
                    cfg.model_name,
                    cfg.template_version,
                    image.id,
                    question,
                    entry.capability.value,
                    list(entry.targets),
                ],
            )
            hit = _cache_read(cache_key)
            if hit is not None:
                response = hit["response"]
            else:
                prompt = _TASK_PROMPTS[entry.capability](question, entry.targets)
                response = client.complete([user_message(prompt, image)])
                _cache_write(cache_key, {"response": response})
            cues.extend(_cues_from_response(entry, response))
    finally:
        if own_client and client is not None:
            client.close()
    return cues, pending


def _cues_from_response(entry: PlanEntry, response: str) -> list[VisualCue]:
    default_label = entry.targets[0] if entry.targets else ""
    if entry.capability is Capability.TEXT_RECOGNITION:
        return [VisualCue(default_label or "text", Text(response))]
    if entry.capability in (Capability.CAPTION, Capability.GLOBAL_UNDERSTANDING):
        return [VisualCue(default_label or "caption", CaptionText(response))]
    # Grounded caption: lift out labeled boxes; fall back to plain caption.
    pairs, warnings = extract_boxes(response, DEFAULT_GRAMMAR)
    for warning in warnings:
        logger.debug("grounded caption: %s", warning)
    if not pairs:
        return [VisualCue(default_label or "caption", CaptionText(response))]
    grouped: dict[str, list] = {}
    for label, box in pairs:
        grouped.setdefault(label.lower(), []).append(box)
    return [VisualCue(label, Boxes(tuple(boxes))) for label, boxes in grouped.items()]


@dataclass
class AnnotationResult:
    """Outcome of the expert stage for one record; failures are routed, not fatal."""

    qa: RawQA
    analysis: ExpertAnalysis | None = None
    cues: list[VisualCue] = field(default_factory=list)
    pending: list[PlanEntry] = field(default_factory=list)
    error: str | None = None

    @property
    def transport_failed(self) -> bool:
        return self.error is not None and self.error.startswith("TransportError")


def annotate_batch(
    qas: Sequence[RawQA],
    cfg: ExpertConfig,
    client: ChatClient | None = None,
) -> list[AnnotationResult]:
    """Analyze + easy-task annotate a batch with bounded concurrency.

    Output order matches input order. Per-record failures are captured in
    the result (parse failures route the record to human review); only the
    caller decides whether too many transport failures abort the run.
    """
    own_client = client is None
    client = client or ChatClient(cfg)

    def one(qa: RawQA) -> AnnotationResult:
        try:
            analysis = analyze(qa, cfg, client)
            cues, pending = annotate_easy_tasks(qa, analysis, cfg, client)
            return AnnotationResult(qa, analysis, cues, pending)
        except ParseFailure as exc:
            return AnnotationResult(qa, error=f"ParseFailure: {exc}")
        except TransportError as exc:
            return AnnotationResult(qa, error=f"TransportError: {exc}")

    try:
        with ThreadPoolExecutor(max_workers=cfg.max_inflight) as pool:
            return list(pool.map(one, qas))
    finally:
        if own_client:
            client.close()
