"""Text grammar and JSON codec for reasoning traces.

``render`` turns a structured trace into the flat generated-sequence form;
``parse`` is its exact inverse on rendered output and survives arbitrary
bytes otherwise (structured errors, never crashes). ``extract_boxes`` is the
lenient sibling used when scanning imperfect model output for grounded
evidence.

The flat form is line-based::

    UNDERSTAND:
    @ Visual Grounding [red balloon; white balloon] :: Locate each balloon.
    red balloon: [100, 50, 180, 130]
    meat: none
    THINK:
    ...free text...
    ANSWER:
    yes

Rendering is strict so that parsing can be exact: labels must not contain
":" or newlines, targets must not contain "[", "]", ";" or newlines, and no
segment may contain a marker string.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

from .trace_model import (
    ANSWER_MARKER,
    THINK_MARKER,
    UNDERSTAND_MARKER,
    BoundingBox,
    Boxes,
    Capability,
    CaptionText,
    DegenerateBox,
    NoEvidence,
    ReasoningTrace,
    Text,
    TraceKind,
    UnderstandDirective,
    VisualCue,
)

DIRECTIVE_PREFIX = "@ "
_TARGETS_OPEN = " ["
_TARGETS_CLOSE = "] :: "
_TARGET_SEP = "; "
_LABEL_SEP = ": "
_BOX_JOIN = ", "
_TEXT_TAG = "text "
_CAPTION_TAG = "caption "


class InvalidTrace(ValueError):
    """Trace violates a constraint the grammar needs for exact rendering."""


class ParseError(ValueError):
    """Base for all structured parse failures; carries a character offset."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


class MissingMarker(ParseError):
    def __init__(self, name: str, expected_after_offset: int):
        super().__init__(f"missing {name} marker after offset {expected_after_offset}", expected_after_offset)
        self.name = name
        self.expected_after_offset = expected_after_offset


class DuplicateMarker(ParseError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"duplicated {name} marker at offset {offset}", offset)
        self.name = name


class MarkerOutOfOrder(ParseError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"{name} marker out of order at offset {offset}", offset)
        self.name = name


class EmptySegment(ParseError):
    def __init__(self, name: str, offset: int = 0):
        super().__init__(f"{name} segment is empty", offset)
        self.name = name


class MalformedBox(ParseError):
    def __init__(self, offset: int, slice_: str):
        super().__init__(f"malformed box literal at offset {offset}: {slice_!r}", offset)
        self.slice = slice_


class MalformedLine(ParseError):
    def __init__(self, offset: int, line: str):
        super().__init__(f"unparseable line at offset {offset}: {line!r}", offset)
        self.line = line


class InputTooLarge(ParseError):
    def __init__(self, size: int, limit: int):
        super().__init__(f"input of {size} chars exceeds parse limit {limit}", 0)
        self.limit = limit


class SchemaViolation(ValueError):
    """JSON does not match the trace schema."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


@dataclass(frozen=True)
class GrammarConfig:
    """Concrete surface form of the grammar.

    The segment markers are configurable because the trained surface form of
    a given model is not fixed by this library; defaults favor unambiguous
    splitting. Markers must be pairwise distinct, non-empty, and none may be
    a substring of another.
    """

    understand_marker: str = UNDERSTAND_MARKER
    think_marker: str = THINK_MARKER
    answer_marker: str = ANSWER_MARKER
    none_token: str = "none"
    box_open: str = "["
    box_close: str = "]"
    box_sep: str = ", "

    def __post_init__(self) -> None:
        markers = (self.understand_marker, self.think_marker, self.answer_marker)
        if len(set(markers)) != 3 or any(not m for m in markers):
            raise ValueError("segment markers must be non-empty and pairwise distinct")
        for a in markers:
            for b in markers:
                if a != b and a in b:
                    raise ValueError(f"marker {a!r} is a substring of {b!r}")
        if not self.none_token or not self.box_open or not self.box_close:
            raise ValueError("none_token, box_open and box_close must be non-empty")

    @property
    def markers(self) -> tuple[str, str, str]:
        return (self.understand_marker, self.think_marker, self.answer_marker)


DEFAULT_GRAMMAR = GrammarConfig()


@dataclass(frozen=True)
class SegmentSpans:
    """(start, end) character offsets of each segment's content in raw_text."""

    understand_span: tuple[int, int]
    think_span: tuple[int, int]
    answer_span: tuple[int, int]


def _render_box(box: BoundingBox, cfg: GrammarConfig) -> str:
    coords = cfg.box_sep.join(str(v) for v in (box.x1, box.y1, box.x2, box.y2))
    return f"{cfg.box_open}{coords}{cfg.box_close}"


def _check_text(value: str, what: str, cfg: GrammarConfig, allow_newlines: bool = False) -> None:
    if not allow_newlines and ("\n" in value or "\r" in value):
        raise InvalidTrace(f"{what} must not contain newlines: {value!r}")
    for marker in cfg.markers:
        if marker in value:
            raise InvalidTrace(f"{what} must not contain the marker {marker!r}")


def _render_cue(cue: VisualCue, cfg: GrammarConfig) -> str:
    label = cue.label
    if not label or label != label.strip() or ":" in label:
        raise InvalidTrace(f"cue label must be non-empty, trimmed and colon-free: {label!r}")
    if label.startswith(DIRECTIVE_PREFIX):
        raise InvalidTrace(f"cue label must not start with the directive prefix: {label!r}")
    _check_text(label, "cue label", cfg)
    payload = cue.payload
    if isinstance(payload, Boxes):
        if not payload.boxes:
            raise InvalidTrace(f"cue {label!r} has an empty boxes payload")
        body = _BOX_JOIN.join(_render_box(b, cfg) for b in payload.boxes)
    elif isinstance(payload, Text):
        body = _TEXT_TAG + json.dumps(payload.value, ensure_ascii=False)
        _check_text(body, "cue text", cfg)
    elif isinstance(payload, CaptionText):
        body = _CAPTION_TAG + json.dumps(payload.value, ensure_ascii=False)
        _check_text(body, "cue caption", cfg)
    elif isinstance(payload, NoEvidence):
        body = cfg.none_token
    else:
        raise InvalidTrace(f"unknown payload type {type(payload).__name__}")
    return f"{label}{_LABEL_SEP}{body}"


def _render_directive(directive: UnderstandDirective, cfg: GrammarConfig) -> str:
    if not directive.instruction_text:
        raise InvalidTrace("directive instruction must be non-empty")
    _check_text(directive.instruction_text, "directive instruction", cfg)
    for target in directive.targets:
        if not target or target != target.strip():
            raise InvalidTrace(f"directive target must be non-empty and trimmed: {target!r}")
        if any(ch in target for ch in "[];"):
            raise InvalidTrace(f"directive target must not contain '[', ']' or ';': {target!r}")
        _check_text(target, "directive target", cfg)
    targets = _TARGET_SEP.join(directive.targets)
    return (
        f"{DIRECTIVE_PREFIX}{directive.capability.display}"
        f"{_TARGETS_OPEN}{targets}{_TARGETS_CLOSE}{directive.instruction_text}"
    )


def render(trace: ReasoningTrace, cfg: GrammarConfig = DEFAULT_GRAMMAR) -> str:
    """Render a trace into the flat text form. Deterministic.

    Raises InvalidTrace when the trace cannot be represented exactly
    (empty answer, kind inconsistency, or content that collides with the
    grammar's delimiters or markers).
    """
    if not trace.answer.strip():
        raise InvalidTrace("cannot render a trace with an empty answer")
    if trace.kind is TraceKind.SHORTCUT:
        if trace.directives or trace.cues or trace.think.strip():
            raise InvalidTrace("shortcut traces must have empty understand and think parts")
    elif not trace.think.strip():
        raise InvalidTrace("unified traces must have a non-empty think segment")

    _check_text(trace.think, "think segment", cfg, allow_newlines=True)
    _check_text(trace.answer, "answer segment", cfg, allow_newlines=True)

    lines = [_render_directive(d, cfg) for d in trace.directives]
    lines += [_render_cue(c, cfg) for c in trace.cues]
    understand = "\n".join(lines)

    def block(content: str) -> str:
        return content + "\n" if content else ""

    out = (
        cfg.understand_marker + "\n" + block(understand)
        + cfg.think_marker + "\n" + block(trace.think)
        + cfg.answer_marker + "\n" + block(trace.answer)
    )
    for marker in cfg.markers:
        if out.count(marker) != 1:
            raise InvalidTrace(f"rendered output would contain marker {marker!r} more than once")
    return out


def with_raw_text(trace: ReasoningTrace, cfg: GrammarConfig = DEFAULT_GRAMMAR) -> ReasoningTrace:
    """Return the trace with raw_text set to its rendered form."""
    return replace(trace, raw_text=render(trace, cfg))


def _find_marker(raw: str, marker: str) -> list[int]:
    """Offsets where the marker starts a line."""
    found = []
    start = 0
    while True:
        idx = raw.find(marker, start)
        if idx < 0:
            return found
        if idx == 0 or raw[idx - 1] == "\n":
            found.append(idx)
        start = idx + 1


_BOX_LITERAL_RE = re.compile(r"^\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*$")


def _parse_box_literal(inner: str, offset: int) -> BoundingBox:
    match = _BOX_LITERAL_RE.match(inner)
    if not match:
        raise MalformedBox(offset, inner)
    x1, y1, x2, y2 = (int(g) for g in match.groups())
    if x2 <= x1 or y2 <= y1:
        raise MalformedBox(offset, inner)
    return BoundingBox(x1, y1, x2, y2)


def _parse_box_list(body: str, offset: int, cfg: GrammarConfig) -> Boxes:
    boxes = []
    pos = 0
    while pos < len(body):
        if body.startswith(_BOX_JOIN.rstrip(), pos):
            pos += 1
            continue
        if body[pos] in " \t":
            pos += 1
            continue
        if not body.startswith(cfg.box_open, pos):
            raise MalformedBox(offset + pos, body[pos : pos + 24])
        end = body.find(cfg.box_close, pos + len(cfg.box_open))
        if end < 0:
            raise MalformedBox(offset + pos, body[pos : pos + 24])
        inner = body[pos + len(cfg.box_open) : end]
        boxes.append(_parse_box_literal(inner, offset + pos))
        pos = end + len(cfg.box_close)
    if not boxes:
        raise MalformedBox(offset, body)
    return Boxes(tuple(boxes))


def _parse_json_string(body: str, offset: int, line: str) -> str:
    try:
        value = json.loads(body)
    except json.JSONDecodeError:
        raise MalformedLine(offset, line) from None
    if not isinstance(value, str):
        raise MalformedLine(offset, line)
    return value


def _parse_directive(line: str, offset: int) -> UnderstandDirective:
    rest = line[len(DIRECTIVE_PREFIX) :]
    open_idx = rest.find(_TARGETS_OPEN)
    if open_idx < 0:
        raise MalformedLine(offset, line)
    close_idx = rest.find(_TARGETS_CLOSE, open_idx)
    if close_idx < 0:
        raise MalformedLine(offset, line)
    capability_text = rest[:open_idx]
    capability, warned = Capability.from_text(capability_text)
    if warned:
        raise MalformedLine(offset, line)
    targets_blob = rest[open_idx + len(_TARGETS_OPEN) : close_idx]
    targets = tuple(t for t in targets_blob.split(_TARGET_SEP) if t) if targets_blob else ()
    instruction = rest[close_idx + len(_TARGETS_CLOSE) :]
    return UnderstandDirective(capability, targets, instruction)


def _parse_cue(line: str, offset: int, cfg: GrammarConfig) -> VisualCue:
    sep = line.find(_LABEL_SEP)
    if sep <= 0:
        raise MalformedLine(offset, line)
    label = line[:sep]
    body = line[sep + len(_LABEL_SEP) :]
    body_offset = offset + sep + len(_LABEL_SEP)
    if body == cfg.none_token:
        return VisualCue(label, NoEvidence())
    if body.startswith(cfg.box_open):
        return VisualCue(label, _parse_box_list(body, body_offset, cfg))
    if body.startswith(_TEXT_TAG):
        return VisualCue(label, Text(_parse_json_string(body[len(_TEXT_TAG) :], body_offset, line)))
    if body.startswith(_CAPTION_TAG):
        return VisualCue(label, CaptionText(_parse_json_string(body[len(_CAPTION_TAG) :], body_offset, line)))
    raise MalformedLine(offset, line)


def parse(
    raw: str,
    cfg: GrammarConfig = DEFAULT_GRAMMAR,
    max_chars: int = 16_000_000,
) -> tuple[ReasoningTrace, SegmentSpans]:
    """Parse flat text back into a structured trace.

    Exact inverse of render on rendered output. On arbitrary input it either
    returns a best-effort structure or raises a ParseError subclass naming
    the first offending offset; it never raises anything else.
    """
    if len(raw) > max_chars:
        raise InputTooLarge(len(raw), max_chars)

    names = ("understand", "think", "answer")
    positions = []
    search_from = 0
    for name, marker in zip(names, cfg.markers):
        found = _find_marker(raw, marker)
        if not found:
            raise MissingMarker(name, search_from)
        if len(found) > 1:
            raise DuplicateMarker(name, found[1])
        if found[0] < search_from:
            raise MarkerOutOfOrder(name, found[0])
        positions.append(found[0])
        search_from = found[0] + len(marker)

    def segment(marker_pos: int, marker: str, end: int) -> tuple[str, int]:
        # Content starts after the marker line; a marker not followed by a
        # newline keeps its same-line remainder as content (lenient input).
        content_start = marker_pos + len(marker)
        if content_start < len(raw) and raw[content_start] == "\n":
            content_start += 1
        block = raw[content_start:end]
        if block.endswith("\n"):
            block = block[:-1]
        return block, content_start

    u_block, u_start = segment(positions[0], cfg.understand_marker, positions[1])
    t_block, t_start = segment(positions[1], cfg.think_marker, positions[2])
    a_block, a_start = segment(positions[2], cfg.answer_marker, len(raw))

    if not a_block.strip():
        raise EmptySegment("answer", positions[2])
    if u_block.strip() and not t_block.strip():
        raise EmptySegment("think", positions[1])

    directives: list[UnderstandDirective] = []
    cues: list[VisualCue] = []
    line_offset = u_start
    for line in u_block.split("\n") if u_block else []:
        if line.strip():
            if line.startswith(DIRECTIVE_PREFIX):
                directives.append(_parse_directive(line, line_offset))
            else:
                cues.append(_parse_cue(line, line_offset, cfg))
        line_offset += len(line) + 1

    kind = TraceKind.UNIFIED if t_block.strip() else TraceKind.SHORTCUT
    trace = ReasoningTrace(
        kind=kind,
        directives=tuple(directives),
        cues=tuple(cues),
        think=t_block,
        answer=a_block,
        raw_text=raw,
    )
    spans = SegmentSpans(
        understand_span=(u_start, u_start + len(u_block)),
        think_span=(t_start, t_start + len(t_block)),
        answer_span=(a_start, a_start + len(a_block)),
    )
    return trace, spans


_CANDIDATE_RE = re.compile(r"\[([^\[\]]*)\]")
_NUMERIC_INNER_RE = re.compile(r"^[\s\d,+-]+$")
_ARTICLES = {"a", "an", "the"}


def extract_boxes(
    raw_segment: str, cfg: GrammarConfig = DEFAULT_GRAMMAR
) -> tuple[list[tuple[str, BoundingBox]], list[str]]:
    """Scan arbitrary prose for labeled box literals, leniently.

    Returns (pairs, warnings): every well-formed labeled box in order of
    appearance, plus a warning per malformed numeric literal or unlabeled
    box. Bracketed text that is not numeric at all is treated as prose and
    ignored. Labels come from either the "label: [..]" form (phrase since
    the last delimiter) or the bare "a dog [..]" form (final word, articles
    skipped); a box preceded only by a comma inherits the previous label.
    """
    pairs: list[tuple[str, BoundingBox]] = []
    warnings: list[str] = []
    prev_end = 0
    prev_label = ""
    for match in _CANDIDATE_RE.finditer(raw_segment):
        inner = match.group(1)
        before = raw_segment[prev_end : match.start()]
        prev_end = match.end()
        if not _NUMERIC_INNER_RE.match(inner):
            continue
        label = _label_before(before, prev_label)
        try:
            box = _parse_box_literal(inner, match.start())
        except MalformedBox:
            warnings.append(f"malformed box at offset {match.start()}: [{inner}]")
            continue
        if box.x1 < 0 or box.y1 < 0:
            warnings.append(f"malformed box at offset {match.start()}: [{inner}]")
            continue
        if not label:
            warnings.append(f"box without label at offset {match.start()}: [{inner}]")
            continue
        pairs.append((label, box))
        prev_label = label
    return pairs, warnings


def _label_before(before: str, prev_label: str) -> str:
    stripped = before.strip()
    if not stripped or stripped == ",":
        return prev_label
    if stripped.endswith(":"):
        phrase = stripped[:-1]
        for delim in (",", ";", ".", "\n", "]", ")"):
            cut = phrase.rfind(delim)
            if cut >= 0:
                phrase = phrase[cut + 1 :]
        return phrase.strip()
    words = re.findall(r"[\w'-]+", stripped)
    while words and words[-1].lower() in _ARTICLES:
        words.pop()
    return words[-1] if words else ""


def cue_to_obj(cue: VisualCue) -> dict:
    payload = cue.payload
    if isinstance(payload, Boxes):
        return {"label": cue.label, "type": "boxes", "boxes": [b.as_list() for b in payload.boxes]}
    if isinstance(payload, Text):
        return {"label": cue.label, "type": "text", "text": payload.value}
    if isinstance(payload, CaptionText):
        return {"label": cue.label, "type": "caption", "caption": payload.value}
    return {"label": cue.label, "type": "none"}


def trace_to_obj(trace: ReasoningTrace) -> dict:
    """Plain-dict form of a trace (the JSON schema, pre-serialization)."""
    return {
        "kind": trace.kind.value,
        "understand": {
            "directives": [
                {
                    "capability": d.capability.value,
                    "targets": list(d.targets),
                    "instruction": d.instruction_text,
                }
                for d in trace.directives
            ],
            "cues": [cue_to_obj(c) for c in trace.cues],
        },
        "think": trace.think,
        "answer": trace.answer,
        "raw_text": trace.raw_text,
    }


def to_json(trace: ReasoningTrace) -> str:
    """Canonical single-line JSON for a trace; stable bytes for equal traces."""
    return json.dumps(trace_to_obj(trace), ensure_ascii=False, separators=(",", ":"))


def _expect_keys(obj: dict, path: str, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> None:
    for key in required:
        if key not in obj:
            raise SchemaViolation(f"{path}/{key}", "required")
    for key in obj:
        if key not in required and key not in optional:
            raise SchemaViolation(f"{path}/{key}", "unknown key")


def _expect_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise SchemaViolation(path, f"expected string, got {type(value).__name__}")
    return value


def box_from_obj(value, path: str) -> BoundingBox:
    if not (isinstance(value, list) and len(value) == 4):
        raise SchemaViolation(path, "expected [x1, y1, x2, y2]")
    for v in value:
        if not isinstance(v, int) or isinstance(v, bool):
            raise SchemaViolation(path, "box coordinates must be integers")
    try:
        return BoundingBox(*value)
    except DegenerateBox as exc:
        raise SchemaViolation(path, str(exc)) from None


def cue_from_obj(obj, path: str) -> VisualCue:
    if not isinstance(obj, dict):
        raise SchemaViolation(path, "expected object")
    kind = obj.get("type")
    if kind == "boxes":
        _expect_keys(obj, path, ("label", "type", "boxes"))
        boxes = obj["boxes"]
        if not isinstance(boxes, list) or not boxes:
            raise SchemaViolation(f"{path}/boxes", "expected non-empty array")
        payload: object = Boxes(tuple(box_from_obj(b, f"{path}/boxes/{i}") for i, b in enumerate(boxes)))
    elif kind == "text":
        _expect_keys(obj, path, ("label", "type", "text"))
        payload = Text(_expect_str(obj["text"], f"{path}/text"))
    elif kind == "caption":
        _expect_keys(obj, path, ("label", "type", "caption"))
        payload = CaptionText(_expect_str(obj["caption"], f"{path}/caption"))
    elif kind == "none":
        _expect_keys(obj, path, ("label", "type"))
        payload = NoEvidence()
    else:
        raise SchemaViolation(f"{path}/type", f"unknown payload type {kind!r}")
    return VisualCue(_expect_str(obj["label"], f"{path}/label"), payload)


def trace_from_obj(obj, path: str = "") -> ReasoningTrace:
    """Validate a plain dict against the trace schema and build the trace."""
    if not isinstance(obj, dict):
        raise SchemaViolation(path or "/", "expected object")
    _expect_keys(obj, path, ("kind", "understand", "think", "answer", "raw_text"))
    kind_text = _expect_str(obj["kind"], f"{path}/kind")
    try:
        kind = TraceKind(kind_text)
    except ValueError:
        raise SchemaViolation(f"{path}/kind", f"unknown kind {kind_text!r}") from None

    understand = obj["understand"]
    if not isinstance(understand, dict):
        raise SchemaViolation(f"{path}/understand", "expected object")
    _expect_keys(understand, f"{path}/understand", ("directives", "cues"))
    if not isinstance(understand["directives"], list) or not isinstance(understand["cues"], list):
        raise SchemaViolation(f"{path}/understand", "directives and cues must be arrays")

    directives = []
    for i, d in enumerate(understand["directives"]):
        dpath = f"{path}/understand/directives/{i}"
        if not isinstance(d, dict):
            raise SchemaViolation(dpath, "expected object")
        _expect_keys(d, dpath, ("capability", "targets", "instruction"))
        try:
            capability = Capability(_expect_str(d["capability"], f"{dpath}/capability"))
        except ValueError:
            raise SchemaViolation(f"{dpath}/capability", f"unknown capability {d['capability']!r}") from None
        targets = d["targets"]
        if not isinstance(targets, list):
            raise SchemaViolation(f"{dpath}/targets", "expected array")
        directives.append(
            UnderstandDirective(
                capability,
                tuple(_expect_str(t, f"{dpath}/targets/{j}") for j, t in enumerate(targets)),
                _expect_str(d["instruction"], f"{dpath}/instruction"),
            )
        )

    cues = tuple(
        cue_from_obj(c, f"{path}/understand/cues/{i}") for i, c in enumerate(understand["cues"])
    )
    return ReasoningTrace(
        kind=kind,
        directives=tuple(directives),
        cues=cues,
        think=_expect_str(obj["think"], f"{path}/think"),
        answer=_expect_str(obj["answer"], f"{path}/answer"),
        raw_text=_expect_str(obj["raw_text"], f"{path}/raw_text"),
    )


def from_json(text: str) -> ReasoningTrace:
    """Inverse of to_json; unknown keys and type mismatches raise SchemaViolation."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("/", f"not valid JSON: {exc}") from None
    return trace_from_obj(obj)
