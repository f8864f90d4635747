"""Value types for understand-think-answer reasoning traces.

Every other module consumes these types. All of them are immutable
dataclasses, safe to share between threads without synchronization.
Coordinates are absolute integer pixels in source-image space,
``[x1, y1, x2, y2]`` with a top-left origin.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

# Default segment markers for the flat text form. trace_grammar builds its
# default config from these; validate_trace uses them to check raw_text
# ordering when a trace carries its rendered form.
UNDERSTAND_MARKER = "UNDERSTAND:"
THINK_MARKER = "THINK:"
ANSWER_MARKER = "ANSWER:"


class DegenerateBox(ValueError):
    """Raised when an operation would produce a box with zero width or height."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, exclusive of (x2, y2).

    Width and height must be >= 1. Coordinates may lie outside the image
    (e.g. before clipping); validity against an image is checked by
    validate_box / validate_trace.
    """

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise TypeError(f"box coordinate {name} must be an int, got {value!r}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise DegenerateBox(
                f"box [{self.x1}, {self.y1}, {self.x2}, {self.y2}] has non-positive extent"
            )

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class ImageRef:
    """Reference to an image by id, with its pixel dimensions and location."""

    id: str
    width: int
    height: int
    uri: str = ""

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image {self.id!r} has non-positive dimensions")


class Capability(Enum):
    """Intrinsic skills the model can be directed to use while understanding."""

    CAPTION = "caption"
    GROUNDED_CAPTION = "grounded_caption"
    VISUAL_GROUNDING = "visual_grounding"
    TEXT_RECOGNITION = "text_recognition"
    REC = "rec"
    REG = "reg"
    GLOBAL_UNDERSTANDING = "global_understanding"

    @property
    def display(self) -> str:
        return _CAPABILITY_DISPLAY[self]

    @classmethod
    def from_text(cls, text: str) -> tuple["Capability", bool]:
        """Map free text to a capability, case-insensitively.

        Returns (capability, warned). Unknown strings map to
        GLOBAL_UNDERSTANDING with warned=True instead of failing, since
        expert output is not under our control.
        """
        key = "".join(ch for ch in text.lower() if ch.isalnum())
        match = _CAPABILITY_LOOKUP.get(key)
        if match is not None:
            return match, False
        return cls.GLOBAL_UNDERSTANDING, True


_CAPABILITY_DISPLAY = {
    Capability.CAPTION: "Caption",
    Capability.GROUNDED_CAPTION: "Grounded Caption",
    Capability.VISUAL_GROUNDING: "Visual Grounding",
    Capability.TEXT_RECOGNITION: "Text Recognition",
    Capability.REC: "REC",
    Capability.REG: "REG",
    Capability.GLOBAL_UNDERSTANDING: "Global Understanding",
}

_CAPABILITY_LOOKUP = {
    "".join(ch for ch in c.value if ch.isalnum()): c for c in Capability
}
_CAPABILITY_LOOKUP.update(
    {"".join(ch for ch in d.lower() if ch.isalnum()): c for c, d in _CAPABILITY_DISPLAY.items()}
)

# Capabilities that need no explicit targets: they read the whole image.
UNTARGETED_CAPABILITIES = frozenset({Capability.CAPTION, Capability.GLOBAL_UNDERSTANDING})


@dataclass(frozen=True)
class UnderstandDirective:
    """One planned information-gathering step: which skill, aimed at what."""

    capability: Capability
    targets: tuple[str, ...]
    instruction_text: str

    def __post_init__(self) -> None:
        if isinstance(self.targets, list):
            object.__setattr__(self, "targets", tuple(self.targets))


@dataclass(frozen=True)
class Boxes:
    """Grounded evidence: one or more boxes for the cue's label."""

    boxes: tuple[BoundingBox, ...]

    def __post_init__(self) -> None:
        if isinstance(self.boxes, list):
            object.__setattr__(self, "boxes", tuple(self.boxes))


@dataclass(frozen=True)
class Text:
    """Recognized text evidence (OCR)."""

    value: str


@dataclass(frozen=True)
class CaptionText:
    """Free-form descriptive evidence."""

    value: str


@dataclass(frozen=True)
class NoEvidence:
    """Explicit null: the sought entity was looked for and not found.

    Emitting this instead of dropping the cue (or inventing a vague one) is
    deliberate; downstream reasoning treats it as a checked negative.
    """


Payload = Boxes | Text | CaptionText | NoEvidence

NO_EVIDENCE = NoEvidence()


@dataclass(frozen=True)
class VisualCue:
    """One gathered piece of evidence, keyed by what was sought."""

    label: str
    payload: Payload


class TraceKind(Enum):
    SHORTCUT = "shortcut"
    UNIFIED = "unified"


@dataclass(frozen=True)
class ReasoningTrace:
    """The understand-think-answer sequence, structured plus flat.

    ``directives`` and ``cues`` make up the understand part, ``think`` and
    ``answer`` the rest; ``raw_text`` is the flat generated sequence (may be
    empty for traces that have not been rendered yet). Shortcut traces carry
    only an answer; unified traces have a non-empty think segment.
    """

    kind: TraceKind
    directives: tuple[UnderstandDirective, ...]
    cues: tuple[VisualCue, ...]
    think: str
    answer: str
    raw_text: str = ""

    def __post_init__(self) -> None:
        if isinstance(self.directives, list):
            object.__setattr__(self, "directives", tuple(self.directives))
        if isinstance(self.cues, list):
            object.__setattr__(self, "cues", tuple(self.cues))


@dataclass(frozen=True)
class Violation:
    """One violated invariant, with a machine-readable code."""

    code: str
    message: str
    path: str = ""


ValidationReport = list[Violation]


def validate_box(box: BoundingBox, image: ImageRef, path: str = "") -> ValidationReport:
    """Check a box against its owning image; degeneracy is caught at construction."""
    report: ValidationReport = []
    if box.x1 < 0 or box.y1 < 0 or box.x2 > image.width or box.y2 > image.height:
        report.append(
            Violation(
                "BBOX_OUT_OF_RANGE",
                f"box {box.as_list()} exceeds image bounds {image.width}x{image.height}",
                path,
            )
        )
    return report


def _marker_positions(raw_text: str, markers: tuple[str, str, str]) -> list[int] | None:
    """Offsets of the three markers at line starts, or None if any is absent/duplicated."""
    positions = []
    for marker in markers:
        found = []
        start = 0
        while True:
            idx = raw_text.find(marker, start)
            if idx < 0:
                break
            if idx == 0 or raw_text[idx - 1] == "\n":
                found.append(idx)
            start = idx + len(marker)
        if len(found) != 1:
            return None
        positions.append(found[0])
    return positions


def validate_trace(
    trace: ReasoningTrace,
    image: ImageRef,
    markers: tuple[str, str, str] = (UNDERSTAND_MARKER, THINK_MARKER, ANSWER_MARKER),
) -> ValidationReport:
    """Collect every violated trace invariant. Empty report means valid.

    Pure and idempotent: violations are data, not failures. Codes are stable
    so callers (the review service, tests) can match on them.
    """
    report: ValidationReport = []

    if not trace.answer.strip():
        report.append(Violation("EMPTY_ANSWER", "answer must be non-empty", "/answer"))

    if trace.kind is TraceKind.SHORTCUT:
        if trace.directives or trace.cues:
            report.append(
                Violation(
                    "SHORTCUT_HAS_UNDERSTAND",
                    "shortcut traces must not carry directives or cues",
                    "/understand",
                )
            )
        if trace.think.strip():
            report.append(
                Violation("SHORTCUT_HAS_THINK", "shortcut traces must not carry a think segment", "/think")
            )
    else:
        if not trace.think.strip():
            report.append(
                Violation("EMPTY_THINK", "unified traces must carry a non-empty think segment", "/think")
            )

    cue_labels = {cue.label for cue in trace.cues}
    for i, directive in enumerate(trace.directives):
        path = f"/understand/directives/{i}"
        if not directive.instruction_text.strip():
            report.append(Violation("EMPTY_INSTRUCTION", "directive instruction must be non-empty", path))
        if not directive.targets and directive.capability not in UNTARGETED_CAPABILITIES:
            report.append(
                Violation(
                    "MISSING_TARGETS",
                    f"{directive.capability.display} directive needs at least one target",
                    path,
                )
            )
        for target in directive.targets:
            if target not in cue_labels:
                report.append(
                    Violation(
                        "MISSING_CUE_FOR_TARGET",
                        f"target {target!r} has no cue (absent entities still need an explicit null cue)",
                        path,
                    )
                )

    for i, cue in enumerate(trace.cues):
        path = f"/understand/cues/{i}"
        if not cue.label.strip():
            report.append(Violation("EMPTY_LABEL", "cue label must identify what was sought", path))
        if isinstance(cue.payload, Boxes):
            if not cue.payload.boxes:
                report.append(Violation("EMPTY_BOXES", "boxes payload must hold at least one box", path))
            for j, box in enumerate(cue.payload.boxes):
                report.extend(validate_box(box, image, f"{path}/boxes/{j}"))

    if trace.raw_text:
        positions = _marker_positions(trace.raw_text, markers)
        if positions is None:
            report.append(
                Violation(
                    "RAW_TEXT_MARKERS",
                    "raw_text must contain each segment marker exactly once at a line start",
                    "/raw_text",
                )
            )
        else:
            if not positions[0] < positions[1] < positions[2]:
                report.append(
                    Violation(
                        "RAW_TEXT_ORDER",
                        "raw_text segments must appear in understand, think, answer order",
                        "/raw_text",
                    )
                )
            else:
                u, t, a = positions

                def segment(start: int, marker: str, end: int) -> str:
                    lo = start + len(marker)
                    if lo < len(trace.raw_text) and trace.raw_text[lo] == "\n":
                        lo += 1
                    block = trace.raw_text[lo:end]
                    return block[:-1] if block.endswith("\n") else block

                think_segment = segment(t, markers[1], a)
                answer_segment = segment(a, markers[2], len(trace.raw_text))
                if think_segment != trace.think or answer_segment != trace.answer:
                    report.append(
                        Violation(
                            "RAW_TEXT_MISMATCH",
                            "raw_text think/answer segments disagree with structured fields",
                            "/raw_text",
                        )
                    )

    return report


def clip_box(box: BoundingBox, image: ImageRef) -> BoundingBox:
    """Intersect a box with the image rectangle.

    Raises DegenerateBox when the intersection has zero width or height
    (box fully outside, or touching only at an edge).
    """
    x1 = max(box.x1, 0)
    y1 = max(box.y1, 0)
    x2 = min(box.x2, image.width)
    y2 = min(box.y2, image.height)
    if x2 - x1 < 1 or y2 - y1 < 1:
        raise DegenerateBox(
            f"box {box.as_list()} does not intersect image {image.width}x{image.height}"
        )
    return BoundingBox(x1, y1, x2, y2)
