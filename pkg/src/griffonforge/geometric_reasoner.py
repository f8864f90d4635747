"""Deterministic geometry over grounded cues: relations, counting, existence.

This is the desk-scale stand-in for a trained model's "think" step. Given
gold labeled boxes it answers spatial, count and existence questions and
synthesizes a full understand-think-answer trace whose think segment cites
the coordinates that decide the answer.

Relation semantics are center-point based with an epsilon tie band: ties on
both axes yield Indeterminate rather than a guess.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Union

from .trace_model import (
    BoundingBox,
    Boxes,
    Capability,
    ImageRef,
    NoEvidence,
    ReasoningTrace,
    TraceKind,
    UnderstandDirective,
    VisualCue,
)
from .trace_grammar import DEFAULT_GRAMMAR, GrammarConfig, SchemaViolation, box_from_obj, with_raw_text

NEXT_TO_DIAGONAL_FACTOR = 1.5


class DifferentImages(ValueError):
    """Boxes belong to different images; their geometry is not comparable."""


class UnsupportedQuestionType(ValueError):
    """The question cannot be answered by box geometry."""


class AmbiguousEntity(ValueError):
    """An entity query matched more than one object in strict mode."""

    def __init__(self, query: str, matches: int):
        super().__init__(f"entity query {query!r} matched {matches} objects")
        self.query = query
        self.matches = matches


@dataclass(frozen=True)
class SceneObject:
    label: str
    attributes: tuple[str, ...]
    box: BoundingBox

    def __post_init__(self) -> None:
        object.__setattr__(self, "label", " ".join(self.label.lower().split()))
        object.__setattr__(self, "attributes", tuple(a.lower() for a in self.attributes))

    @property
    def tokens(self) -> frozenset[str]:
        return frozenset(self.label.split()) | frozenset(self.attributes)


@dataclass(frozen=True)
class SceneGraph:
    """Gold labeled (optionally attributed) boxes for one image."""

    image: ImageRef
    objects: tuple[SceneObject, ...]

    def __post_init__(self) -> None:
        if isinstance(self.objects, list):
            object.__setattr__(self, "objects", tuple(self.objects))


class Relation(Enum):
    LEFT_OF = "left_of"
    RIGHT_OF = "right_of"
    ABOVE = "above"
    BELOW = "below"
    INSIDE = "inside"
    CONTAINS = "contains"
    OVERLAPPING = "overlapping"
    NEXT_TO = "next_to"
    INDETERMINATE = "indeterminate"


def _image_id(image: Union[ImageRef, str, None]) -> str | None:
    if image is None:
        return None
    return image.id if isinstance(image, ImageRef) else image


def _contains_or_equal(a: BoundingBox, b: BoundingBox) -> bool:
    return a.x1 <= b.x1 and b.x2 <= a.x2 and a.y1 <= b.y1 and b.y2 <= a.y2


def _intersection_area(a: BoundingBox, b: BoundingBox) -> int:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    return w * h if w > 0 and h > 0 else 0


def relation(
    a: BoundingBox,
    b: BoundingBox,
    eps: float = 2.0,
    a_image: Union[ImageRef, str, None] = None,
    b_image: Union[ImageRef, str, None] = None,
) -> frozenset[Relation]:
    """All relations that hold between a and b (a's position relative to b).

    Horizontal/vertical relations compare box centers with an eps tie band.
    Inside requires strict containment on every side; next-to requires zero
    overlap and center distance within 1.5x the mean box diagonal.
    Indeterminate is reported exactly when no axis relation fires.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    id_a, id_b = _image_id(a_image), _image_id(b_image)
    if id_a is not None and id_b is not None and id_a != id_b:
        raise DifferentImages(f"boxes belong to images {id_a!r} and {id_b!r}")

    ax, ay = a.center()
    bx, by = b.center()
    out = set()
    if ax + eps < bx:
        out.add(Relation.LEFT_OF)
    if bx + eps < ax:
        out.add(Relation.RIGHT_OF)
    if ay + eps < by:
        out.add(Relation.ABOVE)
    if by + eps < ay:
        out.add(Relation.BELOW)
    if not out:
        out.add(Relation.INDETERMINATE)

    if b.x1 < a.x1 and a.x2 < b.x2 and b.y1 < a.y1 and a.y2 < b.y2:
        out.add(Relation.INSIDE)
    if a.x1 < b.x1 and b.x2 < a.x2 and a.y1 < b.y1 and b.y2 < a.y2:
        out.add(Relation.CONTAINS)

    inter = _intersection_area(a, b)
    if inter > 0 and not _contains_or_equal(a, b) and not _contains_or_equal(b, a):
        out.add(Relation.OVERLAPPING)
    if inter == 0:
        diag_a = math.hypot(a.width, a.height)
        diag_b = math.hypot(b.width, b.height)
        if math.hypot(ax - bx, ay - by) <= NEXT_TO_DIAGONAL_FACTOR * (diag_a + diag_b) / 2:
            out.add(Relation.NEXT_TO)
    return frozenset(out)


def _normalize_query(query: str) -> str:
    return " ".join(query.lower().split())


def _objects_of(source: Union[SceneGraph, Iterable[VisualCue]]) -> list[SceneObject]:
    if isinstance(source, SceneGraph):
        return list(source.objects)
    objects = []
    for cue in source:
        if isinstance(cue.payload, Boxes):
            for box in cue.payload.boxes:
                objects.append(SceneObject(cue.label, (), box))
    return objects


def matching_objects(source: Union[SceneGraph, Iterable[VisualCue]], query: str) -> list[SceneObject]:
    """Objects whose label+attribute tokens cover every query token.

    A query with no exact matches is retried with a single trailing "s"
    stripped, so plural phrasings find singular labels.
    """
    objects = _objects_of(source)
    q = _normalize_query(query)

    def hits(q_text: str) -> list[SceneObject]:
        tokens = q_text.split()
        return [o for o in objects if all(t in o.tokens for t in tokens)]

    matched = hits(q)
    if not matched and q.endswith("s"):
        matched = hits(q[:-1])
    return matched


def count(source: Union[SceneGraph, Iterable[VisualCue]], entity_query: str) -> int:
    """Number of objects matching the (possibly attributed) entity query."""
    return len(matching_objects(source, entity_query))


def exists(source: Union[SceneGraph, Iterable[VisualCue]], entity_query: str) -> bool:
    return count(source, entity_query) >= 1


_RELATION_PHRASES = [
    ("to the left of", Relation.LEFT_OF),
    ("to the right of", Relation.RIGHT_OF),
    ("above", Relation.ABOVE),
    ("below", Relation.BELOW),
    ("next to", Relation.NEXT_TO),
    ("inside", Relation.INSIDE),
    ("overlapping", Relation.OVERLAPPING),
]

_PHRASE_BY_RELATION = {rel: phrase for phrase, rel in _RELATION_PHRASES}

_SPATIAL_RE = re.compile(
    r"^is the (.+?) (" + "|".join(re.escape(p) for p, _ in _RELATION_PHRASES) + r") the (.+?)\s*\?*$",
    re.IGNORECASE,
)
_COUNT_RE = re.compile(r"^how many (.+?)(?: are there)?(?: in the image)?\s*\?*$", re.IGNORECASE)
_EXISTENCE_RE = re.compile(
    r"^(?:is there a|is there an|are there any) (.+?)(?: in the image)?\s*\?*$", re.IGNORECASE
)


@dataclass(frozen=True)
class ParsedQuestion:
    """Canonical reading of a question the oracle knows how to answer."""

    question_type: str
    entities: tuple[str, ...]
    relation: Relation | None = None


def parse_question(question: str) -> ParsedQuestion:
    """Parse the canonical spatial / count / existence question forms.

    Raises UnsupportedQuestionType for anything else; attribute questions
    and free-form phrasings are out of this oracle's reach.
    """
    text = " ".join(question.strip().split())
    match = _SPATIAL_RE.match(text)
    if match:
        rel = dict(_RELATION_PHRASES)[match.group(2).lower()]
        return ParsedQuestion("spatial", (_normalize_query(match.group(1)), _normalize_query(match.group(3))), rel)
    match = _COUNT_RE.match(text)
    if match:
        return ParsedQuestion("count", (_normalize_query(match.group(1)),))
    match = _EXISTENCE_RE.match(text)
    if match:
        return ParsedQuestion("existence", (_normalize_query(match.group(1)),))
    raise UnsupportedQuestionType(f"cannot parse question {question!r}")


def _resolve_unique(scene: SceneGraph, query: str, strict: bool) -> SceneObject | None:
    matched = matching_objects(scene, query)
    if not matched:
        return None
    if len(matched) == 1:
        return matched[0]
    if strict:
        raise AmbiguousEntity(query, len(matched))
    # Largest-area match wins; scene order breaks ties deterministically.
    return max(matched, key=lambda o: o.box.area)


def _grounding_cue(label: str, objects: list[SceneObject]) -> VisualCue:
    if objects:
        return VisualCue(label, Boxes(tuple(o.box for o in objects)))
    return VisualCue(label, NoEvidence())


def _axis_think(query_rel: Relation, a_label: str, b_label: str, a: SceneObject, b: SceneObject, holds: bool) -> str:
    ax, ay = a.box.center()
    bx, by = b.box.center()
    phrase = _PHRASE_BY_RELATION[query_rel]
    if query_rel in (Relation.LEFT_OF, Relation.RIGHT_OF):
        axis, va, vb = "x", ax, bx
    else:
        axis, va, vb = "y", ay, by
    verdict = "so" if holds else "so it is not the case that"
    return (
        f"The {a_label} at {a.box.as_list()} has center {axis} = {va:.1f}; "
        f"the {b_label} at {b.box.as_list()} has center {axis} = {vb:.1f}. "
        f"Comparing the {axis}-axis coordinates, {verdict} the {a_label} is {phrase} the {b_label}."
    )


def answer(case, scene: SceneGraph, strict: bool = False, cfg: GrammarConfig = DEFAULT_GRAMMAR) -> tuple[str, ReasoningTrace]:
    """Answer an eval case from gold geometry, emitting the full trace.

    Supports spatial, count and existence questions in the canonical forms
    of parse_question. The returned trace always satisfies validate_trace
    for the scene's image.
    """
    parsed = parse_question(case.question)
    qtype = getattr(case, "question_type", parsed.question_type)
    if qtype != parsed.question_type:
        raise UnsupportedQuestionType(
            f"question parses as {parsed.question_type}, case says {qtype}"
        )

    if parsed.question_type == "spatial":
        a_query, b_query = parsed.entities
        a_matches = matching_objects(scene, a_query)
        b_matches = matching_objects(scene, b_query)
        cues = (_grounding_cue(a_query, a_matches), _grounding_cue(b_query, b_matches))
        if not a_matches or not b_matches:
            missing = a_query if not a_matches else b_query
            verdict = "no"
            think = f"No {missing} is present in the image, so the asked relation cannot hold."
        else:
            obj_a = _resolve_unique(scene, a_query, strict)
            obj_b = _resolve_unique(scene, b_query, strict)
            holds = parsed.relation in relation(obj_a.box, obj_b.box)
            verdict = "yes" if holds else "no"
            if parsed.relation in (Relation.LEFT_OF, Relation.RIGHT_OF, Relation.ABOVE, Relation.BELOW):
                think = _axis_think(parsed.relation, a_query, b_query, obj_a, obj_b, holds)
            else:
                phrase = _PHRASE_BY_RELATION[parsed.relation]
                think = (
                    f"The {a_query} at {obj_a.box.as_list()} and the {b_query} at "
                    f"{obj_b.box.as_list()} {'are' if holds else 'are not'} positioned {phrase} each other."
                )
        instruction = f"Locate the {a_query} and the {b_query} in the image."
        targets = (a_query, b_query) if a_query != b_query else (a_query,)
    elif parsed.question_type == "count":
        (query,) = parsed.entities
        matched = matching_objects(scene, query)
        cues = (_grounding_cue(query, matched),)
        verdict = str(len(matched))
        if matched:
            listed = "; ".join(str(o.box.as_list()) for o in matched)
            think = f"Each {query} is grounded separately: {listed}. That makes {len(matched)}."
        else:
            think = f"No {query} is present anywhere in the image, so the count is 0."
        instruction = f"Locate every {query} in the image."
        targets = (query,)
    else:
        (query,) = parsed.entities
        matched = matching_objects(scene, query)
        cues = (_grounding_cue(query, matched),)
        if matched:
            verdict = "yes"
            think = f"A {query} is grounded at {matched[0].box.as_list()}, so it is present."
        else:
            verdict = "no"
            think = f"Searching the image for a {query} turns up nothing, so it is absent."
        instruction = f"Check whether a {query} appears in the image."
        targets = (query,)

    directive = UnderstandDirective(Capability.VISUAL_GROUNDING, targets, instruction)
    trace = ReasoningTrace(
        kind=TraceKind.UNIFIED,
        directives=(directive,),
        cues=cues,
        think=think,
        answer=verdict,
    )
    return verdict, with_raw_text(trace, cfg)


def scene_to_obj(scene: SceneGraph) -> dict:
    return {
        "image": {
            "id": scene.image.id,
            "width": scene.image.width,
            "height": scene.image.height,
            "uri": scene.image.uri,
        },
        "objects": [
            {"label": o.label, "attributes": list(o.attributes), "box": o.box.as_list()}
            for o in scene.objects
        ],
    }


def image_from_obj(obj, path: str) -> ImageRef:
    if not isinstance(obj, dict):
        raise SchemaViolation(path, "expected object")
    for key in ("id", "width", "height"):
        if key not in obj:
            raise SchemaViolation(f"{path}/{key}", "required")
    try:
        return ImageRef(
            id=str(obj["id"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            uri=str(obj.get("uri", "")),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(path, str(exc)) from None


def scene_from_obj(obj, path: str = "/scene", image: ImageRef | None = None) -> SceneGraph:
    if not isinstance(obj, dict):
        raise SchemaViolation(path, "expected object")
    if "image" in obj:
        image = image_from_obj(obj["image"], f"{path}/image")
    if image is None:
        raise SchemaViolation(f"{path}/image", "required")
    raw_objects = obj.get("objects")
    if not isinstance(raw_objects, list):
        raise SchemaViolation(f"{path}/objects", "expected array")
    objects = []
    for i, o in enumerate(raw_objects):
        opath = f"{path}/objects/{i}"
        if not isinstance(o, dict) or "label" not in o or "box" not in o:
            raise SchemaViolation(opath, "expected object with label and box")
        attributes = o.get("attributes", [])
        if not isinstance(attributes, list):
            raise SchemaViolation(f"{opath}/attributes", "expected array")
        objects.append(
            SceneObject(str(o["label"]), tuple(str(a) for a in attributes), box_from_obj(o["box"], f"{opath}/box"))
        )
    return SceneGraph(image=image, objects=tuple(objects))


def load_scenes(path: str | Path) -> list[SceneGraph]:
    """Read scene graphs from JSONL, one scene per line."""
    scenes = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"line {line_no}", f"not valid JSON: {exc}") from None
            scenes.append(scene_from_obj(obj, f"line {line_no}"))
    return scenes


def save_scenes(scenes: Iterable[SceneGraph], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as handle:
        for scene in scenes:
            handle.write(json.dumps(scene_to_obj(scene), ensure_ascii=False, separators=(",", ":")) + "\n")
            n += 1
    return n
