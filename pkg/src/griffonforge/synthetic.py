"""Seeded generators for scenes, traces, questions and curation corpora.

Everything here is driven by an explicit random.Random instance so demo
scripts and the test suite produce reproducible data. The question forms
emitted here are the canonical ones the geometric reasoner can parse.
"""

from __future__ import annotations

import random
import string

from .trace_model import (
    BoundingBox,
    Boxes,
    Capability,
    CaptionText,
    ImageRef,
    NoEvidence,
    ReasoningTrace,
    Text,
    TraceKind,
    UnderstandDirective,
    VisualCue,
)
from .trace_grammar import GrammarConfig, DEFAULT_GRAMMAR, with_raw_text

# Entities pluralize with a plain trailing "s" so the count-query singular
# fallback (strip one "s") inverts exactly.
ENTITY_WORDS = [
    "balloon", "dog", "cat", "cup", "plate", "burger", "tray", "sign",
    "car", "bird", "chair", "table", "lamp", "book", "bottle", "kite",
]
ATTRIBUTE_WORDS = [
    "red", "white", "blue", "green", "yellow", "black",
    "plastic", "wooden", "metal", "small", "large",
]

RELATION_PHRASES = {
    "left": "to the left of",
    "right": "to the right of",
    "above": "above",
    "below": "below",
}


def random_box(rng: random.Random, width: int, height: int) -> BoundingBox:
    x1 = rng.randrange(0, width - 1)
    y1 = rng.randrange(0, height - 1)
    x2 = rng.randrange(x1 + 1, min(width, x1 + max(2, width // 3)) + 1)
    y2 = rng.randrange(y1 + 1, min(height, y1 + max(2, height // 3)) + 1)
    return BoundingBox(x1, y1, min(x2, width), min(y2, height))


def random_image(rng: random.Random, image_id: str, max_side: int = 1022) -> ImageRef:
    width = rng.randrange(32, max_side + 1)
    height = rng.randrange(32, max_side + 1)
    return ImageRef(id=image_id, width=width, height=height, uri=f"file:///img/{image_id}.jpg")


def random_scene_objects(
    rng: random.Random, image: ImageRef, max_objects: int = 10
) -> list[tuple[str, list[str], BoundingBox]]:
    objects = []
    for _ in range(rng.randrange(0, max_objects + 1)):
        label = rng.choice(ENTITY_WORDS)
        attributes = sorted(rng.sample(ATTRIBUTE_WORDS, rng.randrange(0, 3)))
        objects.append((label, attributes, random_box(rng, image.width, image.height)))
    return objects


def _word(rng: random.Random, length: int = 6) -> str:
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(length))


def random_trace(
    rng: random.Random,
    image: ImageRef | None = None,
    cfg: GrammarConfig = DEFAULT_GRAMMAR,
) -> ReasoningTrace:
    """A random structurally valid trace with raw_text attached."""
    if image is None:
        image = ImageRef("synthetic", 640, 480)
    if rng.random() < 0.15:
        return with_raw_text(
            ReasoningTrace(TraceKind.SHORTCUT, (), (), "", rng.choice(["yes", "no", "2", "a cat"])),
            cfg,
        )

    cues: list[VisualCue] = []
    labels: list[str] = []
    for _ in range(rng.randrange(1, 5)):
        label_words = [rng.choice(ATTRIBUTE_WORDS)] if rng.random() < 0.4 else []
        label_words.append(rng.choice(ENTITY_WORDS) if rng.random() < 0.8 else _word(rng))
        label = " ".join(label_words)
        if label in labels:
            continue
        labels.append(label)
        roll = rng.random()
        if roll < 0.55:
            boxes = tuple(
                random_box(rng, image.width, image.height) for _ in range(rng.randrange(1, 4))
            )
            cues.append(VisualCue(label, Boxes(boxes)))
        elif roll < 0.7:
            cues.append(VisualCue(label, Text(_word(rng, 10))))
        elif roll < 0.85:
            cues.append(VisualCue(label, CaptionText(f"a {_word(rng)} near a {_word(rng)}")))
        else:
            cues.append(VisualCue(label, NoEvidence()))

    directives = []
    for _ in range(rng.randrange(1, 3)):
        capability = rng.choice(list(Capability))
        if capability in (Capability.CAPTION, Capability.GLOBAL_UNDERSTANDING) and rng.random() < 0.5:
            targets: tuple[str, ...] = ()
        else:
            targets = tuple(rng.sample(labels, rng.randrange(1, len(labels) + 1)))
        directives.append(
            UnderstandDirective(
                capability,
                targets,
                f"Use {capability.display} to examine {_word(rng)}.",
            )
        )

    think_lines = [
        f"The {labels[0]} is the key evidence; comparing coordinates settles the question."
    ]
    if rng.random() < 0.4:
        think_lines.append(f"Also weighing the {_word(rng)} against the {_word(rng)}.")
    trace = ReasoningTrace(
        kind=TraceKind.UNIFIED,
        directives=tuple(directives),
        cues=tuple(cues),
        think="\n".join(think_lines),
        answer=rng.choice(["yes", "no", "0", "1", "3", "on the table", "a red balloon"]),
    )
    return with_raw_text(trace, cfg)


def random_scene(rng: random.Random, image_id: str, max_objects: int = 10, max_side: int = 1022):
    from .geometric_reasoner import SceneGraph, SceneObject

    image = random_image(rng, image_id, max_side)
    objects = tuple(
        SceneObject(label, tuple(attributes), box)
        for label, attributes, box in random_scene_objects(rng, image, max_objects)
    )
    return SceneGraph(image=image, objects=objects)


def random_entity_query(rng: random.Random, scene, prefer_present: float = 0.7) -> str:
    """An entity phrase, usually naming something actually in the scene."""
    if scene.objects and rng.random() < prefer_present:
        obj = rng.choice(scene.objects)
        if obj.attributes and rng.random() < 0.5:
            return f"{rng.choice(obj.attributes)} {obj.label}"
        return obj.label
    entity = rng.choice(ENTITY_WORDS)
    if rng.random() < 0.3:
        return f"{rng.choice(ATTRIBUTE_WORDS)} {entity}"
    return entity


_SPATIAL_QUESTION_PHRASES = [
    "to the left of", "to the left of", "to the right of", "to the right of",
    "above", "above", "below", "below", "next to", "inside",
]


def random_question(rng: random.Random, scene) -> tuple[str, str]:
    """(question, question_type) in the canonical forms the oracle parses."""
    question_type = rng.choice(["spatial", "count", "existence"])
    if question_type == "spatial":
        a = random_entity_query(rng, scene)
        b = random_entity_query(rng, scene)
        for _ in range(10):
            if b != a:
                break
            b = random_entity_query(rng, scene, prefer_present=0.3)
        phrase = rng.choice(_SPATIAL_QUESTION_PHRASES)
        return f"Is the {a} {phrase} the {b}?", question_type
    if question_type == "count":
        query = random_entity_query(rng, scene)
        if rng.random() < 0.5:
            query += "s"
        return f"How many {query} are there?", question_type
    query = random_entity_query(rng, scene, prefer_present=0.5)
    return f"Is there a {query}?", question_type


def random_benchmark_case(rng: random.Random, case_id: str, max_objects: int = 10, max_side: int = 1022):
    """An eval case whose gold answer comes from the geometric oracle."""
    from types import SimpleNamespace
    from . import geometric_reasoner as geometry
    from .eval_harness import EvalCase

    scene = random_scene(rng, f"img-{case_id}", max_objects, max_side)
    question, question_type = random_question(rng, scene)
    gold, _ = geometry.answer(SimpleNamespace(question=question, question_type=question_type), scene)
    return EvalCase(
        id=case_id,
        image=scene.image,
        question=question,
        question_type=question_type,
        gold_answer=gold,
        scene=scene,
    )


def planted_corpus(rng: random.Random, counts: dict[str, int]):
    """A filter-test corpus with exact per-category ground truth.

    ``counts`` maps category -> how many records to plant, categories being
    yes_no, relation_keyword, attribute_keyword, duplicate, too_simple and
    no_criterion. Questions are built from vocabulary disjoint from the
    default lexicon except for the one planted keyword, so each record
    triggers exactly its category. Duplicates clone earlier keyword records
    under fresh ids. Returns (records, expected_by_reason) where records are
    shuffled deterministically.
    """
    from .curation_filters import RawQA
    from .trace_model import ImageRef

    relation_templates = [
        "Is the cup to the {kw} of the plate?",
        "Does the mug sit {kw} the saucer here?",
    ]
    serial = 0

    def image(tag: str) -> ImageRef:
        return ImageRef(f"corpus-{tag}", 320, 240, f"file:///corpus/{tag}.jpg")

    records: list[RawQA] = []
    duplicatable: list[RawQA] = []

    for _ in range(counts.get("yes_no", 0)):
        serial += 1
        question = f"Does the figure resemble item number {serial} overall?"
        records.append(RawQA(f"yn-{serial}", image(f"yn-{serial}"), question, rng.choice(["Yes.", "no", "NO!"])))
    for _ in range(counts.get("relation_keyword", 0)):
        serial += 1
        keyword = rng.choice(["left", "right"])
        question = relation_templates[0].format(kw=keyword) + f" (case {serial})"
        record = RawQA(f"rel-{serial}", image(f"rel-{serial}"), question, "the cup, probably")
        records.append(record)
        duplicatable.append(record)
    for _ in range(counts.get("attribute_keyword", 0)):
        serial += 1
        keyword = rng.choice(["red", "plastic", "wooden"])
        question = f"What makes this {keyword} thing number {serial} special?"
        record = RawQA(f"attr-{serial}", image(f"attr-{serial}"), question, "its finish")
        records.append(record)
        duplicatable.append(record)
    for _ in range(counts.get("too_simple", 0)):
        serial += 1
        records.append(RawQA(f"simple-{serial}", image(f"simple-{serial}"), f"Red thing {serial}?", "it sparkles"))
    for _ in range(counts.get("no_criterion", 0)):
        serial += 1
        question = f"What shape emerges when combining pieces {serial} together?"
        records.append(RawQA(f"none-{serial}", image(f"none-{serial}"), question, "a hexagon"))

    duplicates = []
    for _ in range(counts.get("duplicate", 0)):
        serial += 1
        source = rng.choice(duplicatable)
        duplicates.append(
            RawQA(f"dup-{serial}", source.image, source.question, source.answer, source.source_dataset)
        )

    rng.shuffle(records)
    # Duplicates must stream after their originals to be flagged as such.
    records.extend(duplicates)

    expected = {
        category: counts.get(category, 0)
        for category in (
            "yes_no",
            "relation_keyword",
            "attribute_keyword",
            "too_simple",
            "duplicate",
            "no_criterion",
        )
    }
    return records, expected


_MUTATIONS = ("delete", "insert", "swap", "truncate", "dup_marker", "garble_box")


def mutate_text(rng: random.Random, text: str) -> str:
    """One random structural mutation, for fuzzing the parser."""
    if not text:
        return _word(rng)
    kind = rng.choice(_MUTATIONS)
    pos = rng.randrange(len(text))
    if kind == "delete":
        span = rng.randrange(1, min(20, len(text)) + 1)
        return text[:pos] + text[pos + span :]
    if kind == "insert":
        return text[:pos] + _word(rng, rng.randrange(1, 8)) + text[pos:]
    if kind == "swap":
        other = rng.randrange(len(text))
        lo, hi = min(pos, other), max(pos, other)
        return text[:lo] + text[hi:] + text[lo:hi]
    if kind == "truncate":
        return text[:pos]
    if kind == "dup_marker":
        marker = rng.choice(["UNDERSTAND:", "THINK:", "ANSWER:"])
        return text[:pos] + "\n" + marker + "\n" + text[pos:]
    digits = "".join(rng.choice("0123456789, -") for _ in range(rng.randrange(1, 12)))
    return text[:pos] + "[" + digits + "]" + text[pos:]


def random_bytes_text(rng: random.Random, max_len: int = 400) -> str:
    n = rng.randrange(0, max_len)
    return "".join(chr(rng.randrange(1, 0x300)) for _ in range(n))
