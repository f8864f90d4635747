"""Raw-data selection for reasoning-oriented QA pairs.

Keeps a record when its answer is a bare yes/no or its question carries a
relation/attribute keyword from the lexicon, then drops exact duplicates
and questions too short to need reasoning. Single pass, order preserving,
fully deterministic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from .trace_model import ImageRef
from .trace_grammar import SchemaViolation
from .geometric_reasoner import image_from_obj

_WORD_RE = re.compile(r"[a-z0-9']+")
_TRAILING_PUNCT = ".,!?;: "


class KeywordKind(Enum):
    RELATION = "relation"
    ATTRIBUTE = "attribute"


class FilterReason(Enum):
    # keep reasons
    YES_NO = "yes_no"
    RELATION_KEYWORD = "relation_keyword"
    ATTRIBUTE_KEYWORD = "attribute_keyword"
    # drop reasons
    NO_CRITERION = "no_criterion"
    DUPLICATE = "duplicate"
    TOO_SIMPLE = "too_simple"


KEEP_REASONS = frozenset(
    {FilterReason.YES_NO, FilterReason.RELATION_KEYWORD, FilterReason.ATTRIBUTE_KEYWORD}
)


@dataclass(frozen=True)
class KeywordLexicon:
    """Relation and attribute keywords, lowercase; multiword entries allowed.

    The shipped default lexicon is a curated stand-in assembled from common
    GQA/VAW-style relation and attribute vocabulary; swap in your own file
    for other domains.
    """

    relations: frozenset[str]
    attributes: frozenset[str]
    source_tag: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "relations", frozenset(w.lower() for w in self.relations))
        object.__setattr__(self, "attributes", frozenset(w.lower() for w in self.attributes))
        if not self.relations or not self.attributes:
            raise ValueError("lexicon needs at least one relation and one attribute keyword")

    def overlap_warnings(self) -> list[str]:
        return [f"keyword {w!r} is both a relation and an attribute" for w in sorted(self.relations & self.attributes)]


def load_lexicon(path: str | Path, source_tag: str = "") -> KeywordLexicon:
    """Parse a lexicon file: "[relations]" / "[attributes]" sections, one keyword per line."""
    relations: set[str] = set()
    attributes: set[str] = set()
    section: set[str] | None = None
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        word = line.strip()
        if not word or word.startswith("#"):
            continue
        if word == "[relations]":
            section = relations
        elif word == "[attributes]":
            section = attributes
        elif word.startswith("["):
            raise ValueError(f"{path}:{line_no}: unknown section {word!r}")
        elif section is None:
            raise ValueError(f"{path}:{line_no}: keyword before any section header")
        else:
            section.add(word.lower())
    return KeywordLexicon(frozenset(relations), frozenset(attributes), source_tag or str(path))


def default_lexicon() -> KeywordLexicon:
    text = resources.files("griffonforge").joinpath("data/default_lexicon.txt").read_text("utf-8")
    relations: set[str] = set()
    attributes: set[str] = set()
    section = None
    for line in text.splitlines():
        word = line.strip()
        if not word or word.startswith("#"):
            continue
        if word == "[relations]":
            section = relations
        elif word == "[attributes]":
            section = attributes
        elif section is not None:
            section.add(word.lower())
    return KeywordLexicon(frozenset(relations), frozenset(attributes), "builtin-default")


@dataclass(frozen=True)
class RawQA:
    """One source QA pair flowing into the pipeline."""

    id: str
    image: ImageRef
    question: str
    answer: str
    source_dataset: str = ""

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.answer.strip():
            raise ValueError(f"record {self.id!r}: question and answer must be non-empty")


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reasons: tuple[FilterReason, ...]
    matched_keywords: tuple[str, ...] = ()

    def to_obj(self) -> dict:
        return {
            "keep": self.keep,
            "reasons": [r.value for r in self.reasons],
            "matched_keywords": list(self.matched_keywords),
        }


@dataclass
class FilterOptions:
    min_tokens: int = 4


@dataclass
class FilterStats:
    total: int = 0
    kept: int = 0
    dropped: int = 0
    by_reason: dict[str, int] = field(default_factory=dict)

    def record(self, decision: FilterDecision) -> None:
        self.total += 1
        if decision.keep:
            self.kept += 1
        else:
            self.dropped += 1
        for reason in decision.reasons:
            self.by_reason[reason.value] = self.by_reason.get(reason.value, 0) + 1

    def to_json(self) -> str:
        obj = {
            "total": self.total,
            "kept": self.kept,
            "dropped": self.dropped,
            "by_reason": dict(sorted(self.by_reason.items())),
        }
        return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def normalize_answer_text(answer: str) -> str:
    return answer.lower().strip().rstrip(_TRAILING_PUNCT)


def is_yes_no(qa: RawQA) -> bool:
    """True iff the normalized answer is exactly "yes" or "no".

    Exact match, not substring: "yesterday" and "no, it is not" do not count.
    """
    return normalize_answer_text(qa.answer) in ("yes", "no")


def _question_tokens(question: str) -> list[str]:
    return _WORD_RE.findall(question.lower())


def match_keywords(question: str, lexicon: KeywordLexicon) -> list[tuple[str, KeywordKind]]:
    """Whole-word keyword hits in question order; multiword entries match
    as contiguous token runs. One hit per occurrence."""
    tokens = _question_tokens(question)
    entries = [(kw.split(), kw, KeywordKind.RELATION) for kw in lexicon.relations]
    entries += [(kw.split(), kw, KeywordKind.ATTRIBUTE) for kw in lexicon.attributes]
    hits: list[tuple[int, str, KeywordKind]] = []
    for kw_tokens, keyword, kind in entries:
        width = len(kw_tokens)
        if width == 0:
            continue
        for start in range(len(tokens) - width + 1):
            if tokens[start : start + width] == kw_tokens:
                hits.append((start, keyword, kind))
    hits.sort(key=lambda h: (h[0], h[1]))
    return [(keyword, kind) for _, keyword, kind in hits]


def decide(
    qa: RawQA,
    lexicon: KeywordLexicon,
    opts: FilterOptions,
    seen: set[tuple[str, str]],
) -> FilterDecision:
    """Decision for one record given the duplicates seen so far (updated in place)."""
    keep_reasons: list[FilterReason] = []
    matched = match_keywords(qa.question, lexicon)
    if is_yes_no(qa):
        keep_reasons.append(FilterReason.YES_NO)
    if any(kind is KeywordKind.RELATION for _, kind in matched):
        keep_reasons.append(FilterReason.RELATION_KEYWORD)
    if any(kind is KeywordKind.ATTRIBUTE for _, kind in matched):
        keep_reasons.append(FilterReason.ATTRIBUTE_KEYWORD)

    keywords = tuple(dict.fromkeys(kw for kw, _ in matched))
    dup_key = (qa.image.id, " ".join(qa.question.lower().split()))
    duplicate = dup_key in seen
    seen.add(dup_key)

    if not keep_reasons:
        return FilterDecision(False, (FilterReason.NO_CRITERION,), keywords)
    if duplicate:
        return FilterDecision(False, (FilterReason.DUPLICATE,), keywords)
    if len(_question_tokens(qa.question)) < opts.min_tokens:
        return FilterDecision(False, (FilterReason.TOO_SIMPLE,), keywords)
    return FilterDecision(True, tuple(keep_reasons), keywords)


def filter_dataset(
    qas: Iterable[RawQA],
    lexicon: KeywordLexicon,
    opts: FilterOptions | None = None,
) -> Iterator[tuple[RawQA, FilterDecision]]:
    """Stream decisions in input order; pair with FilterStats.record to tally."""
    opts = opts or FilterOptions()
    seen: set[tuple[str, str]] = set()
    for qa in qas:
        yield qa, decide(qa, lexicon, opts, seen)


def dedup_against(
    qas: Iterable[RawQA], reference_ids: Iterable[tuple[str, str]]
) -> tuple[list[RawQA], int]:
    """Drop records whose (source_dataset, id) appears in the reference set."""
    reference = set(reference_ids)
    kept = []
    removed = 0
    for qa in qas:
        if (qa.source_dataset, qa.id) in reference:
            removed += 1
        else:
            kept.append(qa)
    return kept, removed


def qa_to_obj(qa: RawQA) -> dict:
    return {
        "id": qa.id,
        "image": {
            "id": qa.image.id,
            "width": qa.image.width,
            "height": qa.image.height,
            "uri": qa.image.uri,
        },
        "question": qa.question,
        "answer": qa.answer,
        "source_dataset": qa.source_dataset,
    }


def qa_from_obj(obj, path: str = "") -> RawQA:
    if not isinstance(obj, dict):
        raise SchemaViolation(path or "/", "expected object")
    for key in ("id", "image", "question", "answer"):
        if key not in obj:
            raise SchemaViolation(f"{path}/{key}", "required")
    try:
        return RawQA(
            id=str(obj["id"]),
            image=image_from_obj(obj["image"], f"{path}/image"),
            question=str(obj["question"]),
            answer=str(obj["answer"]),
            source_dataset=str(obj.get("source_dataset", "")),
        )
    except ValueError as exc:
        raise SchemaViolation(path or "/", str(exc)) from None


def read_qa_jsonl(lines: Iterable[str]) -> Iterator[RawQA]:
    """Parse RawQA records from JSONL lines; errors carry the line number."""
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"line {line_no}", f"not valid JSON: {exc}") from None
        try:
            yield qa_from_obj(obj, f"line {line_no}")
        except SchemaViolation:
            raise
