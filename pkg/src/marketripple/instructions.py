"""Question/answer pairs generated from graph snapshots.

Every edge yields one question from each of three classes: entity retrieval,
factual judgment, and factual questions about relationship details. Answers
come only from the snapshot, so each pair can be re-derived and verified.
A capacity-bounded buffer keeps the highest-impact pairs across periods.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .errors import BadConfig, DataError
from .graph import FirmId, GraphSnapshot, RelationKind


class QuestionClass(Enum):
    RETRIEVAL = "retrieval"
    FACTUAL_JUDGMENT = "factual_judgment"
    FACTUAL_QUESTION = "factual_question"


@dataclass(frozen=True)
class InstructionPair:
    question: str
    answer: str
    klass: QuestionClass
    template_id: str
    source: Tuple[str, str, str, str]  # (src, relation, dst, month)


def _neighbors(s: GraphSnapshot, firm: FirmId, kind: RelationKind) -> List[FirmId]:
    out: Set[FirmId] = set()
    for (a, b) in s.raw_layer(kind):
        if a == firm:
            out.add(b)
        elif b == firm:
            out.add(a)
    return sorted(out)


def _kind_counts(s: GraphSnapshot, firm: FirmId) -> Dict[FirmId, int]:
    counts: Dict[FirmId, Set[RelationKind]] = {}
    for kind in s.kinds:
        for other in _neighbors(s, firm, kind):
            counts.setdefault(other, set()).add(kind)
    return {f: len(kinds) for f, kinds in counts.items()}


def _pair_kinds(s: GraphSnapshot, a: FirmId, b: FirmId) -> List[RelationKind]:
    kinds = []
    for kind in RelationKind:
        layer = s.raw_layer(kind)
        if (a, b) in layer or (b, a) in layer:
            kinds.append(kind)
    return kinds


def _firm_list_answer(firms: Sequence[FirmId]) -> str:
    return ", ".join(firms) if firms else "None"


def _technical_value(s: GraphSnapshot, a: FirmId, b: FirmId) -> float:
    layer = s.raw_layer(RelationKind.TECHNICAL)
    return layer.get((a, b), layer.get((b, a), 0.0))


# template id -> (class, question pattern, answer function)
# retrieval answers list firms in ticker order; numeric answers use 4 decimals
TEMPLATES: Dict[str, Tuple[QuestionClass, str, Callable]] = {
    "rq_leadership": (
        QuestionClass.RETRIEVAL,
        "Which companies have a common CEO relationship with {a}?",
        lambda s, a, b: _firm_list_answer(_neighbors(s, a, RelationKind.LEADERSHIP)),
    ),
    "rq_supply": (
        QuestionClass.RETRIEVAL,
        "Which companies have an upstream-downstream relationship with {a}?",
        lambda s, a, b: _firm_list_answer(_neighbors(s, a, RelationKind.SUPPLY_CHAIN)),
    ),
    "rq_fund": (
        QuestionClass.RETRIEVAL,
        "Which companies are held by the same fund as {a}?",
        lambda s, a, b: _firm_list_answer(_neighbors(s, a, RelationKind.FUND_HOLDING)),
    ),
    "rq_multi": (
        QuestionClass.RETRIEVAL,
        "Which companies have multiple relationships with {a}?",
        lambda s, a, b: _firm_list_answer(
            sorted(f for f, n in _kind_counts(s, a).items() if n >= 2)
        ),
    ),
    "rq_single": (
        QuestionClass.RETRIEVAL,
        "Which companies have one relationship with {a}?",
        lambda s, a, b: _firm_list_answer(
            sorted(f for f, n in _kind_counts(s, a).items() if n == 1)
        ),
    ),
    "fj_supply": (
        QuestionClass.FACTUAL_JUDGMENT,
        "Are there supply chain upstream and downstream transactions between {a} and {b}?",
        lambda s, a, b: "Yes" if RelationKind.SUPPLY_CHAIN in _pair_kinds(s, a, b) else "No",
    ),
    "fj_fund": (
        QuestionClass.FACTUAL_JUDGMENT,
        "Are the companies {a} and {b} held by the same fund?",
        lambda s, a, b: "Yes" if RelationKind.FUND_HOLDING in _pair_kinds(s, a, b) else "No",
    ),
    "fj_leadership": (
        QuestionClass.FACTUAL_JUDGMENT,
        "Do the companies {a} and {b} share board members?",
        lambda s, a, b: "Yes" if RelationKind.LEADERSHIP in _pair_kinds(s, a, b) else "No",
    ),
    "fq_relationship": (
        QuestionClass.FACTUAL_QUESTION,
        "What is the relationship between {a} and {b}?",
        lambda s, a, b: _firm_list_answer([k.value for k in _pair_kinds(s, a, b)]),
    ),
    "fq_similarity": (
        QuestionClass.FACTUAL_QUESTION,
        "What is the technical similarity between {a} and {b}?",
        lambda s, a, b: (
            f"The technical similarity between {a} and {b} is "
            f"{_technical_value(s, a, b):.4f}."
        ),
    ),
    "fq_similarity_score": (
        QuestionClass.FACTUAL_QUESTION,
        "What is the technical similarity score between {a} and {b}?",
        lambda s, a, b: f"{_technical_value(s, a, b):.4f}",
    ),
}

_RETRIEVAL_BY_KIND = {
    RelationKind.LEADERSHIP: "rq_leadership",
    RelationKind.SUPPLY_CHAIN: "rq_supply",
    RelationKind.FUND_HOLDING: "rq_fund",
}
_JUDGMENT_BY_KIND = {
    RelationKind.SUPPLY_CHAIN: "fj_supply",
    RelationKind.FUND_HOLDING: "fj_fund",
    RelationKind.LEADERSHIP: "fj_leadership",
}
_JUDGMENT_ROTATION = ("fj_supply", "fj_fund", "fj_leadership")
_TECHNICAL_FQ_ROTATION = ("fq_similarity", "fq_similarity_score")


def render(template_id: str, a: FirmId, b: FirmId) -> str:
    return TEMPLATES[template_id][1].format(a=a, b=b)


def answer_question(s: GraphSnapshot, template_id: str, a: FirmId, b: FirmId) -> str:
    """Re-derive the answer for a template from snapshot content alone."""
    if template_id not in TEMPLATES:
        raise DataError(f"unknown template {template_id}")
    return TEMPLATES[template_id][2](s, a, b)


def snapshot_edges(s: GraphSnapshot) -> List[Tuple[FirmId, RelationKind, FirmId]]:
    """Unordered (src, kind, dst) triples, canonical direction, sorted."""
    seen = set()
    for kind in s.kinds:
        for (a, b) in s.raw_layer(kind):
            key = (min(a, b), kind, max(a, b))
            seen.add(key)
    return sorted(seen, key=lambda t: (t[0], t[2], t[1].value))


def generate(
    s: GraphSnapshot,
    classes: Optional[Iterable[QuestionClass]] = None,
    seed: int = 0,
) -> List[InstructionPair]:
    """One pair per enabled class for every edge, deterministic under seed."""
    enabled = set(classes) if classes is not None else set(QuestionClass)
    if not enabled:
        raise BadConfig("at least one question class must be enabled")
    pairs: List[InstructionPair] = []
    for a, kind, b in snapshot_edges(s):
        rng = random.Random(f"{seed}|{a}|{b}|{kind.value}")
        chosen: List[str] = []
        if QuestionClass.RETRIEVAL in enabled:
            if kind in _RETRIEVAL_BY_KIND:
                chosen.append(_RETRIEVAL_BY_KIND[kind])
            else:
                multi = len(_pair_kinds(s, a, b)) >= 2
                chosen.append("rq_multi" if multi else "rq_single")
        if QuestionClass.FACTUAL_JUDGMENT in enabled:
            if kind in _JUDGMENT_BY_KIND:
                chosen.append(_JUDGMENT_BY_KIND[kind])
            else:
                chosen.append(rng.choice(_JUDGMENT_ROTATION))
        if QuestionClass.FACTUAL_QUESTION in enabled:
            if kind is RelationKind.TECHNICAL:
                chosen.append(rng.choice(_TECHNICAL_FQ_ROTATION))
            else:
                chosen.append("fq_relationship")
        for template_id in chosen:
            klass = TEMPLATES[template_id][0]
            pairs.append(
                InstructionPair(
                    question=render(template_id, a, b),
                    answer=answer_question(s, template_id, a, b),
                    klass=klass,
                    template_id=template_id,
                    source=(a, kind.value, b, s.month),
                )
            )
    return pairs


@dataclass(frozen=True)
class BufferEntry:
    pair: InstructionPair
    score: float
    seq: int


@dataclass(frozen=True)
class RotatingBuffer:
    """Top-k instruction pairs by impact score; older entries win ties."""

    capacity: int
    entries: Tuple[BufferEntry, ...] = ()
    next_seq: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise BadConfig("buffer capacity must be positive")

    def pairs(self) -> List[InstructionPair]:
        return [e.pair for e in self.entries]

    def scores(self) -> List[float]:
        return [e.score for e in self.entries]


def buffer_update(
    buf: RotatingBuffer, new: Sequence[Tuple[InstructionPair, float]]
) -> RotatingBuffer:
    """Merge new scored pairs, keep the top ``capacity`` by score.

    Sorting is stable on descending score with insertion order as the tie
    break, so an older entry outranks a newer one with the same score.
    """
    for _, score in new:
        if not (score == score and abs(score) != float("inf")):
            raise DataError(f"scores must be finite, got {score}")
    merged = list(buf.entries)
    seq = buf.next_seq
    for pair, score in new:
        merged.append(BufferEntry(pair=pair, score=float(score), seq=seq))
        seq += 1
    merged.sort(key=lambda e: (-e.score, e.seq))
    return RotatingBuffer(
        capacity=buf.capacity, entries=tuple(merged[: buf.capacity]), next_seq=seq
    )


def write_instructions_jsonl(pairs: Sequence[InstructionPair], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            src, kind, dst, month = p.source
            fh.write(
                json.dumps(
                    {
                        "question": p.question,
                        "answer": p.answer,
                        "class": p.klass.value,
                        "month": month,
                        "triple": [src, kind, dst],
                    },
                    separators=(",", ":"),
                    ensure_ascii=False,
                )
                + "\n"
            )
