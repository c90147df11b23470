"""Parsers for stage responses: bracketed IDs, the ``ANSWER: [...]`` block,
plan/rank structures and majority voting."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import FrozenSet, List

from .errors import ArityViolation, MissingAnswerBlock, OutOfRangeId, ParseError

STAGES = ("ground", "plan", "rank")

_MARKED_ID = re.compile(r"\[\s*(\d+)\s*\]")
_ANSWER = re.compile(r"^[ \t>*_`#-]*ANSWER[*_`]*\s*:[*_`\s]*\[([^\]\n]*)\]", re.MULTILINE | re.IGNORECASE)
_STEP_II = re.compile(r"(?im)^[ \t*#>-]*(?:\(ii\)|ii[.)]|step\s*(?:2|ii)\b|2[.)])")
_STEP_III = re.compile(r"(?im)^[ \t*#>-]*(?:\(iii\)|iii[.)]|step\s*(?:3|iii)\b|3[.)])|^[ \t>*_`#-]*ANSWER")


@dataclass(frozen=True)
class GroundResult:
    target_id: int
    mentioned_ids: List[int]
    raw: str = field(repr=False, default="")


@dataclass(frozen=True)
class PlanResult:
    sequence: List[int]
    blockers: FrozenSet[int]
    raw: str = field(repr=False, default="")

    def __post_init__(self):
        if not self.sequence:
            raise ValueError("plan sequence must be non-empty")
        if len(set(self.sequence)) != len(self.sequence):
            raise ValueError("plan sequence has duplicates")


@dataclass(frozen=True)
class RankResult:
    order: List[int]
    contact_flagged: FrozenSet[int]
    raw: str = field(repr=False, default="")

    def __post_init__(self):
        if sorted(self.order) != list(range(1, len(self.order) + 1)):
            raise ValueError(f"{self.order} is not a permutation of 1..{len(self.order)}")


def extract_marked_ids(text):
    return [int(m) for m in _MARKED_ID.findall(text)]


def _answer_match(text):
    matches = list(_ANSWER.finditer(text))
    if not matches:
        raise MissingAnswerBlock("no 'ANSWER: [...]' line in response")
    return matches[-1]


def parse_final_answer(text, stage):
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    body = _answer_match(text).group(1)
    items = [t.strip() for t in body.split(",") if t.strip()]
    try:
        ids = [int(t) for t in items]
    except ValueError:
        raise ParseError(f"non-integer entry in answer block [{body}]") from None
    if stage == "ground" and len(ids) != 1:
        raise ArityViolation(f"grounding answer must name exactly one ID, got {ids}")
    if stage == "plan" and not ids:
        raise ArityViolation("plan answer is empty")
    return ids


def parse_ground(text, valid_ids=None):
    target = parse_final_answer(text, "ground")[0]
    if valid_ids is not None and target not in valid_ids:
        raise OutOfRangeId(f"grounded ID {target} is not a marked segment")
    return GroundResult(target, extract_marked_ids(text), text)


def parse_plan(text, target, valid_ids=None):
    """Plan ending at ``target``; duplicates keep their first occurrence and
    anything after the target is dropped."""
    ids = parse_final_answer(text, "plan")
    seq = []
    for i in ids:
        if valid_ids is not None and i not in valid_ids:
            raise OutOfRangeId(f"plan references unknown ID {i}")
        if i in seq:
            continue
        seq.append(i)
        if i == target:
            break
    if seq[-1] != target:
        seq.append(target)
    answer_start = _answer_match(text).start()
    mentioned = extract_marked_ids(text[:answer_start])
    blockers = frozenset(i for i in mentioned if i != target and (valid_ids is None or i in valid_ids))
    return PlanResult(seq, blockers, text)


def _step_two_region(text):
    m = _STEP_II.search(text)
    if not m:
        return ""
    rest = text[m.end():]
    end = _STEP_III.search(rest)
    return rest[: end.start()] if end else rest


def parse_rank(text, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    ids = parse_final_answer(text, "rank")
    order = []
    for i in ids:
        if not 1 <= i <= k:
            raise OutOfRangeId(f"grasp ID {i} outside 1..{k}")
        if i not in order:
            order.append(i)
    order += [i for i in range(1, k + 1) if i not in order]
    flagged = frozenset(i for i in extract_marked_ids(_step_two_region(text)) if 1 <= i <= k)
    return RankResult(order, flagged, text)


def majority_vote(values):
    """Most frequent value; ties go to the smallest."""
    if not values:
        raise ValueError("majority_vote needs at least one value")
    counts = Counter(values)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)
