"""Offline selection of training examples from group rollout statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DomainError

DEFAULT_DELTA_THRESHOLD = 0.1
# slack for values that land a rounding error below an exactly representable threshold
_SLACK = 1e-12


@dataclass(frozen=True)
class FilterRecord:
    id: str
    ious: tuple[float, ...]
    correct: tuple[bool, ...]

    @classmethod
    def from_json(cls, d: dict) -> "FilterRecord":
        ious = tuple(float(x) for x in d["ious"])
        correct = tuple(bool(x) for x in d["correct"])
        if len(ious) != len(correct):
            raise DomainError(f"{d.get('id')}: ious and correct differ in length")
        return cls(str(d["id"]), ious, correct)

    def to_json(self) -> dict:
        return {"id": self.id, "ious": list(self.ious), "correct": list(self.correct)}


@dataclass(frozen=True)
class FilterDecision:
    id: str
    delta: float
    all_correct: bool
    kept: bool

    def to_json(self) -> dict:
        return {"id": self.id, "delta": self.delta, "all_correct": self.all_correct, "kept": self.kept}


def delta(ious: Sequence[float]) -> float:
    """max IoU minus mean IoU over a group of responses."""
    if len(ious) == 0:
        raise DomainError("delta of an empty IoU list")
    top = max(ious)
    if min(ious) == top:
        return 0.0
    d = top - math.fsum(ious) / len(ious)
    # unequal values give a strictly positive spread even when it rounds away
    return d if d > 0 else math.nextafter(0.0, 1.0)


def decide(rec: FilterRecord, threshold: float = DEFAULT_DELTA_THRESHOLD) -> FilterDecision:
    d = delta(rec.ious)
    all_correct = len(rec.correct) > 0 and all(rec.correct)
    return FilterDecision(rec.id, d, all_correct, (not all_correct) and d >= threshold - _SLACK)


def filter_examples(
    records: Iterable[FilterRecord], threshold: float = DEFAULT_DELTA_THRESHOLD
) -> list[FilterDecision]:
    return [decide(r, threshold) for r in records]
