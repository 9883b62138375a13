"""Set algebra over time intervals (seconds) and the IoU / IoG / IoP ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .errors import DomainError

EPS = 1e-9

Span = tuple[float, float]


@dataclass(frozen=True)
class TimeInterval:
    start: float
    end: float

    @property
    def measure(self) -> float:
        return max(0.0, self.end - self.start)

    def contains(self, t: float) -> bool:
        return self.start - EPS <= t <= self.end + EPS


@dataclass(frozen=True)
class IntervalSet:
    """Canonical disjoint union of closed intervals, sorted by start.

    Build instances with :func:`normalize` (or ``IntervalSet.of``); the raw
    constructor trusts its input.
    """

    spans: tuple[Span, ...] = ()

    @classmethod
    def of(cls, raw: Iterable[Sequence[float]]) -> "IntervalSet":
        return normalize(raw)

    def __iter__(self) -> Iterator[Span]:
        return iter(self.spans)

    def __len__(self) -> int:
        return len(self.spans)

    def __bool__(self) -> bool:
        return bool(self.spans)

    @property
    def intervals(self) -> list[TimeInterval]:
        return [TimeInterval(s, e) for s, e in self.spans]

    @property
    def measure(self) -> float:
        return measure(self)

    def contains(self, t: float) -> bool:
        return any(s - EPS <= t <= e + EPS for s, e in self.spans)

    def isclose(self, other: "IntervalSet", tol: float = 1e-6) -> bool:
        if len(self) != len(other):
            return False
        return all(
            abs(a - c) <= tol and abs(b - d) <= tol
            for (a, b), (c, d) in zip(self.spans, other.spans)
        )

    def to_list(self) -> list[list[float]]:
        return [[s, e] for s, e in self.spans]


def normalize(raw_spans: Iterable[Sequence[float]]) -> IntervalSet:
    """Sort, swap reversed pairs, and merge overlapping or abutting spans.

    Zero-length spans carry no measure and are dropped.
    """
    pairs = []
    for pair in raw_spans:
        s, e = (float(v) for v in pair)
        if not (math.isfinite(s) and math.isfinite(e)):
            raise DomainError(f"non-finite interval endpoint in {pair!r}")
        if s > e:
            s, e = e, s
        if e - s > EPS:
            pairs.append((s, e))
    pairs.sort()
    merged: list[list[float]] = []
    for s, e in pairs:
        if merged and s <= merged[-1][1] + EPS:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return IntervalSet(tuple((s, e) for s, e in merged))


def _as_set(a) -> IntervalSet:
    return a if isinstance(a, IntervalSet) else normalize(a)


def measure(a: IntervalSet) -> float:
    return math.fsum(e - s for s, e in _as_set(a).spans)


def union(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    return normalize(list(_as_set(a).spans) + list(_as_set(b).spans))


def intersect(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    a, b = _as_set(a).spans, _as_set(b).spans
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi - lo > EPS:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return normalize(out)


def clamp(a: IntervalSet, lo: float, hi: float) -> IntervalSet:
    return intersect(a, IntervalSet(((lo, hi),)))


def iou(pred: IntervalSet, gt: IntervalSet) -> float:
    pred, gt = _as_set(pred), _as_set(gt)
    if measure(gt) <= EPS:
        raise DomainError("IoU undefined: ground truth has zero measure")
    inter = measure(intersect(pred, gt))
    if inter <= 0.0:
        return 0.0
    return min(1.0, inter / measure(union(pred, gt)))


def iog(pred: IntervalSet, gt: IntervalSet) -> float:
    pred, gt = _as_set(pred), _as_set(gt)
    g = measure(gt)
    if g <= EPS:
        raise DomainError("IoG undefined: ground truth has zero measure")
    return min(1.0, measure(intersect(pred, gt)) / g)


def iop(pred: IntervalSet, gt: IntervalSet) -> float:
    pred, gt = _as_set(pred), _as_set(gt)
    p = measure(pred)
    if p <= EPS:
        raise DomainError("IoP undefined: prediction has zero measure")
    return min(1.0, measure(intersect(pred, gt)) / p)
