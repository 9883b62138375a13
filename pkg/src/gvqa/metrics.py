"""Grounded-QA evaluation metrics over prediction / ground-truth collections."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError
from .intervals import EPS, IntervalSet, iog, iop, iou, measure, normalize
from .rewards import GroundTruth

RECALL_THRESHOLDS = (0.3, 0.5)
SWEEP_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)
GQA_IOP_THRESHOLD = 0.5

METRIC_NAMES = (
    "miou", "miog", "miop", "r@0.3", "r@0.5", "acc", "acc_gqa", "rec_at_iou", "acc_at_iou",
)


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    answer: str
    spans: IntervalSet = IntervalSet()

    @classmethod
    def from_json(cls, d: dict) -> "PredictionRecord":
        return cls(str(d["id"]), str(d.get("answer", "")), normalize(d.get("spans_s") or []))


@dataclass(frozen=True)
class ItemScore:
    id: str
    correct: bool
    iou: float
    iog: float
    iop: float | None  # None when the prediction is empty


@dataclass(frozen=True)
class MetricReport:
    miou: float
    miog: float
    miop: float
    recall_at: Mapping[float, float]
    acc: float
    acc_gqa: float
    rec_at_iou: float
    acc_at_iou: float
    n: int
    items: tuple[ItemScore, ...] = field(default=(), repr=False, compare=False)

    def flat(self) -> dict[str, float]:
        out = {"miou": self.miou, "miog": self.miog, "miop": self.miop}
        out.update({f"r@{t:g}": v for t, v in self.recall_at.items()})
        out.update(acc=self.acc, acc_gqa=self.acc_gqa, rec_at_iou=self.rec_at_iou,
                   acc_at_iou=self.acc_at_iou)
        return out

    def to_json(self, metrics: Sequence[str] | None = None) -> dict:
        flat = self.flat()
        keep = metrics or list(flat)
        return {"n": self.n, "metrics": {k: flat[k] for k in keep}}

    def table(self, metrics: Sequence[str] | None = None) -> str:
        flat = self.flat()
        keep = metrics or list(flat)
        width = max(len(k) for k in keep)
        lines = [f"{'metric':<{width}}  value", f"{'-' * width}  --------"]
        lines += [f"{k:<{width}}  {flat[k]:.6g}" for k in keep]
        lines.append(f"{'n':<{width}}  {self.n}")
        return "\n".join(lines)

    def items_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "correct", "iou", "iog", "iop"])
        for it in self.items:
            w.writerow([it.id, int(it.correct), it.iou, it.iog, "" if it.iop is None else it.iop])
        return buf.getvalue()


def _match(preds: Iterable[PredictionRecord], gts: Iterable[GroundTruth]):
    gt_by_id = {g.id: g for g in gts}
    pairs = []
    seen = set()
    for p in preds:
        if p.id in seen:
            raise DomainError(f"duplicate prediction id {p.id!r}")
        seen.add(p.id)
        if p.id not in gt_by_id:
            raise DomainError(f"prediction {p.id!r} has no ground truth")
        pairs.append((p, gt_by_id[p.id]))
    if not pairs:
        raise DomainError("empty prediction set")
    return pairs


def score_items(preds, gts) -> list[ItemScore]:
    out = []
    for p, g in _match(preds, gts):
        empty = measure(p.spans) <= EPS
        out.append(ItemScore(
            id=p.id,
            correct=p.answer == g.answer,
            iou=0.0 if empty else iou(p.spans, g.gt_spans),
            iog=0.0 if empty else iog(p.spans, g.gt_spans),
            iop=None if empty else iop(p.spans, g.gt_spans),
        ))
    return out


def _recall(ious: np.ndarray, tau: float, gate: np.ndarray | None = None) -> float:
    hit = ious > tau
    if gate is not None:
        hit &= gate
    return float(hit.mean())


def evaluate(preds, gts) -> MetricReport:
    items = score_items(preds, gts)
    ious = np.array([it.iou for it in items])
    iogs = np.array([it.iog for it in items])
    iops = [it.iop for it in items if it.iop is not None]
    correct = np.array([it.correct for it in items])
    return MetricReport(
        miou=float(ious.mean()),
        miog=float(iogs.mean()),
        miop=float(np.mean(iops)) if iops else 0.0,
        recall_at={t: _recall(ious, t) for t in RECALL_THRESHOLDS},
        acc=float(correct.mean()),
        acc_gqa=_acc_gqa(items),
        rec_at_iou=float(np.mean([_recall(ious, t) for t in SWEEP_THRESHOLDS])),
        acc_at_iou=float(np.mean([_recall(ious, t, correct) for t in SWEEP_THRESHOLDS])),
        n=len(items),
        items=tuple(items),
    )


def _acc_gqa(items: Sequence[ItemScore]) -> float:
    return float(np.mean([
        it.correct and it.iop is not None and it.iop >= GQA_IOP_THRESHOLD for it in items
    ]))


def acc_gqa(preds, gts) -> float:
    return _acc_gqa(score_items(preds, gts))


def recall_at(preds, gts, tau: float) -> float:
    return _recall(np.array([it.iou for it in score_items(preds, gts)]), tau)


def rec_at_iou(preds, gts) -> float:
    return evaluate(preds, gts).rec_at_iou


def acc_at_iou(preds, gts) -> float:
    return evaluate(preds, gts).acc_at_iou


def report_json(report: MetricReport, metrics: Sequence[str] | None = None) -> str:
    return json.dumps(report.to_json(metrics), indent=2)
