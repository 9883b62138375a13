"""The four per-rollout rewards: format, answer accuracy, IoU and zoom-in accuracy."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .client import PolicyClient, build_request, validate_response
from .errors import ClientError, DomainError
from .intervals import EPS, IntervalSet, clamp, iou, measure, normalize
from .parsing import StructuredResponse, format_reward, lenient_extract, try_parse
from .planner import DEFAULT_FINE_FPS, BudgetConfig, fine_plan

log = logging.getLogger(__name__)

REWARD_KINDS = ("format", "acc", "iou", "zoom")


@dataclass(frozen=True)
class RewardVector:
    format: int
    acc: int
    iou: float
    zoom: int

    def as_array(self) -> np.ndarray:
        return np.array([self.format, self.acc, self.iou, self.zoom], dtype=float)

    def as_dict(self) -> dict:
        return {"format": self.format, "acc": self.acc, "iou": self.iou, "zoom": self.zoom}

    @property
    def total(self) -> float:
        return float(self.format + self.acc + self.iou + self.zoom)


@dataclass(frozen=True)
class GroundTruth:
    id: str
    question: str
    options: dict
    answer: str
    gt_spans: IntervalSet
    duration: float
    video_ref: str = ""

    def __post_init__(self):
        if not self.video_ref:
            object.__setattr__(self, "video_ref", self.id)
        if self.answer not in self.options:
            raise DomainError(f"{self.id}: answer {self.answer!r} not among options")
        if measure(self.gt_spans) <= EPS:
            raise DomainError(f"{self.id}: ground-truth spans have zero measure")
        for s, e in self.gt_spans:
            if s < -EPS or e > self.duration + EPS:
                raise DomainError(f"{self.id}: span ({s}, {e}) outside [0, {self.duration}]")

    @classmethod
    def from_json(cls, d: dict) -> "GroundTruth":
        return cls(
            id=str(d["id"]),
            question=str(d.get("question", "")),
            options=dict(d["options"]),
            answer=str(d["answer"]),
            gt_spans=normalize(d["gt_spans_s"]),
            duration=float(d["duration_s"]),
            video_ref=str(d.get("video_ref", d["id"])),
        )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "duration_s": self.duration,
            "question": self.question,
            "options": self.options,
            "answer": self.answer,
            "gt_spans_s": self.gt_spans.to_list(),
            **({"video_ref": self.video_ref} if self.video_ref != self.id else {}),
        }


@dataclass(frozen=True)
class Rollout:
    text: str
    tokens: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class RolloutGroup:
    prompt_id: str
    rollouts: tuple[Rollout, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.rollouts) < 2:
            raise DomainError("a rollout group needs at least 2 responses")

    def __len__(self) -> int:
        return len(self.rollouts)


def acc_reward(resp: Optional[StructuredResponse], gt: GroundTruth) -> int:
    if resp is None:
        return 0
    return int(resp.answer_letter == gt.answer)


def iou_reward(resp: Optional[StructuredResponse], gt: GroundTruth) -> float:
    if resp is None:
        return 0.0
    pred = clamp(resp.glue_spans, 0.0, gt.duration)
    if not pred:
        return 0.0
    return iou(pred, gt.gt_spans)


def zoom_reward(
    resp: Optional[StructuredResponse],
    gt: GroundTruth,
    client: Optional[PolicyClient],
    budget: BudgetConfig,
    fine_fps: float = DEFAULT_FINE_FPS,
    request_id: Optional[str] = None,
) -> int:
    """Second-pass answer over the response's own glue spans at zoomed resolution.

    Client errors propagate; see :func:`score_group` for the retry policy.
    """
    if resp is None or client is None:
        return 0
    spans = clamp(resp.glue_spans, 0.0, gt.duration)
    if measure(spans) <= EPS:
        return 0
    plan = fine_plan(spans, budget, fine_fps)
    rid = request_id or f"{gt.id}:fine"
    req = build_request(
        rid, gt.question, gt.options, gt.video_ref or gt.id, spans.to_list(), fine_fps, plan, "fine"
    )
    out = validate_response(client.query(req), rid)
    return int(lenient_extract(out["text"], list(gt.options)).answer_letter == gt.answer)


def best_effort_parse(text: str, options: Sequence[str]) -> StructuredResponse:
    return try_parse(text, options) or lenient_extract(text, options)


def score_rollout(
    text: str,
    gt: GroundTruth,
    client: Optional[PolicyClient] = None,
    budget: BudgetConfig = BudgetConfig(),
    fine_fps: float = DEFAULT_FINE_FPS,
    request_id: Optional[str] = None,
    retries: int = 1,
    on_client_error: str = "zero",
) -> RewardVector:
    options = list(gt.options)
    fmt = format_reward(text, options)
    resp = best_effort_parse(text, options)
    attempts = 0
    while True:
        try:
            zoom = zoom_reward(resp, gt, client, budget, fine_fps, request_id)
            break
        except ClientError as exc:
            attempts += 1
            if attempts <= retries:
                log.warning("zoom query %s failed (%s); retrying", request_id, exc)
                continue
            if on_client_error == "raise":
                raise
            log.warning("zoom query %s failed after %d attempts; zoom=0", request_id, attempts)
            zoom = 0
            break
    return RewardVector(fmt, acc_reward(resp, gt), iou_reward(resp, gt), zoom)


def score_group(
    group: RolloutGroup,
    gt: GroundTruth,
    client: Optional[PolicyClient] = None,
    budget: BudgetConfig = BudgetConfig(),
    fine_fps: float = DEFAULT_FINE_FPS,
    retries: int = 1,
    on_client_error: str = "zero",
    max_workers: int = 1,
) -> list[RewardVector]:
    """Score every rollout; output order follows input order."""

    def one(i: int) -> RewardVector:
        return score_rollout(
            group.rollouts[i].text,
            gt,
            client,
            budget,
            fine_fps,
            request_id=f"{group.prompt_id}:{i}:fine",
            retries=retries,
            on_client_error=on_client_error,
        )

    idx = range(len(group))
    if max_workers <= 1:
        return [one(i) for i in idx]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(one, idx))
