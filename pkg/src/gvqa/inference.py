"""Two-pass inference schedules driven through a :class:`~gvqa.client.PolicyClient`."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .client import PolicyClient, answer_confidence, build_request, validate_response
from .intervals import EPS, IntervalSet, TimeInterval, clamp, measure
from .parsing import lenient_extract, try_parse
from .planner import (
    DEFAULT_FINE_FPS,
    DEFAULT_TOP_K,
    DEFAULT_WINDOW_FRAMES,
    BudgetConfig,
    WindowResult,
    ZoomPlan,
    aggregate_top_spans,
    coarse_plan,
    divide_windows,
    fine_plan,
)


@dataclass(frozen=True)
class VideoQuery:
    id: str
    question: str
    options: dict
    video_ref: str
    duration: float


@dataclass(frozen=True)
class ZoomResult:
    answer: str
    coarse_answer: str
    spans: IntervalSet
    coarse: ZoomPlan
    fine: Optional[ZoomPlan]
    windows: tuple[WindowResult, ...] = ()


def _ask(client: PolicyClient, q: VideoQuery, rid: str, spans, fps, plan, template) -> dict:
    req = build_request(rid, q.question, q.options, q.video_ref, spans, fps, plan, template)
    return validate_response(client.query(req), rid)


def _read(text: str, options) -> tuple[str, IntervalSet]:
    resp = try_parse(text, options) or lenient_extract(text, options)
    return resp.answer_letter, resp.glue_spans


def coarse_to_fine(
    client: PolicyClient,
    q: VideoQuery,
    budget: BudgetConfig = BudgetConfig(),
    fine_fps: float = DEFAULT_FINE_FPS,
) -> ZoomResult:
    """Whole-video pass, then a zoomed pass over the spans it grounded.

    Falls back to the coarse answer when the coarse pass grounds nothing.
    """
    cplan = coarse_plan(q.duration, budget)
    out = _ask(client, q, f"{q.id}:coarse", [[0.0, q.duration]], budget.fps, cplan, "coarse")
    coarse_answer, spans = _read(out["text"], list(q.options))
    spans = clamp(spans, 0.0, q.duration)
    if measure(spans) <= EPS:
        return ZoomResult(coarse_answer, coarse_answer, spans, cplan, None)
    fplan = fine_plan(spans, budget, fine_fps)
    out = _ask(client, q, f"{q.id}:fine", spans.to_list(), fine_fps, fplan, "fine")
    answer, _ = _read(out["text"], list(q.options))
    return ZoomResult(answer or coarse_answer, coarse_answer, spans, cplan, fplan)


def scan_window(client: PolicyClient, q: VideoQuery, w: TimeInterval, budget: BudgetConfig, idx: int) -> WindowResult:
    plan = coarse_plan(w.measure, budget, offset=w.start)
    out = _ask(client, q, f"{q.id}:w{idx}", [[w.start, w.end]], budget.fps, plan, "coarse")
    answer, spans = _read(out["text"], list(q.options))
    conf = answer_confidence(out)
    return WindowResult(w, clamp(spans, w.start, w.end), answer, 0.0 if conf is None else conf)


def divide_and_conquer(
    client: PolicyClient,
    q: VideoQuery,
    budget: BudgetConfig = BudgetConfig(),
    window_frames: int = DEFAULT_WINDOW_FRAMES,
    k: int = DEFAULT_TOP_K,
    fine_fps: float = DEFAULT_FINE_FPS,
    max_workers: int = 1,
) -> ZoomResult:
    """Scan non-overlapping windows, keep the spans of the ``k`` most confident
    answers, and answer once more from a zoomed pass over their union."""
    windows = divide_windows(q.duration, window_frames, budget)
    jobs = list(enumerate(windows))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            results = list(pool.map(lambda iw: scan_window(client, q, iw[1], budget, iw[0]), jobs))
    else:
        results = [scan_window(client, q, w, budget, i) for i, w in jobs]
    best = sorted(results, key=lambda r: (-r.confidence, r.window.start))[0]
    spans = aggregate_top_spans(results, k)
    cplan = coarse_plan(q.duration, budget)
    if measure(spans) <= EPS:
        return ZoomResult(best.answer, best.answer, spans, cplan, None, tuple(results))
    fplan = fine_plan(spans, budget, fine_fps)
    out = _ask(client, q, f"{q.id}:fine", spans.to_list(), fine_fps, fplan, "fine")
    answer, _ = _read(out["text"], list(q.options))
    return ZoomResult(answer or best.answer, best.answer, spans, cplan, fplan, tuple(results))
