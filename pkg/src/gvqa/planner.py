"""Video-token budget arithmetic for coarse and zoomed-in passes.

All counts are integral and floored so a plan never exceeds its budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import DomainError
from .intervals import EPS, IntervalSet, TimeInterval, measure, normalize, union

DEFAULT_WINDOW_FRAMES = 256
DEFAULT_TOP_K = 4
DEFAULT_FINE_FPS = 1.0


@dataclass(frozen=True)
class BudgetConfig:
    total_tokens: int = 8192  # L_v
    min_tokens: int = 16  # V_min
    max_tokens: int = 768  # V_max
    fps: float = 1.0  # s

    def __post_init__(self):
        if not (0 < self.min_tokens <= self.max_tokens <= self.total_tokens):
            raise DomainError(
                "budget must satisfy 0 < min_tokens <= max_tokens <= total_tokens, got "
                f"{self.min_tokens}, {self.max_tokens}, {self.total_tokens}"
            )
        if not self.fps > 0:
            raise DomainError("fps must be positive")

    @property
    def max_frames(self) -> int:
        return self.total_tokens // self.min_tokens


@dataclass(frozen=True)
class ZoomPlan:
    frame_times: tuple[float, ...]
    tokens_per_frame: int
    pass_: Literal["coarse", "fine"]

    @property
    def n_frames(self) -> int:
        return len(self.frame_times)

    @property
    def total_tokens(self) -> int:
        return self.n_frames * self.tokens_per_frame

    def to_json(self) -> dict:
        return {
            "pass": self.pass_,
            "frame_times_s": list(self.frame_times),
            "tokens_per_frame": self.tokens_per_frame,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ZoomPlan":
        return cls(tuple(float(t) for t in d["frame_times_s"]), int(d["tokens_per_frame"]), d["pass"])


@dataclass(frozen=True)
class WindowResult:
    window: TimeInterval
    predicted_spans: IntervalSet
    answer: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence {self.confidence} outside [0, 1]")
        for s, e in self.predicted_spans:
            if s < self.window.start - EPS or e > self.window.end + EPS:
                raise DomainError(f"span ({s}, {e}) escapes window {self.window}")


def _uniform_times(start: float, end: float, n: int) -> list[float]:
    # frame centres of n equal bins
    step = (end - start) / n
    return [start + (j + 0.5) * step for j in range(n)]


def coarse_plan(duration: float, cfg: BudgetConfig, offset: float = 0.0) -> ZoomPlan:
    if not duration > 0:
        raise DomainError(f"duration must be positive, got {duration}")
    n = max(1, min(math.floor(duration * cfg.fps + EPS), cfg.max_frames))
    v_res = max(cfg.min_tokens, min(cfg.total_tokens // n, cfg.max_tokens))
    return ZoomPlan(tuple(_uniform_times(offset, offset + duration, n)), v_res, "coarse")


def _allocate(lengths: Sequence[float], total: int) -> list[int]:
    """Split ``total`` frames across spans proportionally (largest remainder)."""
    share = np.asarray(lengths, dtype=float)
    share = share / share.sum() * total
    counts = np.floor(share + EPS).astype(int)
    order = np.argsort(-(share - counts), kind="stable")
    for idx in order[: total - counts.sum()]:
        counts[idx] += 1
    return counts.tolist()


def fine_plan(spans: IntervalSet, cfg: BudgetConfig, fine_fps: float = DEFAULT_FINE_FPS) -> ZoomPlan:
    spans = spans if isinstance(spans, IntervalSet) else normalize(spans)
    m = measure(spans)
    if not spans or m <= EPS:
        raise DomainError("fine pass needs spans with positive measure")
    n = max(1, min(math.floor(m * fine_fps + EPS), cfg.max_frames))
    v_res = min(cfg.total_tokens // n, cfg.max_tokens)
    return ZoomPlan(tuple(sample_frames(spans, n)), v_res, "fine")


def sample_frames(spans: IntervalSet, n: int) -> list[float]:
    """``n`` frame times spread over ``spans`` in proportion to span length."""
    times: list[float] = []
    for (s, e), k in zip(spans, _allocate([e - s for s, e in spans], n)):
        if k:
            times.extend(_uniform_times(s, e, k))
    return times


def divide_windows(duration: float, window_frames: int, cfg: BudgetConfig) -> list[TimeInterval]:
    if not duration > 0:
        raise DomainError(f"duration must be positive, got {duration}")
    if window_frames < 1:
        raise DomainError("window_frames must be >= 1")
    width = window_frames / cfg.fps
    out = []
    k = 0
    while k * width < duration - EPS:
        out.append(TimeInterval(k * width, min((k + 1) * width, duration)))
        k += 1
    return out


def aggregate_top_spans(results: Sequence[WindowResult], k: int = DEFAULT_TOP_K) -> IntervalSet:
    if not results:
        raise DomainError("no window results to aggregate")
    if k < 1:
        raise DomainError("k must be >= 1")
    ranked = sorted(results, key=lambda r: (-r.confidence, r.window.start))
    out = IntervalSet()
    for r in ranked[:k]:
        out = union(out, r.predicted_spans)
    return out
