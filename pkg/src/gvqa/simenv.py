"""Deterministic synthetic grounded-VQA environment.

Each episode hides a small visual detail inside one event. A scripted client
can read that detail only when it is shown a frame inside the event *and*
the frame gets at least ``detail_threshold`` tokens, so a coarse whole-video
pass misses it while a zoomed pass over the right span recovers it.
"""

from __future__ import annotations

import json
import math
import re
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .client import validate_request
from .errors import ClientProtocolError, DomainError
from .intervals import EPS, IntervalSet, TimeInterval, intersect, measure, normalize
from .parsing import glue_token_mask, try_parse
from .planner import BudgetConfig, coarse_plan, fine_plan, sample_frames
from .rewards import GroundTruth, Rollout, RolloutGroup, RewardVector, score_rollout

CATEGORIES = ("sign", "person", "car", "screen", "dog", "bottle", "poster", "clock", "door", "ball")
DETAILS = ("29%", "red", "7", "left", "XL", "3:15", "blue", "open", "42", "north", "B2", "12kg")
LETTERS = "ABCD"

_TOKEN_RE = re.compile(r"</?[a-z]+>|\d+(?:\.\d+)?|\s+|[\s\S]")


def tokenize(text: str) -> list[str]:
    """Symbol-level split: tags, numbers, whitespace runs, single characters."""
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class Event:
    span: TimeInterval
    category: str
    detail: str


@dataclass(frozen=True)
class SyntheticEpisode:
    id: str
    duration: float
    events: tuple[Event, ...]
    target: int
    question: str
    options: dict
    answer: str
    detail_threshold: int

    @property
    def gt_spans(self) -> IntervalSet:
        ev = self.events[self.target].span
        return IntervalSet(((ev.start, ev.end),))

    @property
    def target_event(self) -> Event:
        return self.events[self.target]

    def ground_truth(self) -> GroundTruth:
        return GroundTruth(self.id, self.question, dict(self.options), self.answer,
                           self.gt_spans, self.duration, self.id)

    def wrong_letter(self) -> str:
        return next(k for k in sorted(self.options) if k != self.answer)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "duration_s": self.duration,
            "question": self.question,
            "options": self.options,
            "answer": self.answer,
            "gt_spans_s": self.gt_spans.to_list(),
            "events": [
                {"span_s": [e.span.start, e.span.end], "category": e.category, "detail": e.detail}
                for e in self.events
            ],
            "target": self.target,
            "detail_threshold": self.detail_threshold,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticEpisode":
        events = tuple(
            Event(TimeInterval(*map(float, e["span_s"])), e["category"], e["detail"]) for e in d["events"]
        )
        gt = normalize(d["gt_spans_s"])
        target = d.get("target")
        if target is None:
            target = next(i for i, e in enumerate(events) if normalize([(e.span.start, e.span.end)]) == gt)
        return cls(str(d["id"]), float(d["duration_s"]), events, int(target), d["question"],
                   dict(d["options"]), d["answer"], int(d["detail_threshold"]))


def generate_episode(
    seed: int,
    duration_range: tuple[float, float] = (60.0, 600.0),
    n_events: int = 3,
    budget: BudgetConfig = BudgetConfig(),
    fine_fps: float = 1.0,
    quantum: float = 1.0,
    event_frac: tuple[float, float] = (0.02, 0.15),
) -> SyntheticEpisode:
    """Sample a reproducible episode with ``n_events`` non-overlapping events.

    Event endpoints are multiples of ``quantum`` seconds. The detail threshold
    sits strictly above the coarse whole-video resolution and at or below the
    resolution a zoom onto exactly the target event would get.
    """
    if not 1 <= n_events <= min(len(CATEGORIES), len(DETAILS) - 3):
        raise DomainError(f"n_events must be in [1, {min(len(CATEGORIES), len(DETAILS) - 3)}]")
    rng = np.random.default_rng(seed)
    lo, hi = duration_range
    if not 0 < lo <= hi:
        raise DomainError(f"bad duration range {duration_range}")
    units = int(math.floor(rng.uniform(lo, hi) / quantum + EPS))
    duration = units * quantum
    lens = [
        max(1, int(round(rng.uniform(*event_frac) * duration / quantum))) for _ in range(n_events)
    ]
    free = units - sum(lens)
    if free < 0:
        raise DomainError(f"{n_events} events of {sum(lens)} units do not fit in {units} units")
    gaps = rng.multinomial(free, np.full(n_events + 1, 1.0 / (n_events + 1)))
    cats = rng.choice(len(CATEGORIES), size=n_events, replace=False)
    dets = rng.choice(len(DETAILS), size=n_events, replace=False)
    events = []
    t = 0
    for k in range(n_events):
        t += gaps[k]
        events.append(Event(TimeInterval(float(t * quantum), float((t + lens[k]) * quantum)),
                            CATEGORIES[cats[k]], DETAILS[dets[k]]))
        t += lens[k]
    target = int(rng.integers(n_events))
    tev = events[target]
    distractors = [DETAILS[i] for i in range(len(DETAILS)) if i != dets[target]]
    picks = [tev.detail] + list(rng.choice(distractors, size=len(LETTERS) - 1, replace=False))
    order = rng.permutation(len(LETTERS))
    options = {LETTERS[j]: str(picks[order[j]]) for j in range(len(LETTERS))}
    answer = next(k for k, v in options.items() if v == tev.detail)
    coarse_v = coarse_plan(duration, budget).tokens_per_frame
    fine_v = fine_plan(IntervalSet(((tev.span.start, tev.span.end),)), budget, fine_fps).tokens_per_frame
    if fine_v <= coarse_v:
        raise DomainError(
            f"budget cannot separate coarse ({coarse_v}) and zoomed ({fine_v}) resolution"
        )
    threshold = int(rng.integers(coarse_v + 1, fine_v + 1))
    return SyntheticEpisode(
        id=f"ep{seed}",
        duration=float(duration),
        events=tuple(events),
        target=target,
        question=f"What detail is visible on the {tev.category}?",
        options=options,
        answer=answer,
        detail_threshold=threshold,
    )


def save_episodes(episodes: Iterable[SyntheticEpisode]) -> str:
    return "".join(json.dumps(ep.to_json()) + "\n" for ep in episodes)


def load_episodes(text: str) -> list[SyntheticEpisode]:
    return [SyntheticEpisode.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


# --- scripted policy client -------------------------------------------------


@dataclass(frozen=True)
class ScriptedClientConfig:
    mode: str = "oracle"  # oracle | noisy | adversarial
    noise_seed: int = 0
    flip_prob: float = 0.2


def frames_from_spec(frame_spec: dict) -> list[float]:
    if frame_spec.get("frame_times_s") is not None:
        return [float(t) for t in frame_spec["frame_times_s"]]
    spans = normalize(frame_spec["spans_s"])
    if measure(spans) <= EPS:
        return []
    n = max(1, int(math.floor(measure(spans) * float(frame_spec["fps"]) + EPS)))
    return sample_frames(spans, n)


def detail_visible(ep: SyntheticEpisode, frame_times: Sequence[float], tokens_per_frame: int) -> bool:
    span = ep.target_event.span
    return tokens_per_frame >= ep.detail_threshold and any(span.contains(t) for t in frame_times)


def _scripted(ep: SyntheticEpisode, frame_spec: dict, cfg: ScriptedClientConfig, request_id: str):
    frames = frames_from_spec(frame_spec)
    tpf = int(frame_spec["tokens_per_frame"])
    hit = any(ep.target_event.span.contains(t) for t in frames)
    visible = detail_visible(ep, frames, tpf)
    if cfg.mode == "adversarial":
        letter = ep.wrong_letter()
    else:
        letter = ep.answer if visible else ep.wrong_letter()
        if cfg.mode == "noisy":
            u = np.random.default_rng([cfg.noise_seed, zlib.crc32(request_id.encode())]).random()
            if u < cfg.flip_prob:
                letter = ep.wrong_letter() if letter == ep.answer else ep.answer
    confidence = 0.9 if visible else (0.5 if hit else 0.2)
    queried = normalize(frame_spec["spans_s"])
    if hit:
        glue = intersect(queried, ep.gt_spans)
    elif queried:
        s, e = queried.spans[0]
        mid, half = (s + e) / 2, (e - s) / 20
        glue = IntervalSet(((mid - half, mid + half),))
    else:
        glue = IntervalSet()
    return letter, confidence, glue


def scripted_answer(
    ep: SyntheticEpisode,
    frame_spec: dict,
    cfg: ScriptedClientConfig = ScriptedClientConfig(),
    template: str = "coarse",
    request_id: str = "",
) -> str:
    letter, _, glue = _scripted(ep, frame_spec, cfg, request_id)
    think = f"<think>Looking for the {ep.target_event.category}.</think>"
    if template == "fine":
        return f"{think}<answer>{letter}</answer>"
    spans = ", ".join(f"({s:g}, {e:g})" for s, e in glue)
    return f"{think}<answer>{letter}</answer><glue>[{spans}]</glue>"


class ScriptedClient:
    """In-process policy client answering from episode ground truth."""

    def __init__(self, episodes: Iterable[SyntheticEpisode], cfg: ScriptedClientConfig = ScriptedClientConfig()):
        self.episodes = {ep.id: ep for ep in episodes}
        self.cfg = cfg
        self.calls = 0

    def query(self, request: dict) -> dict:
        validate_request(request)
        ep = self.episodes.get(request["video_ref"])
        if ep is None:
            raise ClientProtocolError(f"unknown video_ref {request['video_ref']!r}")
        self.calls += 1
        letter, conf, _ = _scripted(ep, request["frame_spec"], self.cfg, request["id"])
        text = scripted_answer(ep, request["frame_spec"], self.cfg, request["template"], request["id"])
        return {"id": request["id"], "text": text, "answer_token_logprob": math.log(conf)}


# --- fixture rollout groups ---------------------------------------------------


def _response(think: str, letter: str, spans: Sequence[tuple[float, float]]) -> str:
    body = ", ".join(f"({s:g}, {e:g})" for s, e in spans)
    return f"<think>{think}</think><answer>{letter}</answer><glue>[{body}]</glue>"


def span_variant(ep: SyntheticEpisode, kind: str) -> list[tuple[float, float]]:
    s, e = ep.target_event.span.start, ep.target_event.span.end
    L = e - s
    if kind == "exact":
        return [(s, e)]
    if kind == "shifted":
        if e + L / 2 <= ep.duration:
            return [(s + L / 2, e + L / 2)]
        return [(s - L / 2, e - L / 2)]
    if kind == "wide":
        return [(max(0.0, s - L), min(ep.duration, e + L))]
    if kind == "disjoint":
        gaps = [(0.0, s), (e, ep.duration)]
        a, b = max(gaps, key=lambda g: g[1] - g[0])
        if b - a <= EPS:
            return []
        mid, half = (a + b) / 2, min(L, (b - a) / 2) / 2
        return [(mid - half, mid + half)]
    if kind == "empty":
        return []
    raise DomainError(f"unknown span variant {kind!r}")


ADVERSARIAL_CYCLE = ("exact", "shifted", "empty", "malformed", "disjoint", "wide")


def scripted_rollout_group(ep: SyntheticEpisode, G: int, mode: str = "oracle", seed: int = 0) -> RolloutGroup:
    if G < 2:
        raise DomainError("G must be >= 2")
    rng = np.random.default_rng(seed)
    think = f"The {ep.target_event.category} appears around <time>{ep.target_event.span.start:g}</time>."
    texts = []
    for i in range(G):
        letter = ep.answer
        if mode == "oracle":
            kind = "exact"
        elif mode == "noisy":
            kind = str(rng.choice(["exact", "shifted", "wide", "disjoint", "empty"]))
            letter = ep.answer if rng.random() < 0.5 else ep.wrong_letter()
        elif mode == "adversarial":
            kind = ADVERSARIAL_CYCLE[i % len(ADVERSARIAL_CYCLE)]
        else:
            raise DomainError(f"unknown rollout mode {mode!r}")
        if kind == "malformed":
            s, e = span_variant(ep, "exact")[0]
            texts.append(f"<think>{think}</think><answer>{letter}</answer><glue>[({s:g}, </glue>")
        else:
            texts.append(_response(think, letter, span_variant(ep, kind)))
    return RolloutGroup(ep.id, tuple(Rollout(t, tuple(tokenize(t))) for t in texts))


# --- learnable toy task ---------------------------------------------------------

TOY_TAGS = ("<think>", "</think>", "<answer>", "</answer>", "<glue>", "</glue>")
TOY_VOCAB = TOY_TAGS + tuple(LETTERS) + tuple("0123456789") + ("[", "(", ",", ")", "]")
# position -> allowed symbols of the response template
TOY_TEMPLATE = (
    ("<think>",), ("</think>",), ("<answer>",), tuple(LETTERS), ("</answer>",), ("<glue>",),
    ("[",), ("(",), tuple("0123456789"), (",",), tuple("0123456789"), (")",), ("]",), ("</glue>",),
)
TOY_BUDGET = BudgetConfig(total_tokens=40, min_tokens=2, max_tokens=16, fps=2.0)


@dataclass
class ToyGroundingTask:
    """A pool of 9-second episodes the toy policy answers in a fixed symbol grammar.

    Responses look like ``<think></think><answer>B</answer><glue>[(3,5)]</glue>``
    with one symbol per token, so the glue mask is exact. Rewards go through
    the real scoring path with an oracle :class:`ScriptedClient` for the zoom pass.

    With ``rotate_options`` each presentation of a prompt cyclically relabels
    the options, and the policy does not observe the rotation. The coarse
    answer is then a guess it cannot memorize, which is the situation the
    zoom pass exists for: the detail is invisible at coarse resolution.
    """

    n_prompts: int = 4
    seed: int = 0
    template_logit: float = 8.0
    max_len: int = 16
    budget: BudgetConfig = TOY_BUDGET
    fine_fps: float = 1.0
    rotate_options: bool = True
    episodes: list = field(default_factory=list)

    def __post_init__(self):
        if not self.episodes:
            self.episodes = [
                generate_episode(
                    seed=10_000 * self.seed + k, duration_range=(9.0, 9.0), n_events=3,
                    budget=self.budget, fine_fps=self.fine_fps, quantum=1.0, event_frac=(0.2, 0.34),
                )
                for k in range(self.n_prompts)
            ]
        self.n_prompts = len(self.episodes)
        self.vocab = TOY_VOCAB
        self.stop_id = self.vocab.index("</glue>")
        n_rot = len(LETTERS) if self.rotate_options else 1
        self.variants = [[rotate_options(ep, r) for r in range(n_rot)] for ep in self.episodes]
        self.client = ScriptedClient([v for vs in self.variants for v in vs])
        self.gts = {(p, r): v.ground_truth() for p, vs in enumerate(self.variants) for r, v in enumerate(vs)}
        self._cache: dict = {}

    def initial_logits(self, context_positions: np.ndarray) -> np.ndarray:
        """Template-following prior: each row favours the symbols allowed at its position."""
        V = len(self.vocab)
        out = np.zeros((len(context_positions), V))
        for r, pos in enumerate(context_positions):
            if pos < len(TOY_TEMPLATE):
                for sym in TOY_TEMPLATE[pos]:
                    out[r, self.vocab.index(sym)] = self.template_logit
        return out

    def draw(self, prompt: int, rng: np.random.Generator) -> tuple[int, int]:
        """Pick how the prompt is presented this time; returns a scoring key."""
        return prompt, int(rng.integers(len(self.variants[prompt])))

    def probe_key(self, prompt: int) -> tuple[int, int]:
        return prompt, 0

    def decode(self, token_ids: Sequence[int]) -> list[str]:
        return [self.vocab[int(i)] for i in token_ids]

    def score(self, key: tuple[int, int], token_ids: Sequence[int]) -> tuple[RewardVector, np.ndarray]:
        ck = (key, tuple(int(i) for i in token_ids))
        hit = self._cache.get(ck)
        if hit is None:
            toks = self.decode(token_ids)
            gt = self.gts[key]
            rv = score_rollout("".join(toks), gt, self.client, self.budget, self.fine_fps,
                               request_id=f"{gt.id}:fine", on_client_error="raise")
            hit = (rv, glue_token_mask(toks).mask)
            self._cache[ck] = hit
        return hit


def rotate_options(ep: SyntheticEpisode, shift: int) -> SyntheticEpisode:
    """Same episode with option texts moved ``shift`` letters along (cyclically)."""
    if shift == 0:
        return ep
    letters = sorted(ep.options)
    n = len(letters)
    options = {letters[(j + shift) % n]: ep.options[letters[j]] for j in range(n)}
    answer = letters[(letters.index(ep.answer) + shift) % n]
    return replace(ep, id=f"{ep.id}~{shift}", options=options, answer=answer)
