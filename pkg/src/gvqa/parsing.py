"""Parser for ``<think>/<answer>/<glue>`` responses and token-level glue masks."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    ConcatenationMismatch,
    DuplicateTag,
    FormatError,
    MalformedSpanList,
    MissingTag,
    UnknownAnswerLetter,
)
from .intervals import IntervalSet, normalize

TAGS = ("think", "answer", "glue")

_NUM = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_PAIR = rf"\(\s*({_NUM})\s*,\s*({_NUM})\s*\)"
_SPAN_LIST_RE = re.compile(rf"^\s*\[\s*(?:{_PAIR}(?:\s*,\s*{_PAIR})*)?\s*,?\s*\]\s*$")
_PAIR_RE = re.compile(_PAIR)
_TIME_RE = re.compile(r"<time>(.*?)</time>", re.DOTALL)
_TIME_POINT_RE = re.compile(rf"^\s*({_NUM})\s*s?\s*$")
_TIME_RANGE_RE = re.compile(
    rf"^\s*\(?\s*({_NUM})\s*s?\s*(?:-|–|,|to)\s*({_NUM})\s*s?\s*\)?\s*$"
)
_STRICT_RE = re.compile(
    r"^\s*<think>.*?</think>\s*<answer>.*?</answer>\s*<glue>.*?</glue>\s*$", re.DOTALL
)

TimeMark = Union[float, tuple[float, float]]


@dataclass(frozen=True)
class StructuredResponse:
    think_text: str
    answer_letter: str
    glue_spans: IntervalSet
    time_marks: tuple[TimeMark, ...] = ()
    raw_text: str = field(default="", compare=False)


@dataclass(frozen=True)
class TokenSpanMap:
    """Glue/non-glue classification of a tokenized response.

    ``glue_ranges`` are half-open token index ranges ``[start, stop)``.
    """

    glue_ranges: tuple[tuple[int, int], ...]
    total_len: int

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.total_len, dtype=bool)
        for a, b in self.glue_ranges:
            m[a:b] = True
        return m

    @property
    def n_glue(self) -> int:
        return sum(b - a for a, b in self.glue_ranges)


def _tag_region(text: str, tag: str) -> tuple[int, int]:
    """Return (content_start, content_end) of the unique ``<tag>...</tag>`` region."""
    open_t, close_t = f"<{tag}>", f"</{tag}>"
    n_open, n_close = text.count(open_t), text.count(close_t)
    if n_open == 0:
        raise MissingTag(f"missing {open_t}", open_t)
    if n_close == 0:
        raise MissingTag(f"missing {close_t}", close_t)
    if n_open > 1 or n_close > 1:
        raise DuplicateTag(f"{tag} tag appears more than once", open_t if n_open > 1 else close_t)
    a = text.index(open_t) + len(open_t)
    b = text.index(close_t)
    if b < a:
        raise MissingTag(f"{close_t} precedes {open_t}", text[b : a])
    return a, b


def parse_span_list(content: str) -> IntervalSet:
    """Parse a literal ``[(s1, e1), (s2, e2), ...]`` list into a normalized set."""
    if not _SPAN_LIST_RE.match(content):
        raise MalformedSpanList("glue content is not a list of (start, end) pairs", content)
    return normalize((float(s), float(e)) for s, e in _PAIR_RE.findall(content))


def parse_time_marks(think: str) -> tuple[TimeMark, ...]:
    if think.count("<time>") != think.count("</time>"):
        raise MissingTag("unbalanced <time> tags", think)
    marks: list[TimeMark] = []
    for body in _TIME_RE.findall(think):
        if m := _TIME_POINT_RE.match(body):
            marks.append(float(m.group(1)))
        elif m := _TIME_RANGE_RE.match(body):
            marks.append((float(m.group(1)), float(m.group(2))))
        else:
            raise MalformedSpanList("unreadable <time> mark", body)
    return tuple(marks)


def parse_response(text: str, options: Sequence[str]) -> StructuredResponse:
    """Parse a full rollout; raise a ``FormatError`` subclass on any violation.

    Tag order and stray text outside tags are not checked here; see
    :func:`format_reward` for the strict template match.
    """
    regions = {tag: _tag_region(text, tag) for tag in TAGS}
    think = text[slice(*regions["think"])]
    answer = text[slice(*regions["answer"])].strip()
    if answer not in set(options):
        raise UnknownAnswerLetter(f"answer {answer!r} is not one of {list(options)}", answer)
    glue = parse_span_list(text[slice(*regions["glue"])])
    return StructuredResponse(
        think_text=think,
        answer_letter=answer,
        glue_spans=glue,
        time_marks=parse_time_marks(think),
        raw_text=text,
    )


def try_parse(text: str, options: Sequence[str]) -> Optional[StructuredResponse]:
    try:
        return parse_response(text, options)
    except FormatError:
        return None


def format_reward(text: str, options: Sequence[str]) -> int:
    if not _STRICT_RE.match(text or ""):
        return 0
    return 0 if try_parse(text, options) is None else 1


def lenient_extract(text: str, options: Sequence[str]) -> StructuredResponse:
    """Best-effort extraction used when the strict parse fails.

    Takes the first ``<answer>`` body that is a known letter and every
    ``(s, e)`` pair found inside the first ``<glue>`` region (closed or not).
    Missing pieces come back empty.
    """
    answer = ""
    for body in re.findall(r"<answer>(.*?)</answer>", text, re.DOTALL):
        if body.strip() in set(options):
            answer = body.strip()
            break
    glue = IntervalSet()
    start = text.find("<glue>")
    if start >= 0:
        stop = text.find("</glue>", start)
        body = text[start + len("<glue>") : stop if stop >= 0 else len(text)]
        try:
            glue = normalize((float(s), float(e)) for s, e in _PAIR_RE.findall(body))
        except ValueError:
            glue = IntervalSet()
    think = ""
    if (m := re.search(r"<think>(.*?)</think>", text, re.DOTALL)) is not None:
        think = m.group(1)
    return StructuredResponse(think, answer, glue, (), text)


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_response(resp: StructuredResponse) -> str:
    spans = ", ".join(f"({_fmt(s)}, {_fmt(e)})" for s, e in resp.glue_spans)
    return (
        f"<think>{resp.think_text}</think>"
        f"<answer>{resp.answer_letter}</answer>"
        f"<glue>[{spans}]</glue>"
    )


def glue_char_regions(text: str) -> list[tuple[int, int]]:
    """Character ranges ``[a, b)`` of every ``<glue>...</glue>`` region, tags included."""
    out = []
    pos = 0
    while (a := text.find("<glue>", pos)) >= 0:
        close = text.find("</glue>", a)
        b = len(text) if close < 0 else close + len("</glue>")
        out.append((a, b))
        pos = b
    return out


def glue_token_mask(token_texts: Sequence[str], text: Optional[str] = None) -> TokenSpanMap:
    joined = "".join(token_texts)
    if text is not None and joined != text:
        raise ConcatenationMismatch("tokens do not concatenate to the response text")
    n = len(token_texts)
    ends = np.cumsum([len(t) for t in token_texts], dtype=np.int64)
    starts = ends - np.array([len(t) for t in token_texts], dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    for a, b in glue_char_regions(joined):
        # a token [s, e) shares a character with [a, b) iff s < b and e > a
        mask |= (starts < b) & (ends > a)
    ranges = []
    i = 0
    while i < n:
        if mask[i]:
            j = i
            while j < n and mask[j]:
                j += 1
            ranges.append((i, j))
            i = j
        else:
            i += 1
    return TokenSpanMap(tuple(ranges), n)
