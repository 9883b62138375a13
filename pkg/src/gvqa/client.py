"""Policy-client wire protocol: one JSON document per request and per response.

Request::

    {"id": str, "question": str, "options": {letter: text}, "video_ref": str,
     "frame_spec": {"spans_s": [[s, e], ...], "fps": float, "tokens_per_frame": int,
                    "frame_times_s": [...]},        # frame_times_s optional
     "template": "coarse" | "fine"}

Response::

    {"id": str, "text": str, "answer_token_logprob": float}   # logprob optional
"""

from __future__ import annotations

import json
import math
import socket
import urllib.error
import urllib.request
from typing import Optional, Protocol, Sequence

from .errors import ClientProtocolError, ClientTimeout
from .planner import ZoomPlan

TEMPLATES = ("coarse", "fine")


class PolicyClient(Protocol):
    def query(self, request: dict) -> dict: ...


def build_request(
    request_id: str,
    question: str,
    options: dict,
    video_ref: str,
    spans: Sequence[Sequence[float]],
    fps: float,
    plan: ZoomPlan,
    template: str,
) -> dict:
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}")
    return {
        "id": request_id,
        "question": question,
        "options": dict(options),
        "video_ref": video_ref,
        "frame_spec": {
            "spans_s": [[float(s), float(e)] for s, e in spans],
            "fps": float(fps),
            "tokens_per_frame": int(plan.tokens_per_frame),
            "frame_times_s": list(plan.frame_times),
        },
        "template": template,
    }


def validate_request(req: dict) -> None:
    try:
        ok = (
            isinstance(req["id"], str)
            and isinstance(req["question"], str)
            and isinstance(req["options"], dict)
            and isinstance(req["video_ref"], str)
            and req["template"] in TEMPLATES
        )
        fs = req["frame_spec"]
        ok = ok and all(len(p) == 2 for p in fs["spans_s"])
        ok = ok and float(fs["fps"]) > 0 and int(fs["tokens_per_frame"]) >= 0
    except (KeyError, TypeError, ValueError) as exc:
        raise ClientProtocolError(f"malformed request: {exc}") from exc
    if not ok:
        raise ClientProtocolError("malformed request")


def validate_response(resp: object, request_id: str) -> dict:
    if not isinstance(resp, dict) or not isinstance(resp.get("text"), str):
        raise ClientProtocolError("response must be an object with a string 'text'")
    if resp.get("id") != request_id:
        raise ClientProtocolError(f"response id {resp.get('id')!r} != request id {request_id!r}")
    lp = resp.get("answer_token_logprob")
    if lp is not None and (not isinstance(lp, (int, float)) or lp > 1e-12 or math.isnan(lp)):
        raise ClientProtocolError(f"answer_token_logprob must be a log-probability, got {lp!r}")
    return resp


def answer_confidence(resp: dict) -> Optional[float]:
    lp = resp.get("answer_token_logprob")
    return None if lp is None else min(1.0, math.exp(lp))


class HttpPolicyClient:
    """POSTs each request as JSON to ``url`` and reads one JSON document back."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def query(self, request: dict) -> dict:
        body = json.dumps(request).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as r:
                payload = r.read()
        except (socket.timeout, TimeoutError) as exc:
            raise ClientTimeout(str(exc)) from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise ClientTimeout(str(exc)) from exc
            raise ClientProtocolError(f"endpoint unreachable: {exc}") from exc
        try:
            resp = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ClientProtocolError(f"endpoint returned invalid JSON: {exc}") from exc
        return validate_response(resp, request["id"])
