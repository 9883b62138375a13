"""Group-relative policy optimization on a tabular autoregressive toy policy.

The policy is a softmax table indexed by (prompt, position, previous
``context_order`` symbols). It is small enough that the objective's analytic
gradient can be checked against finite differences, and fast enough to train
for thousands of steps on one core.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .advantages import DEFAULT_EPS, group_advantages, token_advantages
from .errors import DomainError

log = logging.getLogger(__name__)

KLEstimator = Literal["k3", "exact"]


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class ToyPolicy:
    """Categorical next-symbol policy with one logit row per context."""

    def __init__(
        self,
        vocab: Sequence[str],
        n_prompts: int = 1,
        max_len: int = 16,
        context_order: int = 1,
        params: Optional[np.ndarray] = None,
    ):
        self.vocab = tuple(vocab)
        self.index = {s: i for i, s in enumerate(self.vocab)}
        self.n_prompts = n_prompts
        self.max_len = max_len
        self.context_order = context_order
        V = len(self.vocab)
        self._radix = (V + 1) ** context_order  # +1 for the start-of-response pad
        self.n_contexts = n_prompts * max_len * self._radix
        if params is None:
            params = np.zeros((self.n_contexts, V))
        self.params = np.asarray(params, dtype=float).reshape(self.n_contexts, V)

    @property
    def V(self) -> int:
        return len(self.vocab)

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.vocab, self.n_prompts, self.max_len, self.context_order, self.params.copy())

    def with_params(self, flat: np.ndarray) -> "ToyPolicy":
        return ToyPolicy(self.vocab, self.n_prompts, self.max_len, self.context_order, flat)

    def encode(self, tokens: Sequence) -> np.ndarray:
        ids = []
        for t in tokens:
            if isinstance(t, (int, np.integer)):
                if not 0 <= t < self.V:
                    raise DomainError(f"token id {t} outside vocabulary")
                ids.append(int(t))
            elif t in self.index:
                ids.append(self.index[t])
            else:
                raise DomainError(f"out-of-vocabulary token {t!r}")
        return np.asarray(ids, dtype=np.int64)

    def context_positions(self) -> np.ndarray:
        """Position index of every context row."""
        return (np.arange(self.n_contexts) // self._radix) % self.max_len

    def contexts(self, prompt: int, token_ids: np.ndarray) -> np.ndarray:
        """Row index of the context in which each token was emitted."""
        n = len(token_ids)
        if n > self.max_len:
            raise DomainError(f"response of {n} tokens exceeds max_len {self.max_len}")
        if not 0 <= prompt < self.n_prompts:
            raise DomainError(f"prompt {prompt} outside [0, {self.n_prompts})")
        pad = self.V
        hist = np.concatenate([np.full(self.context_order, pad), token_ids]).astype(np.int64)
        code = np.zeros(n, dtype=np.int64)
        for j in range(self.context_order):
            code = code * (self.V + 1) + hist[j : j + n]
        return (prompt * self.max_len + np.arange(n)) * self._radix + code


def log_prob(policy: ToyPolicy, prompt: int, response_tokens: Sequence) -> np.ndarray:
    ids = policy.encode(response_tokens)
    rows = log_softmax(policy.params[policy.contexts(prompt, ids)])
    return rows[np.arange(len(ids)), ids]


def sample(
    policy: ToyPolicy,
    prompts: np.ndarray,
    uniforms: np.ndarray,
    stop_id: Optional[int] = None,
) -> list[np.ndarray]:
    """Draw responses by inverse-CDF sampling; ``uniforms`` has shape (B, max_len).

    A response ends after ``stop_id`` or at ``max_len`` symbols.
    """
    prompts = np.asarray(prompts, dtype=np.int64)
    B, T = len(prompts), policy.max_len
    V = policy.V
    toks = np.zeros((B, T), dtype=np.int64)
    code = np.full(B, 0, dtype=np.int64)
    pad_code = 0
    for _ in range(policy.context_order):
        pad_code = pad_code * (V + 1) + V
    code[:] = pad_code
    mod = policy._radix
    for t in range(T):
        rows = (prompts * T + t) * mod + code
        z = policy.params[rows]
        p = np.exp(z - z.max(axis=1, keepdims=True))
        cdf = np.cumsum(p, axis=1)
        cdf /= cdf[:, -1:]
        choice = (cdf < uniforms[:, t : t + 1]).sum(axis=1)
        toks[:, t] = np.minimum(choice, V - 1)
        code = (code * (V + 1) + toks[:, t]) % mod
    out = []
    for b in range(B):
        seq = toks[b]
        if stop_id is not None:
            hits = np.flatnonzero(seq == stop_id)
            if hits.size:
                seq = seq[: hits[0] + 1]
        out.append(seq.copy())
    return out


@dataclass(frozen=True)
class TokenRollout:
    """One sampled response with its per-token advantages."""

    prompt: int
    token_ids: np.ndarray
    advantages: np.ndarray


@dataclass
class _Flat:
    ctx: np.ndarray
    tok: np.ndarray
    adv: np.ndarray
    weight: np.ndarray


def _flatten(policy: ToyPolicy, groups: Sequence[Sequence[TokenRollout]]) -> _Flat:
    ctx, tok, adv, w = [], [], [], []
    n_groups = len(groups)
    if n_groups == 0:
        raise DomainError("empty batch")
    for group in groups:
        G = len(group)
        for ro in group:
            ids = np.asarray(ro.token_ids, dtype=np.int64)
            n = len(ids)
            if n == 0:
                continue
            if len(ro.advantages) != n:
                raise DomainError(f"{len(ro.advantages)} advantages for {n} tokens")
            ctx.append(policy.contexts(ro.prompt, ids))
            tok.append(ids)
            adv.append(np.asarray(ro.advantages, dtype=float))
            w.append(np.full(n, 1.0 / (n_groups * G * n)))
    return _Flat(np.concatenate(ctx), np.concatenate(tok), np.concatenate(adv), np.concatenate(w))


def _terms(policy, old_policy, ref_policy, flat: _Flat, beta, kl_estimator, clip):
    idx = np.arange(len(flat.tok))
    lp_rows = log_softmax(policy.params[flat.ctx])
    lp = lp_rows[idx, flat.tok]
    lp_old = log_softmax(old_policy.params[flat.ctx])[idx, flat.tok]
    ref_rows = log_softmax(ref_policy.params[flat.ctx])
    lp_ref = ref_rows[idx, flat.tok]
    ratio = np.exp(lp - lp_old)
    surr = ratio * flat.adv
    active = np.ones_like(ratio, dtype=bool)
    if clip is not None:
        clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * flat.adv
        active = (surr <= clipped) | ((ratio >= 1.0 - clip) & (ratio <= 1.0 + clip))
        surr = np.minimum(surr, clipped)
    if kl_estimator == "k3":
        log_r = lp_ref - lp
        r = np.exp(log_r)
        kl = r - log_r - 1.0
    elif kl_estimator == "exact":
        p_rows = np.exp(lp_rows)
        diff = lp_rows - ref_rows
        kl = (p_rows * diff).sum(axis=1)
    else:
        raise DomainError(f"unknown KL estimator {kl_estimator!r}")
    return locals()


def grpo_objective(
    policy: ToyPolicy,
    old_policy: ToyPolicy,
    ref_policy: ToyPolicy,
    groups: Sequence[Sequence[TokenRollout]],
    beta: float = 0.04,
    kl_estimator: KLEstimator = "k3",
    clip: Optional[float] = None,
) -> float:
    """Mean over groups of (1/G) sum_i (1/|o_i|) sum_t [ratio * A - beta * KL]."""
    flat = _flatten(policy, groups)
    t = _terms(policy, old_policy, ref_policy, flat, beta, kl_estimator, clip)
    return float(np.sum(flat.weight * (t["surr"] - beta * t["kl"])))


def grpo_gradient(
    policy: ToyPolicy,
    old_policy: ToyPolicy,
    ref_policy: ToyPolicy,
    groups: Sequence[Sequence[TokenRollout]],
    beta: float = 0.04,
    kl_estimator: KLEstimator = "k3",
    clip: Optional[float] = None,
) -> np.ndarray:
    """Gradient of :func:`grpo_objective` w.r.t. ``policy.params`` (old and ref held fixed)."""
    flat = _flatten(policy, groups)
    t = _terms(policy, old_policy, ref_policy, flat, beta, kl_estimator, clip)
    p_rows = np.exp(t["lp_rows"])
    # d log pi(tok) / d logits = onehot(tok) - p
    dlogp = -p_rows
    dlogp[t["idx"], flat.tok] += 1.0
    coef = flat.weight * np.where(t["active"], t["ratio"] * flat.adv, 0.0)
    rows = coef[:, None] * dlogp
    if kl_estimator == "k3":
        # d/dθ (r - log r - 1) = (1 - r) d log pi
        rows -= (beta * flat.weight * (1.0 - t["r"]))[:, None] * dlogp
    else:
        # d KL / d logits_j = p_j (log p_j - log ref_j - KL)
        rows -= (beta * flat.weight)[:, None] * p_rows * (t["diff"] - t["kl"][:, None])
    grad = np.zeros_like(policy.params)
    np.add.at(grad, flat.ctx, rows)
    return grad


# --- training -------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    beta: float = 0.04
    group_size: int = 8
    learning_rate: float = 0.05
    steps: int = 1000
    seed: int = 0
    mode: str = "tokenadv"
    kl_estimator: KLEstimator = "k3"
    clip: Optional[float] = None
    eps: float = DEFAULT_EPS
    probe_size: int = 8

    def __post_init__(self):
        if self.beta < 0:
            raise DomainError("beta must be >= 0")
        if self.group_size < 2:
            raise DomainError("group_size must be >= 2")
        if self.steps < 0:
            raise DomainError("steps must be >= 0")
        if self.mode not in ("tokenadv", "sum"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.kl_estimator not in ("k3", "exact"):
            raise DomainError(f"unknown KL estimator {self.kl_estimator!r}")


# The toy's logits live on an O(1) scale and per-step advantages average over
# ~|o| tokens, so the library default step barely moves them in 1000 steps.
TOY_LEARNING_RATE = 5.0

TRACE_FIELDS = ("step", "mean_iou", "mean_acc", "mean_zoom", "mean_format", "objective", "grad_norm")


@dataclass
class TrainingTrace:
    records: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    policy: Optional[ToyPolicy] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.records], dtype=float)

    def to_jsonl(self) -> str:
        return "".join(json.dumps({k: r[k] for k in TRACE_FIELDS}) + "\n" for r in self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in self.records:
            w.writerow(["" if r[k] is None else r[k] for k in TRACE_FIELDS])
        return buf.getvalue()


def make_policy(env, context_order: int = 1) -> ToyPolicy:
    pol = ToyPolicy(env.vocab, env.n_prompts, env.max_len, context_order)
    pol.params = env.initial_logits(pol.context_positions())
    return pol


def build_rollouts(env, prompt: int, key, seqs: Sequence[np.ndarray], mode: str, eps: float):
    scored = [env.score(key, s) for s in seqs]
    rewards = [rv for rv, _ in scored]
    ga = group_advantages(rewards, mode, eps)
    rollouts = [
        TokenRollout(prompt, s, token_advantages(ga, mask, i, len(s)))
        for i, (s, (_, mask)) in enumerate(zip(seqs, scored))
    ]
    return rollouts, rewards


def _probe(env, policy: ToyPolicy, uniforms: np.ndarray) -> dict:
    P, E, T = uniforms.shape
    prompts = np.repeat(np.arange(P), E)
    seqs = sample(policy, prompts, uniforms.reshape(P * E, T), env.stop_id)
    arr = np.stack([env.score(env.probe_key(int(p)), s)[0].as_array() for p, s in zip(prompts, seqs)])
    m = arr.mean(axis=0)
    return {"mean_format": float(m[0]), "mean_acc": float(m[1]),
            "mean_iou": float(m[2]), "mean_zoom": float(m[3])}


def train_loop(env, cfg: OptimizerConfig) -> TrainingTrace:
    """Run GRPO on ``env`` (see :class:`gvqa.simenv.ToyGroundingTask`).

    Each step samples one prompt, draws ``group_size`` responses from the
    current policy (which is also the old policy for the ratio), scores them,
    forms advantages in ``cfg.mode`` and takes one gradient-ascent step. The
    reference policy is the initial policy.

    Reward columns of record ``k`` are measured on a fixed probe (the same
    uniforms every step, ``probe_size`` per prompt) after update ``k``, so
    they depend only on the parameters. ``objective`` and ``grad_norm``
    belong to update ``k`` and are ``None`` for the initial record.
    """
    rng = np.random.default_rng(cfg.seed)
    probe_u = np.random.default_rng([cfg.seed, 7919]).random((env.n_prompts, cfg.probe_size, env.max_len))
    policy = make_policy(env)
    ref = policy.copy()
    trace = TrainingTrace(config=asdict(cfg))
    trace.records.append({"step": 0, **_probe(env, policy, probe_u), "objective": None, "grad_norm": None})
    for step in range(1, cfg.steps + 1):
        prompt = int(rng.integers(env.n_prompts))
        key = env.draw(prompt, rng)
        u = rng.random((cfg.group_size, env.max_len))
        seqs = sample(policy, np.full(cfg.group_size, prompt), u, env.stop_id)
        rollouts, _ = build_rollouts(env, prompt, key, seqs, cfg.mode, cfg.eps)
        old = policy.copy()
        groups = [rollouts]
        obj = grpo_objective(policy, old, ref, groups, cfg.beta, cfg.kl_estimator, cfg.clip)
        grad = grpo_gradient(policy, old, ref, groups, cfg.beta, cfg.kl_estimator, cfg.clip)
        policy.params = policy.params + cfg.learning_rate * grad
        trace.records.append({
            "step": step,
            **_probe(env, policy, probe_u),
            "objective": obj,
            "grad_norm": float(np.linalg.norm(grad)),
        })
    trace.policy = policy
    return trace
