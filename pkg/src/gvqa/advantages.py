"""Group-relative advantages: per-reward (token-selective) and summed baselines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Mapping, Sequence, Union

import numpy as np

from .errors import DomainError
from .parsing import TokenSpanMap
from .rewards import REWARD_KINDS, RewardVector

DEFAULT_EPS = 1e-6

Mode = Literal["tokenadv", "sum"]

# reward kinds routed to glue tokens vs. every other token
GLUE_KINDS = ("format", "zoom", "iou")
OTHER_KINDS = ("format", "zoom", "acc")


@dataclass(frozen=True)
class GroupAdvantages:
    per_reward: Mapping[str, np.ndarray]
    mode: Mode = "tokenadv"

    @property
    def group_size(self) -> int:
        return len(next(iter(self.per_reward.values())))


def group_normalize(values: Sequence[float], eps: float = DEFAULT_EPS) -> np.ndarray:
    """(r - mean) / std with the population std; all zeros when std < eps."""
    r = np.asarray(values, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise DomainError(f"group statistics need G >= 2 values, got shape {r.shape}")
    std = r.std()
    if std < eps:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def _reward_table(rewards) -> dict[str, np.ndarray]:
    if isinstance(rewards, Mapping):
        return {k: np.asarray(v, dtype=float) for k, v in rewards.items()}
    rows = list(rewards)
    if rows and isinstance(rows[0], RewardVector):
        arr = np.stack([r.as_array() for r in rows])
        return {k: arr[:, j] for j, k in enumerate(REWARD_KINDS)}
    raise TypeError("rewards must be a mapping kind -> values or a sequence of RewardVector")


def normalize_per_reward(
    rewards: Union[Mapping[str, Sequence[float]], Sequence[RewardVector]],
    eps: float = DEFAULT_EPS,
) -> GroupAdvantages:
    table = _reward_table(rewards)
    return GroupAdvantages({k: group_normalize(v, eps) for k, v in table.items()}, "tokenadv")


def summed_advantage(
    rewards: Union[Mapping[str, Sequence[float]], Sequence[RewardVector]],
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    table = _reward_table(rewards)
    total = np.sum(np.stack(list(table.values())), axis=0)
    return group_normalize(total, eps)


def group_advantages(rewards, mode: Mode, eps: float = DEFAULT_EPS) -> GroupAdvantages:
    if mode == "tokenadv":
        return normalize_per_reward(rewards, eps)
    if mode == "sum":
        return GroupAdvantages({"sum": summed_advantage(rewards, eps)}, "sum")
    raise DomainError(f"unknown advantage mode {mode!r}")


def _mean_of(ga: GroupAdvantages, kinds: Sequence[str], i: int) -> float:
    return float(np.mean([ga.per_reward[k][i] if k in ga.per_reward else 0.0 for k in kinds]))


def token_advantages(
    ga: GroupAdvantages,
    mask: Union[TokenSpanMap, np.ndarray],
    rollout_index: int,
    n_tokens: int | None = None,
) -> np.ndarray:
    """Per-token advantages for one rollout.

    Reward kinds absent from ``ga`` contribute 0 to the token means, which is
    what a zero-variance reward would give anyway.
    """
    m = mask.mask if isinstance(mask, TokenSpanMap) else np.asarray(mask, dtype=bool)
    if n_tokens is not None and n_tokens != m.size:
        raise DomainError(f"mask covers {m.size} tokens, rollout has {n_tokens}")
    if not 0 <= rollout_index < ga.group_size:
        raise DomainError(f"rollout index {rollout_index} outside group of {ga.group_size}")
    if ga.mode == "sum":
        return np.full(m.size, float(ga.per_reward["sum"][rollout_index]))
    glue = _mean_of(ga, GLUE_KINDS, rollout_index)
    other = _mean_of(ga, OTHER_KINDS, rollout_index)
    return np.where(m, glue, other)
