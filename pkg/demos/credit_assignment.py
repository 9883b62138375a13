# %% [markdown]
# # Who gets the credit?
#
# Five rollouts answer the same question. Each one names a time span and an
# answer letter. Some ground well and answer badly, some the reverse. This demo
# scores them and compares two ways of turning rewards into per-token signals.

# %%
import numpy as np

from gvqa.advantages import group_advantages, token_advantages
from gvqa.parsing import glue_token_mask
from gvqa.rewards import GroundTruth, Rollout, RolloutGroup, score_group
from gvqa.intervals import normalize

gt = GroundTruth("demo", "What is written on the sign?", {"A": "EXIT", "B": "STOP", "C": "OPEN", "D": "SALE"},
                 "A", normalize([(0, 10)]), duration=100.0)
spans = [(50, 60), (0, 5), (0, 4), (0, 8), (0, 2)]
letters = "ABABA"
group = RolloutGroup("demo", tuple(
    Rollout(f"<think>checking</think><answer>{L}</answer><glue>[({s}, {e})]</glue>")
    for (s, e), L in zip(spans, letters)
))
rewards = score_group(group, gt)
for i, r in enumerate(rewards):
    print(f"rollout {i}: answer={letters[i]} span={spans[i]} -> iou={r.iou:.2f} acc={r.acc}")

# %% [markdown]
# Summed rewards get one normalized value per rollout. Rollout 3 has the best
# grounding in the group but a wrong answer, so every one of its tokens,
# including the span it got right, is pushed down.

# %%
summed = group_advantages(rewards, "sum").per_reward["sum"]
per_kind = group_advantages(rewards, "tokenadv").per_reward
print("summed advantage :", np.round(summed, 2))
print("IoU advantage    :", np.round(per_kind["iou"], 2))
print("answer advantage :", np.round(per_kind["acc"], 2))

# %% [markdown]
# With token-level credit the span tokens follow grounding quality and the
# remaining tokens follow answer correctness.

# %%
tokens = ["<think>", "checking", "</think>", "<answer>", "B", "</answer>", "<glue>", "[(0, 8)]", "</glue>"]
mask = glue_token_mask(tokens)
tok = token_advantages(group_advantages(rewards, "tokenadv"), mask, 3)
flat = token_advantages(group_advantages(rewards, "sum"), mask, 3)
for t, a, b in zip(tokens, tok, flat):
    print(f"{t:>10}  token-level {a:+.2f}   summed {b:+.2f}")
