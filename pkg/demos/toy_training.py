# %% [markdown]
# # Training a toy grounder
#
# A tabular policy writes `<think></think><answer>X</answer><glue>[(s,e)]</glue>`
# one symbol at a time for 9-second synthetic clips. Rewards go through the
# same scorer as real rollouts, including the zoomed second pass. We train it
# with group-relative updates under both credit schemes and watch grounding IoU.

# %%
import argparse

import numpy as np

from gvqa.grpo import TOY_LEARNING_RATE, OptimizerConfig, train_loop
from gvqa.simenv import ToyGroundingTask

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=1000)
parser.add_argument("--seeds", type=int, default=3)
args = parser.parse_args()

# %%
print(f"{'seed':>4} {'mode':>9} " + " ".join(f"{'w' + str(k):>6}" for k in range(5)))
for seed in range(args.seeds):
    for mode in ("tokenadv", "sum"):
        cfg = OptimizerConfig(steps=args.steps, learning_rate=TOY_LEARNING_RATE, seed=seed, mode=mode)
        iou = train_loop(ToyGroundingTask(seed=seed), cfg).column("mean_iou")
        windows = np.array_split(iou, 5)
        print(f"{seed:>4} {mode:>9} " + " ".join(f"{w.mean():6.3f}" for w in windows))

# %% [markdown]
# Both schemes learn to ground. Which one ends higher varies from seed to seed
# on this task; see the README for how often each wins.
