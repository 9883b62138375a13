# %% [markdown]
# # Scoring predictions and choosing training data
#
# Part one evaluates grounded answers with overlap- and answer-based metrics.
# Part two keeps only the training questions whose sampled groups disagree.

# %%
from gvqa.datafilter import FilterRecord, filter_examples
from gvqa.intervals import normalize
from gvqa.metrics import PredictionRecord, evaluate
from gvqa.rewards import GroundTruth

options = {"A": "a", "B": "b", "C": "c", "D": "d"}
gts = [GroundTruth(str(i), "q", options, "A", normalize([(0, 10)]), 60.0) for i in range(4)]
preds = [
    PredictionRecord("0", "A", normalize([(0, 6)])),
    PredictionRecord("1", "A", normalize([(0, 2)])),
    PredictionRecord("2", "C", normalize([(1, 9)])),
    PredictionRecord("3", "A", normalize([])),
]
report = evaluate(preds, gts)
print(report.table())

# %%
print(report.items_csv())

# %% [markdown]
# A question is worth training on when some rollouts ground much better than
# the group average and the group does not already answer it perfectly.

# %%
records = [
    FilterRecord("steady", (0.4, 0.4, 0.4, 0.4), (True, False, True, False)),
    FilterRecord("spread", (0.9, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3), (True,) * 6 + (False,) * 2),
    FilterRecord("solved", (0.9, 0.3, 0.3, 0.3), (True,) * 4),
]
for d in filter_examples(records):
    print(f"{d.id:>7}: spread {d.delta:.3f}, all correct {d.all_correct}, kept {d.kept}")
