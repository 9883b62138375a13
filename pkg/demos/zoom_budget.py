# %% [markdown]
# # Looking twice
#
# A fixed visual-token budget spread over a whole video leaves each frame at
# low resolution. A second pass over only the grounded spans spends the same
# budget on far fewer frames. This demo builds a synthetic episode in which a
# detail is readable only at the higher resolution.

# %%
from gvqa.inference import VideoQuery, coarse_to_fine
from gvqa.planner import BudgetConfig, coarse_plan, fine_plan
from gvqa.simenv import ScriptedClient, generate_episode

budget = BudgetConfig(total_tokens=8192, min_tokens=16, max_tokens=768, fps=1.0)
ep = generate_episode(seed=7, budget=budget)
print(f"video: {ep.duration:.0f} s, question: {ep.question}")
print(f"target event: {ep.target_event.span}, detail needs >= {ep.detail_threshold} tokens/frame")

# %%
coarse = coarse_plan(ep.duration, budget)
fine = fine_plan(ep.gt_spans, budget)
print(f"whole video : {coarse.n_frames:4d} frames x {coarse.tokens_per_frame:3d} tokens")
print(f"zoomed span : {fine.n_frames:4d} frames x {fine.tokens_per_frame:3d} tokens")

# %% [markdown]
# Ask the scripted policy: first over the whole video, then over what it grounded.

# %%
client = ScriptedClient([ep])
result = coarse_to_fine(client, VideoQuery(ep.id, ep.question, ep.options, ep.id, ep.duration), budget)
print(f"coarse answer {result.coarse_answer} ({ep.options[result.coarse_answer]})")
print(f"grounded spans {result.spans.to_list()}")
print(f"zoomed answer {result.answer} ({ep.options[result.answer]}); correct is {ep.answer}")
