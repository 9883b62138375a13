# %% [markdown]
# # Hour-long videos in windows
#
# Very long inputs are cut into fixed windows. Each window is asked the
# question, the spans from the most confident windows are merged, and one
# zoomed pass over that union produces the answer.

# %%
from gvqa.inference import VideoQuery, divide_and_conquer
from gvqa.simenv import ScriptedClient, generate_episode

ep = generate_episode(seed=3, duration_range=(3000, 3600), event_frac=(0.005, 0.01))
query = VideoQuery(ep.id, ep.question, ep.options, ep.id, ep.duration)
print(f"{ep.duration / 60:.1f} minute video, event at {ep.target_event.span}")

# %%
for k in (4, 1):
    client = ScriptedClient([ep])
    res = divide_and_conquer(client, query, window_frames=256, k=k, max_workers=4)
    top = sorted(res.windows, key=lambda w: -w.confidence)[:3]
    print(f"\nk={k}: {len(res.windows)} windows, {client.calls} policy calls")
    for w in top:
        print(f"  window {w.window.start:6.0f}-{w.window.end:6.0f}s  confidence {w.confidence:.2f}")
    print(f"  merged spans {[[round(a), round(b)] for a, b in res.spans]}")
    print(f"  answer {res.answer} (correct {ep.answer}); zoom {res.fine.tokens_per_frame} tokens/frame")

# %% [markdown]
# Merging four windows keeps the true event in view but dilutes the zoomed
# resolution with spans from windows that only guessed; on this episode the
# narrower union is the one that reads the detail.
