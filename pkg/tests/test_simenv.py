import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvqa.advantages import group_advantages
from gvqa.client import build_request
from gvqa.errors import ClientProtocolError, DomainError
from gvqa.intervals import iou, normalize
from gvqa.parsing import format_reward, parse_response
from gvqa.planner import BudgetConfig, coarse_plan, fine_plan
from gvqa.rewards import RewardVector, score_group
from gvqa.simenv import (
    ScriptedClient, ScriptedClientConfig, SyntheticEpisode, ToyGroundingTask, generate_episode,
    load_episodes, rotate_options, save_episodes, scripted_answer, scripted_rollout_group, span_variant,
    tokenize,
)

CFG = BudgetConfig()


def check_invariants(ep: SyntheticEpisode):
    spans = [e.span for e in ep.events]
    assert all(0 <= s.start < s.end <= ep.duration for s in spans)
    assert all(a.end <= b.start for a, b in zip(spans, spans[1:]))
    assert ep.answer in ep.options and ep.options[ep.answer] == ep.target_event.detail
    assert len(set(ep.options.values())) == len(ep.options)
    coarse_v = coarse_plan(ep.duration, CFG).tokens_per_frame
    fine_v = fine_plan(ep.gt_spans, CFG).tokens_per_frame
    assert coarse_v < ep.detail_threshold <= fine_v


def test_generation_is_deterministic():
    assert generate_episode(seed=11) == generate_episode(seed=11)
    assert generate_episode(seed=11) != generate_episode(seed=12)


def test_single_event_episode():
    ep = generate_episode(seed=2, n_events=1)
    assert ep.gt_spans.spans == ((ep.events[0].span.start, ep.events[0].span.end),)


def test_thousand_episodes_satisfy_invariants():
    for seed in range(1000):
        check_invariants(generate_episode(seed=seed))


def test_infeasible_packing_rejected():
    with pytest.raises(DomainError):
        generate_episode(seed=0, n_events=5, event_frac=(0.3, 0.3))
    with pytest.raises(DomainError):
        generate_episode(seed=0, n_events=0)


def test_episode_jsonl_roundtrip():
    eps = [generate_episode(seed=s) for s in range(5)]
    assert load_episodes(save_episodes(eps)) == eps
    d = eps[0].to_json()
    assert {"id", "duration_s", "question", "options", "answer", "gt_spans_s", "events", "detail_threshold"} <= set(d)
    del d["target"]
    assert SyntheticEpisode.from_json(json.loads(json.dumps(d))) == eps[0]


def _spec(ep, spans, v, fps=1.0):
    plan = fine_plan(normalize(spans), BudgetConfig(max_tokens=max(v, 16), min_tokens=min(16, v) or 1), fps)
    return {"spans_s": [list(s) for s in spans], "fps": fps, "tokens_per_frame": v, "frame_times_s": list(plan.frame_times)}


def test_scripted_oracle_semantics():
    ep = generate_episode(seed=5)
    s, e = ep.target_event.span.start, ep.target_event.span.end
    letter = lambda spec: parse_response(scripted_answer(ep, spec), list(ep.options)).answer_letter
    assert letter(_spec(ep, [(s, e)], ep.detail_threshold)) == ep.answer
    assert letter(_spec(ep, [(s, e)], ep.detail_threshold - 1)) != ep.answer
    far = span_variant(ep, "disjoint")
    assert letter(_spec(ep, far, 768)) != ep.answer
    cplan = coarse_plan(ep.duration, CFG)
    coarse_spec = {"spans_s": [[0, ep.duration]], "fps": 1.0, "tokens_per_frame": cplan.tokens_per_frame,
                   "frame_times_s": list(cplan.frame_times)}
    assert letter(coarse_spec) != ep.answer


def test_scripted_client_confidence_and_errors():
    ep = generate_episode(seed=5)
    client = ScriptedClient([ep])
    plan = fine_plan(ep.gt_spans, CFG)
    req = build_request("r1", ep.question, ep.options, ep.id, ep.gt_spans.to_list(), 1.0, plan, "fine")
    out = client.query(req)
    assert out["id"] == "r1" and np.exp(out["answer_token_logprob"]) == pytest.approx(0.9)
    assert "<glue>" not in out["text"]
    with pytest.raises(ClientProtocolError):
        client.query({**req, "video_ref": "missing"})
    with pytest.raises(ClientProtocolError):
        client.query({**req, "template": "medium"})


def test_noisy_client_is_seeded():
    ep = generate_episode(seed=5)
    plan = fine_plan(ep.gt_spans, CFG)
    answers = []
    for k in range(40):
        req = build_request(f"r{k}", ep.question, ep.options, ep.id, ep.gt_spans.to_list(), 1.0, plan, "fine")
        a = ScriptedClient([ep], ScriptedClientConfig("noisy", 1, 0.5)).query(req)
        b = ScriptedClient([ep], ScriptedClientConfig("noisy", 1, 0.5)).query(req)
        assert a == b
        answers.append(parse_response(a["text"] + "<glue>[]</glue>", list(ep.options)).answer_letter)
    assert 0 < answers.count(ep.answer) < 40


def test_fixture_groups():
    ep = generate_episode(seed=8)
    client = ScriptedClient([ep])
    oracle = scripted_rollout_group(ep, 4, "oracle")
    rewards = score_group(oracle, ep.ground_truth(), client)
    assert all(r == RewardVector(1, 1, 1.0, 1) for r in rewards)
    ga = group_advantages(rewards, "tokenadv")
    assert all(not v.any() for v in ga.per_reward.values())
    adv = scripted_rollout_group(ep, 6, "adversarial")
    rv = score_group(adv, ep.ground_truth(), client)
    assert rv[3].format == 0 and sum(r.format for r in rv) == 5
    assert 0 < rv[1].iou < 1 and rv[1].iou == pytest.approx(1 / 3)
    assert rv[2].zoom == 0 and rv[4].zoom == 0
    for ro in adv.rollouts:
        assert "".join(ro.tokens) == ro.text


@settings(max_examples=40)
@given(st.integers(0, 5000), st.sampled_from(["oracle", "noisy"]))
def test_non_adversarial_text_parses(seed, mode):
    ep = generate_episode(seed=seed)
    for ro in scripted_rollout_group(ep, 5, mode, seed).rollouts:
        assert format_reward(ro.text, list(ep.options)) == 1


def test_shifted_variant_iou():
    ep = generate_episode(seed=21)
    assert iou(normalize(span_variant(ep, "shifted")), ep.gt_spans) == pytest.approx(1 / 3)


def test_tokenize_concatenates():
    text = "<think>at <time>12.5</time></think><answer>B</answer><glue>[(1, 2)]</glue>"
    toks = tokenize(text)
    assert "".join(toks) == text and "<glue>" in toks and "12.5" in toks


def test_rotate_options():
    ep = generate_episode(seed=4)
    r = rotate_options(ep, 1)
    assert r.options[r.answer] == ep.options[ep.answer] and r.answer != ep.answer
    assert rotate_options(ep, 0) is ep


def test_toy_task_scoring():
    env = ToyGroundingTask(n_prompts=2, seed=1)
    ep = env.episodes[0]
    s, e = (int(x) for x in ep.gt_spans.spans[0])
    key = env.probe_key(0)
    gt = env.gts[key]
    toks = ["<think>", "</think>", "<answer>", gt.answer, "</answer>", "<glue>", "[", "(", str(s), ",", str(e), ")", "]", "</glue>"]
    rv, mask = env.score(key, [env.vocab.index(t) for t in toks])
    assert rv == RewardVector(1, 1, 1.0, 1)
    assert mask.tolist() == [False] * 5 + [True] * 9
    assert env.draw(0, np.random.default_rng(0))[0] == 0
