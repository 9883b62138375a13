"""Acceptance suite: one test per headline criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest

from gvqa.advantages import group_advantages, group_normalize, summed_advantage, token_advantages
from gvqa.datafilter import FilterRecord, decide, delta
from gvqa.grpo import TOY_LEARNING_RATE, OptimizerConfig, TokenRollout, ToyPolicy, grpo_gradient, grpo_objective, train_loop
from gvqa.intervals import TimeInterval, intersect, iog, iop, iou, measure, normalize
from gvqa.metrics import PredictionRecord, acc_at_iou, acc_gqa, evaluate, rec_at_iou, recall_at
from gvqa.planner import (
    DEFAULT_TOP_K, DEFAULT_WINDOW_FRAMES, BudgetConfig, WindowResult, aggregate_top_spans, coarse_plan,
    divide_windows, fine_plan,
)
from gvqa.rewards import GroundTruth, RewardVector, Rollout, RolloutGroup, score_group
from gvqa.simenv import ScriptedClient, ToyGroundingTask, generate_episode, span_variant
from oracles import STEP, raster_ratios


@pytest.fixture
def verdict(capsys):
    def report(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail

    return report


def test_credit_table_golden(verdict):
    t0 = time.perf_counter()
    r_iou, r_acc = [0.0, 0.5, 0.4, 0.8, 0.2], [1, 0, 1, 0, 1]
    a_iou, a_acc = group_normalize(r_iou), group_normalize(r_acc)
    a_sum = summed_advantage({"iou": r_iou, "acc": r_acc})
    dt = time.perf_counter() - t0
    err = max(
        np.abs(a_iou - [-1.40, 0.44, 0.07, 1.55, -0.66]).max(),
        np.abs(a_acc - [0.82, -1.22, 0.82, -1.22, 0.82]).max(),
        np.abs(a_sum - [0.06, -1.54, 1.34, -0.58, 0.70]).max(),
    )
    verdict("credit table", err <= 0.01 and dt < 1.0, f"max abs err {err:.4f} (tol 0.01), {dt * 1e3:.2f} ms")


def test_token_budget_planner(verdict):
    cfg = BudgetConfig(8192, 16, 768, 1.0)
    c, f = coarse_plan(1024, cfg), fine_plan(normalize([(300, 364)]), cfg)
    exact = (c.n_frames, c.tokens_per_frame, f.n_frames, f.tokens_per_frame) == (512, 16, 64, 128)
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(5000):
        vmin = int(rng.integers(1, 64))
        vmax = vmin * int(rng.integers(1, 48))
        cfg = BudgetConfig(vmax * int(rng.integers(1, 64)), vmin, vmax, float(rng.choice([0.5, 1, 2])))
        F = float(rng.uniform(0.5, 5000))
        a, b = np.sort(rng.uniform(0, F, 2))
        if b - a < 1e-3:
            continue
        cp, fp = coarse_plan(F, cfg), fine_plan(normalize([(a, b)]), cfg)
        bad += cp.total_tokens > cfg.total_tokens or fp.total_tokens > cfg.total_tokens
        bad += fp.n_frames <= cp.n_frames and fp.tokens_per_frame < cp.tokens_per_frame
    verdict("token budget planner", exact and bad == 0,
            f"coarse N={c.n_frames} V={c.tokens_per_frame}, fine N'={f.n_frames} V'={f.tokens_per_frame}, {bad} invariant violations")


def test_interval_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)

    def spans():
        k = int(rng.integers(1, 4))
        pts = np.sort(rng.uniform(0, 100, 2 * k))
        return [(pts[2 * i], pts[2 * i + 1]) for i in range(k)]

    worst, checked = 0.0, 0
    for _ in range(10_000):
        a, b = spans(), spans()
        A, B = normalize(a), normalize(b)
        o = raster_ratios(a, b)
        n_end = 2 * (len(A) + len(B))
        for fn, key, den in ((iou, "iou", o["union"]), (iog, "iog", measure(B)), (iop, "iop", measure(A))):
            if o[key] is None:
                continue
            # each endpoint misplaces at most half a raster cell in numerator and denominator
            bound = n_end * STEP / den
            worst = max(worst, abs(fn(A, B) - o[key]) / bound)
            checked += 1
    dt = time.perf_counter() - t0
    verdict("interval oracle", worst <= 1.0 and dt < 30,
            f"{checked} ratios, worst error / bound = {worst:.3f}, {dt:.1f} s")


def _gradient_instance(rng, mode):
    V, P, T = 3, 2, 4
    pol = ToyPolicy(("a", "b", "c"), P, T, 1, rng.normal(0, 1, (P * T * (V + 1), V)))
    old = pol.with_params(pol.params + rng.normal(0, 0.3, pol.params.shape))
    ref = pol.with_params(pol.params + rng.normal(0, 0.3, pol.params.shape))
    groups = []
    for _ in range(2):
        G = 3
        prompt = int(rng.integers(P))
        seqs = [rng.integers(0, V, int(rng.integers(1, T + 1))) for _ in range(G)]
        rewards = [RewardVector(int(rng.integers(2)), int(rng.integers(2)), float(rng.random()), int(rng.integers(2))) for _ in range(G)]
        ga = group_advantages(rewards, mode)
        groups.append([TokenRollout(prompt, s, token_advantages(ga, rng.random(len(s)) < 0.5, i)) for i, s in enumerate(seqs)])
    return pol, old, ref, groups


def test_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, n = 0.0, 0
    h = 1e-5
    for mode in ("tokenadv", "sum"):
        for beta in (0.0, 0.04):
            for k in range(100):
                kl = "k3" if k % 2 == 0 else "exact"
                pol, old, ref, groups = _gradient_instance(rng, mode)
                g = grpo_gradient(pol, old, ref, groups, beta, kl)
                flat = pol.params.ravel()
                fd = np.zeros_like(flat)
                for j in range(flat.size):
                    up, dn = flat.copy(), flat.copy()
                    up[j] += h
                    dn[j] -= h
                    fd[j] = (grpo_objective(pol.with_params(up), old, ref, groups, beta, kl)
                             - grpo_objective(pol.with_params(dn), old, ref, groups, beta, kl)) / (2 * h)
                err = np.linalg.norm(g.ravel() - fd) / max(np.linalg.norm(fd), np.linalg.norm(g), 1e-12)
                worst = max(worst, err)
                n += 1
    dt = time.perf_counter() - t0
    verdict("gradient fidelity", worst <= 1e-5 and dt < 60,
            f"{n} instances (2 modes x 2 betas x 100), worst relative error {worst:.2e} (tol 1e-5), {dt:.1f} s")


def test_end_to_end_zoom_semantics(verdict):
    kinds = ("exact", "shifted", "wide", "disjoint", "empty")
    cfg = BudgetConfig()
    mismatches, n = [], 0
    for seed in range(500):
        ep = generate_episode(seed=seed)
        gt, target = ep.ground_truth(), ep.gt_spans
        texts = []
        for kind in kinds:
            body = ", ".join(f"({s!r}, {e!r})" for s, e in span_variant(ep, kind))
            texts.append(f"<think>t</think><answer>{ep.answer}</answer><glue>[{body}]</glue>")
        rewards = score_group(RolloutGroup(ep.id, tuple(Rollout(t) for t in texts)), gt, ScriptedClient([ep]))
        for kind, rv in zip(kinds, rewards):
            n += 1
            glue = normalize(span_variant(ep, kind))
            v_fine = fine_plan(glue, cfg).tokens_per_frame if measure(glue) > 0 else 0
            resolves = v_fine >= ep.detail_threshold
            coincides = glue.isclose(target)
            misses = measure(intersect(glue, target)) == 0
            all_ones = rv == RewardVector(1, 1, 1.0, 1)
            if all_ones != (coincides and resolves):
                mismatches.append((seed, kind, "all-ones", rv))
            if misses and rv.zoom != 0:
                mismatches.append((seed, kind, "zoom on miss", rv))
            if rv.zoom == 1 and not resolves:
                mismatches.append((seed, kind, "zoom below threshold", rv))
    verdict("end-to-end zoom semantics", not mismatches,
            f"{n} rollouts over 500 episodes, {len(mismatches)} mismatches {mismatches[:3]}")


def test_training_trend(verdict):
    t0 = time.perf_counter()
    rows, wins, min_gain = [], 0, np.inf
    for seed in range(5):
        res = {}
        for mode in ("tokenadv", "sum"):
            cfg = OptimizerConfig(steps=1000, group_size=8, learning_rate=TOY_LEARNING_RATE, seed=seed, mode=mode)
            iou_trace = train_loop(ToyGroundingTask(seed=seed), cfg).column("mean_iou")
            first, last = iou_trace[:100].mean(), iou_trace[-100:].mean()
            res[mode] = last
            min_gain = min(min_gain, last - first)
        wins += res["tokenadv"] >= res["sum"]
        rows.append(f"seed {seed}: tokenadv {res['tokenadv']:.3f} vs sum {res['sum']:.3f}")
    dt = time.perf_counter() - t0
    ok = wins >= 4 and min_gain >= 0.1 and dt < 600
    verdict("training trend", ok,
            f"tokenadv >= sum in {wins}/5 seeds (need 4), min improvement {min_gain:.3f} (need 0.1), "
            f"{dt:.0f} s; " + "; ".join(rows))


def _gt(i, spans):
    return GroundTruth(str(i), "q", {"A": "a", "B": "b", "C": "c", "D": "d"}, "A", normalize(spans), 100.0)


def test_metric_protocol(verdict):
    gts = [_gt(i, [(0, 10)]) for i in range(3)]
    preds = [PredictionRecord(str(i), "A", normalize([(0, 10 * v)])) for i, v in enumerate([0.6, 0.2, 0.35])]
    r = evaluate(preds, gts)
    g2 = [_gt(0, [(0, 10)]), _gt(1, [(0, 10)])]
    p2 = [PredictionRecord("0", "A", normalize([(0, 4.5)])), PredictionRecord("1", "A", normalize([(0, 0.5)]))]
    g3 = [_gt(0, [(4, 100)]), _gt(1, [(6, 100)]), _gt(2, [(1, 100)])]
    p3 = [PredictionRecord("0", "A", normalize([(0, 10)])), PredictionRecord("1", "A", normalize([(0, 10)])),
          PredictionRecord("2", "B", normalize([(0, 10)]))]
    fixtures = {
        "miou": (round(r.miou, 4), 0.3833),
        "r@0.3": (round(r.recall_at[0.3], 4), 0.6667),
        "rec_at_iou": (rec_at_iou(p2, g2), 0.4),
        "acc_gqa": (acc_gqa(p3, g3), 1 / 3),
        "acc_at_iou": (acc_at_iou(p2[:1], g2[:1]), 0.8),
    }
    fixture_ok = all(abs(a - b) < 1e-12 for a, b in fixtures.values())
    rng = np.random.default_rng(3)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(1, 10))
        gts, preds = [], []
        for i in range(n):
            s = rng.uniform(0, 90)
            gts.append(_gt(i, [(s, s + rng.uniform(0.5, 10))]))
            ps, pl = rng.uniform(0, 95), rng.uniform(0, 10) * (rng.random() > 0.1)
            preds.append(PredictionRecord(str(i), str(rng.choice(list("AB"))), normalize([(ps, ps + pl)])))
        rep = evaluate(preds, gts)
        rec = [recall_at(preds, gts, t) for t in np.linspace(0, 1, 21)]
        violations += any(a < b for a, b in zip(rec, rec[1:]))
        violations += rep.acc_at_iou > rep.rec_at_iou + 1e-12 or rep.acc_gqa > rep.acc + 1e-12
    verdict("metric protocol", fixture_ok and violations == 0,
            f"fixtures {({k: round(v[0], 4) for k, v in fixtures.items()})}, {violations} bound violations in 1000 collections")


def test_filter_rule(verdict):
    def rec(ious, n_ok):
        return FilterRecord("x", tuple(ious), tuple([True] * n_ok + [False] * (len(ious) - n_ok)))

    checks = {
        "delta 0.525": abs(delta([0.9] + [0.3] * 7) - 0.525) < 1e-15,
        "constant delta 0": delta([0.5] * 4) == 0,
        "kept at 6/8 correct": decide(rec([0.9] + [0.3] * 7, 6)).kept,
        "all-correct dropped": not decide(rec([0.9] + [0.3] * 7, 8)).kept,
        "boundary 0.1 kept": decide(rec([0.3, 0.1], 0)).kept,
        "0.0999 dropped": not decide(rec([0.1999, 0.0001], 0)).kept,
    }
    rng = np.random.default_rng(5)
    checks["all-correct never kept"] = not any(
        decide(rec(rng.random(8), 8)).kept for _ in range(1000)
    )
    verdict("filter rule", all(checks.values()), ", ".join(f"{k}={'ok' if v else 'NO'}" for k, v in checks.items()))


def test_divide_and_conquer(verdict):
    rng = np.random.default_rng(11)
    bad = 0
    for _ in range(1000):
        F = float(rng.uniform(0.5, 20_000))
        fps = float(rng.choice([0.5, 1.0, 2.0]))
        wf = int(rng.integers(1, 1024))
        ws = divide_windows(F, wf, BudgetConfig(fps=fps))
        bad += ws[0].start != 0 or abs(ws[-1].end - F) > 1e-9
        bad += any(a.end != b.start for a, b in zip(ws, ws[1:]))
        bad += abs(sum(w.measure for w in ws) - F) > 1e-6 or any(w.measure > wf / fps + 1e-9 for w in ws)
    agg_bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        k = int(rng.integers(1, 8))
        conf = rng.choice([0.1, 0.5, 0.9, 0.3], size=n)
        results = []
        for i in range(n):
            a, b = np.sort(rng.uniform(0, 10, 2))
            results.append(WindowResult(TimeInterval(10 * i, 10 * i + 10), normalize([(10 * i + a, 10 * i + b)]), "A", float(conf[i])))
        order = sorted(range(n), key=lambda i: (-conf[i], i))[:k]
        oracle = normalize([s for i in order for s in results[i].predicted_spans])
        agg_bad += not aggregate_top_spans(results, k).isclose(oracle)
    defaults = (DEFAULT_WINDOW_FRAMES, DEFAULT_TOP_K) == (256, 4)
    verdict("divide and conquer", bad == 0 and agg_bad == 0 and defaults,
            f"partition violations {bad}/1000, top-k mismatches {agg_bad}/1000, defaults window={DEFAULT_WINDOW_FRAMES} k={DEFAULT_TOP_K}")
