"""Command-line entry point: ``gvqa {score,eval,plan,filter,train-toy}``.

Inputs and outputs are line-delimited JSON (schema tag ``zz/1``). Every output
file starts with a header line holding the fully resolved configuration.
Exit codes: 0 success, 2 input or validation error, 3 runtime or client error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable, Iterator, Optional

from . import __version__
from .advantages import group_advantages, token_advantages
from .client import HttpPolicyClient
from .datafilter import DEFAULT_DELTA_THRESHOLD, FilterRecord, filter_examples
from .errors import ClientError, DomainError, FormatError
from .intervals import normalize
from .metrics import METRIC_NAMES, PredictionRecord, evaluate
from .parsing import glue_token_mask
from .planner import (
    DEFAULT_FINE_FPS,
    DEFAULT_TOP_K,
    DEFAULT_WINDOW_FRAMES,
    BudgetConfig,
    coarse_plan,
    divide_windows,
    fine_plan,
)
from .rewards import GroundTruth, Rollout, RolloutGroup, score_group

SCHEMA = "zz/1"
EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("gvqa")

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class InputError(Exception):
    """Bad input file, schema violation or invalid option; maps to exit code 2."""


# --- io helpers ---------------------------------------------------------------------


def read_jsonl(path: str) -> Iterator[tuple[int, dict]]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise InputError(f"{path}:{lineno}: expected a JSON object")
            if rec.get("kind") == "header":
                continue
            yield lineno, rec


def _load(path: str, parse: Callable[[dict], Any]) -> list:
    out = []
    for lineno, rec in read_jsonl(path):
        try:
            out.append(parse(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}:{lineno}: {type(exc).__name__}: {exc}") from exc
    return out


def atomic_write(path: str, text: str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def header(command: str, config: dict) -> str:
    return json.dumps({"schema": SCHEMA, "kind": "header", "command": command,
                       "version": __version__, "config": config}) + "\n"


def jsonl(records) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)


# --- config resolution ----------------------------------------------------------------


def load_config_file(path: Optional[str]) -> dict:
    path = path or os.environ.get("ZZ_CONFIG")
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise InputError(f"config {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"config {path}: {exc}") from exc


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file (top level, then the command's table) < flags."""
    file_cfg = load_config_file(args.config)
    section = file_cfg.get(args.command, {})
    merged = dict(defaults)
    for src in ({k: v for k, v in file_cfg.items() if not isinstance(v, dict)}, section):
        for k, v in src.items():
            key = k.replace("-", "_")
            if key in merged:
                merged[key] = v
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    return merged


def _budget(cfg: dict) -> BudgetConfig:
    try:
        return BudgetConfig(int(cfg["budget"]), int(cfg["vmin"]), int(cfg["vmax"]), float(cfg["fps"]))
    except DomainError as exc:
        raise InputError(str(exc)) from exc


BUDGET_DEFAULTS = {"budget": 8192, "vmin": 16, "vmax": 768, "fps": 1.0}


# --- commands -----------------------------------------------------------------------


def _parse_group(rec: dict, group_size: Optional[int]) -> RolloutGroup:
    items = rec["group"]
    if not isinstance(items, list):
        raise TypeError("'group' must be a list")
    if group_size is not None and len(items) != group_size:
        raise ValueError(f"group has {len(items)} rollouts, expected {group_size}")
    rollouts = []
    for j, it in enumerate(items):
        text = it["text"]
        toks = it.get("tokens")
        if not isinstance(text, str):
            raise TypeError(f"rollout {j}: 'text' must be a string")
        if toks is not None:
            if not all(isinstance(t, str) for t in toks):
                raise TypeError(f"rollout {j}: tokens must be strings")
            if "".join(toks) != text:
                raise ValueError(f"rollout {j}: tokens do not concatenate to text")
        rollouts.append(Rollout(text, tuple(toks) if toks is not None else None))
    return RolloutGroup(str(rec["id"]), tuple(rollouts))


def _zoom_client(cfg: dict, gt_path: str):
    kind = cfg["zoom_client"]
    if kind in (None, "none"):
        return None
    if kind == "sim":
        from .simenv import ScriptedClient, SyntheticEpisode

        eps = _load(gt_path, SyntheticEpisode.from_json)
        return ScriptedClient(eps)
    if kind == "endpoint":
        if not cfg.get("endpoint"):
            raise InputError("--zoom-client endpoint needs --endpoint URI")
        return HttpPolicyClient(cfg["endpoint"], float(cfg["timeout"]))
    if "://" in str(kind):
        return HttpPolicyClient(str(kind), float(cfg["timeout"]))
    raise InputError(f"unknown zoom client {kind!r} (none, sim, endpoint, or a URI)")


def cmd_score(args) -> int:
    cfg = resolve(args, {"rollouts": None, "gt": None, "mode": "tokenadv", "group_size": None,
                         "out": None, "zoom_client": "none", "endpoint": None, "timeout": 30.0,
                         "fine_fps": DEFAULT_FINE_FPS, "eps": 1e-6, "workers": 1, **BUDGET_DEFAULTS})
    for k in ("rollouts", "gt", "out"):
        if not cfg[k]:
            raise InputError(f"--{k} is required")
    if cfg["mode"] not in ("tokenadv", "sum"):
        raise InputError(f"--mode must be tokenadv or sum, got {cfg['mode']!r}")
    budget = _budget(cfg)
    gts = {g.id: g for g in _load(cfg["gt"], GroundTruth.from_json)}
    groups = []
    for lineno, rec in read_jsonl(cfg["rollouts"]):
        try:
            grp = _parse_group(rec, cfg["group_size"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{cfg['rollouts']}:{lineno}: {exc}") from exc
        if grp.prompt_id not in gts:
            raise InputError(f"{cfg['rollouts']}:{lineno}: no ground truth for id {grp.prompt_id!r}")
        groups.append(grp)
    if not groups:
        raise InputError(f"{cfg['rollouts']}: no rollout groups")
    client = _zoom_client(cfg, cfg["gt"])
    out = []
    for grp in groups:
        gt = gts[grp.prompt_id]
        rewards = score_group(grp, gt, client, budget, float(cfg["fine_fps"]), retries=1,
                              on_client_error="raise", max_workers=int(cfg["workers"]))
        ga = group_advantages(rewards, cfg["mode"], float(cfg["eps"]))
        items = []
        for i, (ro, rv) in enumerate(zip(grp.rollouts, rewards)):
            toks = ro.tokens if ro.tokens is not None else (ro.text,)
            mask = glue_token_mask(toks)
            items.append({
                "index": i,
                "rewards": rv.as_dict(),
                "advantages": {k: float(v[i]) for k, v in ga.per_reward.items()},
                "token_advantages": token_advantages(ga, mask, i).tolist(),
                "glue_mask": mask.mask.astype(int).tolist(),
            })
        out.append({"schema": SCHEMA, "id": grp.prompt_id, "mode": cfg["mode"], "rollouts": items})
    atomic_write(cfg["out"], header("score", cfg) + jsonl(out))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve(args, {"pred": None, "gt": None, "metrics": None, "out": None, "items_csv": None})
    for k in ("pred", "gt"):
        if not cfg[k]:
            raise InputError(f"--{k} is required")
    metrics = None
    if cfg["metrics"]:
        raw = cfg["metrics"]
        metrics = [m.strip() for m in (raw.split(",") if isinstance(raw, str) else raw) if m.strip()]
        bad = [m for m in metrics if m not in METRIC_NAMES]
        if bad:
            raise InputError(f"unknown metric(s) {bad}; choose from {list(METRIC_NAMES)}")
    preds = _load(cfg["pred"], PredictionRecord.from_json)
    gts = _load(cfg["gt"], GroundTruth.from_json)
    try:
        report = evaluate(preds, gts)
    except DomainError as exc:
        raise InputError(str(exc)) from exc
    print(report.table(metrics))
    if cfg["out"]:
        body = {"schema": SCHEMA, "kind": "header", "command": "eval", "config": cfg,
                **report.to_json(metrics)}
        atomic_write(cfg["out"], json.dumps(body, indent=2) + "\n")
    if cfg["items_csv"]:
        atomic_write(cfg["items_csv"], report.items_csv())
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = resolve(args, {"duration": None, "spans": None, "fine_fps": DEFAULT_FINE_FPS,
                         "windows": None, "topk": None, "out": None, **BUDGET_DEFAULTS})
    if cfg["duration"] is None:
        raise InputError("--duration is required")
    budget = _budget(cfg)
    try:
        result: dict = {"coarse": coarse_plan(float(cfg["duration"]), budget).to_json()}
        if cfg["spans"]:
            spans = json.loads(cfg["spans"]) if isinstance(cfg["spans"], str) else cfg["spans"]
            result["fine"] = fine_plan(normalize(spans), budget, float(cfg["fine_fps"])).to_json()
        if cfg["windows"] is not None or cfg["topk"] is not None:
            wf = int(cfg["windows"] or DEFAULT_WINDOW_FRAMES)
            result["windows_s"] = [[w.start, w.end] for w in divide_windows(float(cfg["duration"]), wf, budget)]
            result["window_frames"] = wf
            result["top_k"] = int(cfg["topk"] or DEFAULT_TOP_K)
    except (DomainError, json.JSONDecodeError, TypeError) as exc:
        raise InputError(str(exc)) from exc
    text = json.dumps(result, indent=2)
    print(text)
    if cfg["out"]:
        atomic_write(cfg["out"], header("plan", cfg) + json.dumps(result) + "\n")
    return EXIT_OK


def cmd_filter(args) -> int:
    cfg = resolve(args, {"input": None, "delta": DEFAULT_DELTA_THRESHOLD, "out": None, "decisions": None})
    if not cfg["input"] or not cfg["out"]:
        raise InputError("--in and --out are required")
    records = _load(cfg["input"], FilterRecord.from_json)
    try:
        decisions = filter_examples(records, float(cfg["delta"]))
    except DomainError as exc:
        raise InputError(str(exc)) from exc
    kept = [r.to_json() for r, d in zip(records, decisions) if d.kept]
    sidecar = cfg["decisions"] or f"{cfg['out']}.decisions.jsonl"
    atomic_write(cfg["out"], header("filter", cfg) + jsonl(kept))
    atomic_write(sidecar, header("filter", cfg) + jsonl(d.to_json() for d in decisions))
    print(f"kept {len(kept)} of {len(records)}", file=sys.stderr)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .grpo import TOY_LEARNING_RATE, OptimizerConfig, train_loop
    from .simenv import ToyGroundingTask

    d = OptimizerConfig()
    cfg = resolve(args, {"steps": d.steps, "group_size": d.group_size, "seed": d.seed, "mode": d.mode,
                         "beta": d.beta, "lr": TOY_LEARNING_RATE, "kl": d.kl_estimator, "clip": None,
                         "prompts": 4, "out": None, "csv": None})
    if not cfg["out"]:
        raise InputError("--out is required")
    try:
        opt = OptimizerConfig(beta=float(cfg["beta"]), group_size=int(cfg["group_size"]),
                              learning_rate=float(cfg["lr"]), steps=int(cfg["steps"]),
                              seed=int(cfg["seed"]), mode=cfg["mode"], kl_estimator=cfg["kl"],
                              clip=None if cfg["clip"] is None else float(cfg["clip"]))
        env = ToyGroundingTask(n_prompts=int(cfg["prompts"]), seed=int(cfg["seed"]))
    except DomainError as exc:
        raise InputError(str(exc)) from exc
    try:
        trace = train_loop(env, opt)
    except (DomainError, FormatError, ClientError) as exc:
        log.error("training failed: %s", exc)
        return EXIT_RUNTIME
    csv_path = cfg["csv"] or str(Path(cfg["out"]).with_suffix(".csv"))
    atomic_write(cfg["out"], header("train-toy", cfg) + trace.to_jsonl())
    atomic_write(csv_path, "# " + header("train-toy", cfg) + trace.to_csv())
    last = trace.records[-1]
    print(f"step {last['step']}: mean_iou={last['mean_iou']:.4f} mean_zoom={last['mean_zoom']:.4f}",
          file=sys.stderr)
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def _add_budget(p: argparse.ArgumentParser) -> None:
    p.add_argument("--budget", type=int, help="total video-token budget (default 8192)")
    p.add_argument("--vmin", type=int, help="minimum tokens per frame (default 16)")
    p.add_argument("--vmax", type=int, help="maximum tokens per frame (default 768)")
    p.add_argument("--fps", type=float, help="coarse sampling rate, frames/s (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gvqa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="TOML config file (default: $ZZ_CONFIG)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="rewards and per-token advantages for rollout groups")
    p.add_argument("--rollouts")
    p.add_argument("--gt")
    p.add_argument("--mode", choices=["tokenadv", "sum"])
    p.add_argument("--group-size", type=int)
    p.add_argument("--out")
    p.add_argument("--zoom-client", help="none (default), sim, endpoint, or an http(s) URI")
    p.add_argument("--endpoint", help="URI used with --zoom-client endpoint")
    p.add_argument("--timeout", type=float)
    p.add_argument("--fine-fps", type=float)
    p.add_argument("--workers", type=int)
    _add_budget(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="grounding and QA metrics")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--metrics", help=f"comma-separated subset of {','.join(METRIC_NAMES)}")
    p.add_argument("--out")
    p.add_argument("--items-csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plan", help="coarse / fine token plans and divide-and-conquer windows")
    p.add_argument("--duration", type=float)
    p.add_argument("--spans", help='JSON list of [start, end] pairs, e.g. "[[10, 74]]"')
    p.add_argument("--fine-fps", type=float)
    p.add_argument("--windows", type=int, help="window size in frames")
    p.add_argument("--topk", type=int)
    p.add_argument("--out")
    _add_budget(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("filter", help="keep training examples with IoU spread and answer errors")
    p.add_argument("--in", dest="input")
    p.add_argument("--delta", type=float)
    p.add_argument("--out")
    p.add_argument("--decisions", help="decision sidecar path (default: OUT.decisions.jsonl)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train-toy", help="GRPO on the synthetic grounding task")
    p.add_argument("--steps", type=int)
    p.add_argument("--group-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["tokenadv", "sum"])
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--kl", choices=["k3", "exact"])
    p.add_argument("--clip", type=float)
    p.add_argument("--prompts", type=int)
    p.add_argument("--out")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ClientError as exc:
        print(f"client error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
