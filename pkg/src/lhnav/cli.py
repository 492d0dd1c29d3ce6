"""Command-line entry points: scene/task generation, rollouts, trajectory
splitting, and metric reports.

A plain key=value config file seeds the defaults; explicit flags override
it, and LHNAV_LLM_ENDPOINT overrides the task-generation endpoint.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .runner import RunConfig, format_report_table, load_report, run_suite
from .scenegen import generate_scene
from .splitter import render_step_instruction, split_trajectory, tag_segment
from .taskforge import (
    LlmClientConfig,
    SceneTooSparseError,
    generate_via_llm,
    load_tasks,
    sample_task,
    save_tasks,
)
from .trajectory import Trajectory
from .world import ROBOTS, Action, Scene


def load_config_file(path: str | None) -> dict[str, str]:
    """Plain key=value lines; blank lines and # comments ignored."""
    if not path:
        return {}
    values: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {raw!r} is not key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _load_scenes(path: str) -> dict[str, Scene]:
    p = Path(path)
    files = sorted(p.glob("*.json")) if p.is_dir() else [p]
    scenes = {}
    for f in files:
        scene = Scene.load(f)
        scenes[scene.scene_id] = scene
    if not scenes:
        raise FileNotFoundError(f"no scene files under {path}")
    return scenes


def _parse_stage_range(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(text)]


def cmd_gen_scene(args, cfg_file) -> int:
    scene = generate_scene(
        seed=args.seed, size=args.size, regions=args.regions, objects_per_region=args.objects
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{scene.scene_id}.json"
    scene.save(path)
    print(f"wrote {path}")
    return 0


def cmd_gen_tasks(args, cfg_file) -> int:
    scenes = _load_scenes(args.scenes)
    stage_range = _parse_stage_range(args.subtasks)
    endpoint = (
        os.environ.get("LHNAV_LLM_ENDPOINT")
        or args.llm_endpoint
        or cfg_file.get("llm_endpoint", "")
    )
    robot = ROBOTS[args.robot]
    tasks = []
    scene_list = [scenes[k] for k in sorted(scenes)]
    seed = args.seed
    attempts_left = max(4 * args.count * len(scene_list), 16)
    while len(tasks) < args.count:
        if attempts_left <= 0:
            raise SceneTooSparseError(
                f"could not sample {args.count} tasks from the given scenes"
            )
        attempts_left -= 1
        scene = scene_list[len(tasks) % len(scene_list)]
        if endpoint:
            cfg = LlmClientConfig(endpoint=endpoint, enabled=True)
            tasks.append(generate_via_llm(scene, robot, cfg, seed=seed))
        else:
            try:
                tasks.append(
                    sample_task(scene, robot, seed=seed, allowed_stages=stage_range)
                )
            except SceneTooSparseError as exc:
                print(f"skipping scene {scene.scene_id}: {exc}", file=sys.stderr)
        seed += 1
    save_tasks(tasks, args.out)
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def cmd_rollout(args, cfg_file) -> int:
    scenes = _load_scenes(args.scenes)
    tasks = load_tasks(args.tasks)
    cfg = RunConfig(
        budget=args.budget,
        seed=args.seed,
        policy=args.policy,
        literal_ne=args.literal_ne,
        literal_ce=args.literal_ce,
        literal_pooling=args.literal_pooling,
        workers=args.workers,
        store_path=args.store or cfg_file.get("store_path", ""),
        out_dir=args.out,
    )
    report = run_suite(scenes, tasks, cfg)
    print(format_report_table(report))
    return 0


def cmd_split(args, cfg_file) -> int:
    scenes = _load_scenes(args.scenes)
    p = Path(args.trajectories)
    files = sorted(p.glob("*.jsonl")) if p.is_dir() else [p]
    out_tasks = []
    for f in files:
        traj = Trajectory.load(f)
        scene = scenes[traj.scene_id]
        robot = ROBOTS.get(traj.robot, ROBOTS["spot"])
        for span in traj.spans:
            if span.kind != "move_to":
                continue
            steps = traj.steps[span.start : span.end]
            actions = [s.action for s in steps if s.action != Action.STOP]
            if not actions:
                continue
            segments = split_trajectory(actions)
            tagged = [
                seg.with_tags(tag_segment(scene, steps, seg, robot)) for seg in segments
            ]
            target = scene.object(span.target_id).category
            task = render_step_instruction(
                target, tagged, source_task_id=traj.task_id, source_subtask=span.index
            )
            out_tasks.append(task.to_dict())
    Path(args.out).write_text(
        json.dumps(out_tasks, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(out_tasks)} step-by-step tasks to {args.out}")
    return 0


def cmd_eval(args, cfg_file) -> int:
    report = load_report(args.results)
    print(format_report_table(report))
    return 0


def cmd_report(args, cfg_file) -> int:
    report = load_report(args.results)
    if args.format == "json":
        print(json.dumps(report["aggregate"], sort_keys=True, indent=2))
    else:
        print(format_report_table(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lhnav", description=__doc__)
    parser.add_argument("--config", help="key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a synthetic scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=24)
    p.add_argument("--regions", type=int, default=4)
    p.add_argument("--objects", type=int, default=4)
    p.add_argument("--out", default="scenes")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("gen-tasks", help="sample tasks for existing scenes")
    p.add_argument("--scenes", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--subtasks", default="2..4", help="navigation stage range, e.g. 2..4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--robot", default="spot", choices=sorted(ROBOTS))
    p.add_argument("--llm-endpoint", default="")
    p.add_argument("--out", default="tasks.json")
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("rollout", help="run a policy over a task suite")
    p.add_argument("--scenes", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--policy", default="expert", choices=["expert", "random", "memory", "stop"])
    p.add_argument("--budget", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--store", default="", help="long-term store JSONL for the memory policy")
    p.add_argument("--literal-ne", action="store_true")
    p.add_argument("--literal-ce", action="store_true")
    p.add_argument("--literal-pooling", action="store_true")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("split", help="split trajectories into step-by-step tasks")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", default="step_tasks.json")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval", help="print the metric table for a report")
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="dump a report as json or table")
    p.add_argument("--results", required=True)
    p.add_argument("--format", default="table", choices=["json", "table"])
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg_file = load_config_file(args.config)
    return args.func(args, cfg_file)


if __name__ == "__main__":
    raise SystemExit(main())
