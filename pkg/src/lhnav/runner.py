"""Episode orchestration: run tasks against a policy, record trajectories,
judge subtasks, and aggregate metrics into a report.

A navigation subtask ends when the policy emits stop (success is judged at
that pose) or when the step budget truncates it.  Later subtasks always run
regardless of earlier failures, from wherever the agent stands, because the
stage-conditional metrics need every success flag.  Episodes are
independent: a suite can fan out over processes and still reduce to the
same aggregates.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

from . import metrics as metrics_mod
from .expert import UnreachableTargetError, geodesic_distance
from .metrics import EpisodeResult, SubtaskRecord
from .policy import (
    ExpertPolicy,
    LinearSoftmaxBackend,
    MemoryPolicy,
    Policy,
    RandomPolicy,
    StepContext,
    StopPolicy,
)
from .memory import LongTermStore
from .taskforge import GRAB, MOVE_TO, RELEASE, TaskSpec, sample_spawn
from .trajectory import StepRecord, SubtaskSpan, Trajectory
from .world import (
    ROBOTS,
    AgentState,
    Scene,
    apply_action,
    apply_grab,
    apply_release,
    subtask_success,
    validate_state,
)


@dataclass
class RunConfig:
    budget: int = 500          # steps per navigation subtask
    seed: int = 0
    policy: str = "expert"
    literal_ne: bool = False   # drop truncated subtasks from the NE mean
    literal_ce: bool = False   # printed-form imitation loss
    literal_pooling: bool = False  # 3-element forgetting window
    workers: int = 1
    embed_dim: int = 64
    memory_capacity: int = 32
    store_path: str = ""
    out_dir: str = ""

    def __post_init__(self) -> None:
        if self.budget <= 0:
            raise ValueError("budget must be positive")

    def config_hash(self) -> str:
        stable = {
            k: v
            for k, v in asdict(self).items()
            if k not in ("workers", "out_dir")
        }
        blob = json.dumps(stable, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


def make_policy(cfg: RunConfig) -> Policy:
    if cfg.policy == "expert":
        return ExpertPolicy()
    if cfg.policy == "random":
        return RandomPolicy()
    if cfg.policy == "stop":
        return StopPolicy()
    if cfg.policy == "memory":
        backend = LinearSoftmaxBackend(
            embed_dim=cfg.embed_dim, seed=cfg.seed, literal_ce=cfg.literal_ce
        )
        store = (
            LongTermStore.load(cfg.store_path) if cfg.store_path else LongTermStore()
        )
        return MemoryPolicy(
            backend,
            store=store,
            capacity=cfg.memory_capacity,
            pooling="triple" if cfg.literal_pooling else "pair",
        )
    raise ValueError(f"unknown policy {cfg.policy!r}")


def _distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def run_episode(
    scene: Scene,
    task: TaskSpec,
    policy: Policy,
    cfg: RunConfig,
    start: AgentState | None = None,
) -> tuple[Trajectory, EpisodeResult]:
    """Run one task to completion and judge every navigation subtask."""
    if task.scene_id != scene.scene_id:
        raise ValueError(
            f"task {task.id!r} pairs with {task.scene_id!r}, not {scene.scene_id!r}"
        )
    robot = ROBOTS.get(task.robot, ROBOTS["spot"])
    state = start if start is not None else sample_spawn(scene, task)
    validate_state(scene, state)
    policy.begin_episode(scene, task, robot, cfg.seed)

    steps: list[StepRecord] = []
    spans: list[SubtaskSpan] = []
    records: list[SubtaskRecord] = []
    stage = -1
    last_move_target: str | None = None

    for sub_idx, sub in enumerate(task.subtasks):
        if sub.kind == MOVE_TO:
            stage += 1
            target = scene.object(sub.object_id)
            geo = geodesic_distance(scene, state.position, target.position)
            if geo == math.inf:
                raise UnreachableTargetError(
                    f"target {sub.object_id!r} unreachable in task {task.id!r}"
                )
            # floor keeps ground truth positive when a truncated predecessor
            # strands the agent on the target cell
            gt = max(geo, scene.cell_size)
            seg_start = len(steps)
            oracle_hit = False
            path_taken = 0.0
            stopped = False
            for step_i in range(cfg.budget):
                if subtask_success(scene, state, sub.object_id, robot):
                    oracle_hit = True
                ctx = StepContext(
                    scene=scene,
                    state=state,
                    robot=robot,
                    task=task,
                    target_id=sub.object_id,
                    stage=stage,
                    step_in_subtask=step_i,
                    instruction=task.instruction,
                )
                action = policy.act(ctx)
                result = apply_action(scene, state, action, robot)
                steps.append(
                    StepRecord(
                        index=len(steps),
                        state=state,
                        action=action,
                        collided=result.collided,
                        obs_id=f"obs-{len(steps)}",
                        subtask=sub_idx,
                    )
                )
                path_taken += _distance(state.position, result.state.position)
                state = result.state
                if result.stopped:
                    stopped = True
                    break
            # the pose after the last action belongs to this window too
            if not oracle_hit and subtask_success(scene, state, sub.object_id, robot):
                oracle_hit = True
            success = stopped and subtask_success(scene, state, sub.object_id, robot)
            ne = geodesic_distance(scene, state.position, target.position)
            records.append(
                SubtaskRecord(
                    success=success,
                    ne=ne,
                    gt=gt,
                    steps=len(steps) - seg_start,
                    path_taken=path_taken,
                    oracle_hit=oracle_hit,
                    truncated=not stopped,
                )
            )
            spans.append(
                SubtaskSpan(
                    index=sub_idx,
                    kind=MOVE_TO,
                    target_id=sub.object_id,
                    start=seg_start,
                    end=len(steps),
                    gt=gt,
                    stopped=stopped,
                )
            )
            last_move_target = sub.object_id
        elif sub.kind == GRAB:
            state, ok = apply_grab(scene, state, sub.object_id, robot)
            spans.append(
                SubtaskSpan(
                    index=sub_idx,
                    kind=GRAB,
                    target_id=sub.object_id,
                    start=len(steps),
                    end=len(steps),
                    gt=0.0,
                    stopped=True,
                    interaction_ok=ok,
                )
            )
        elif sub.kind == RELEASE:
            place = last_move_target or sub.object_id
            state, ok = apply_release(scene, state, sub.object_id, place, robot)
            spans.append(
                SubtaskSpan(
                    index=sub_idx,
                    kind=RELEASE,
                    target_id=sub.object_id,
                    start=len(steps),
                    end=len(steps),
                    gt=0.0,
                    stopped=True,
                    interaction_ok=ok,
                )
            )
        else:
            raise ValueError(f"unknown subtask kind {sub.kind!r}")

    trajectory = Trajectory(
        task_id=task.id,
        scene_id=scene.scene_id,
        robot=robot.name,
        steps=steps,
        spans=spans,
        final_state=state,
        config_hash=cfg.config_hash(),
        seed=task.seed,
    )
    return trajectory, EpisodeResult(task_id=task.id, records=tuple(records))


def _episode_job(args) -> tuple[str, dict]:
    scene, task, cfg = args
    policy = make_policy(cfg)
    trajectory, result = run_episode(scene, task, policy, cfg)
    if cfg.out_dir:
        traj_dir = Path(cfg.out_dir) / "trajectories"
        traj_dir.mkdir(parents=True, exist_ok=True)
        trajectory.save(traj_dir / f"{task.id}.jsonl")
    return task.id, result.to_dict()


def run_suite(
    scenes: dict[str, Scene],
    tasks: list[TaskSpec],
    cfg: RunConfig,
) -> dict:
    """Run every task, write trajectories, and aggregate a report.

    The reduction sorts episodes by task id, so shuffled task order and any
    worker count produce the same report.
    """
    if not tasks:
        raise ValueError("suite needs at least one task")
    jobs = []
    for task in tasks:
        if task.scene_id not in scenes:
            raise ValueError(f"task {task.id!r} references unknown scene {task.scene_id!r}")
        jobs.append((scenes[task.scene_id], task, cfg))

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            raw = list(pool.map(_episode_job, jobs))
    else:
        raw = [_episode_job(job) for job in jobs]

    by_id = dict(raw)
    results = [
        EpisodeResult.from_dict(by_id[task_id]) for task_id in sorted(by_id)
    ]
    report = {
        "policy": cfg.policy,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "num_tasks": len(results),
        "aggregate": metrics_mod.aggregate(results, literal_ne=cfg.literal_ne),
        "per_task": {
            res.task_id: metrics_mod.aggregate([res], literal_ne=cfg.literal_ne)
            for res in results
        },
        "results": [res.to_dict() for res in results],
    }
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_report(report, out / "report.json")
    return report


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def format_report_table(report: dict) -> str:
    """Fixed-order metric table for terminal output."""
    agg = report["aggregate"]
    lines = [
        f"policy: {report['policy']}   tasks: {report['num_tasks']}   seed: {report['seed']}",
        "-" * 46,
    ]
    for name in metrics_mod.METRIC_ORDER:
        value = agg[name]
        shown = f"{value:.4f}" if not (isinstance(value, float) and math.isnan(value)) else "n/a"
        lines.append(f"{name.upper():>6}  {shown}")
    return "\n".join(lines)
