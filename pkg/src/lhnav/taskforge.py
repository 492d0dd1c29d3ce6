"""Forward task generation: sample multi-stage tasks from a scene, or fetch
them from an external chat-completion service and validate the reply.

A task chains two to four navigation stages.  Every grab follows a move to
the grabbed object and every release follows a move to the place receiving
it, so the arm bookkeeping always stays legal.  The offline template
backend is the default; the service client speaks a chat-completion wire
format and rejects replies that reference objects or regions the scene does
not contain.
"""

from __future__ import annotations

import json
import random
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from .world import AgentState, RobotConfig, ROBOTS, Scene, normalize_heading

MOVE_TO = "move_to"
GRAB = "grab"
RELEASE = "release"

MIN_STAGES = 2
MAX_STAGES = 4
MIN_TARGET_SEPARATION = 2.0  # meters, geodesic, also spawn-to-first-target

_PROMPT_DIR = Path(__file__).parent / "prompts"


class SceneTooSparseError(ValueError):
    pass


class TaskValidationError(ValueError):
    pass


class LlmNetworkError(RuntimeError):
    pass


class LlmParseError(ValueError):
    pass


@dataclass(frozen=True)
class Subtask:
    kind: str  # move_to | grab | release
    object_id: str
    region_id: str | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "object_id": self.object_id, "region_id": self.region_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Subtask":
        return cls(kind=d["kind"], object_id=d["object_id"], region_id=d.get("region_id"))


@dataclass(frozen=True)
class TaskSpec:
    id: str
    instruction: str
    subtasks: tuple[Subtask, ...]
    robot: str
    scene_id: str
    seed: int

    def move_targets(self) -> list[Subtask]:
        return [s for s in self.subtasks if s.kind == MOVE_TO]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instruction": self.instruction,
            "subtasks": [s.to_dict() for s in self.subtasks],
            "robot": self.robot,
            "scene_id": self.scene_id,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(
            id=d["id"],
            instruction=d["instruction"],
            subtasks=tuple(Subtask.from_dict(s) for s in d["subtasks"]),
            robot=d["robot"],
            scene_id=d["scene_id"],
            seed=d["seed"],
        )


@dataclass
class LlmClientConfig:
    endpoint: str = ""
    model: str = "gpt-4"
    timeout: float = 30.0
    enabled: bool = False

    def __post_init__(self) -> None:
        if self.enabled and not self.endpoint:
            raise ValueError("enabled LLM client needs an endpoint")


def load_prompt(name: str) -> str:
    """Prompt templates shipped with the package (forward_task,
    step_instruction, decision)."""
    return (_PROMPT_DIR / f"{name}.txt").read_text(encoding="utf-8")


# -- validation ----------------------------------------------------------------


def validate_task(scene: Scene, task: TaskSpec) -> None:
    """Check the structural task invariants against a scene; raises
    TaskValidationError naming the offending field."""
    moves = task.move_targets()
    if not MIN_STAGES <= len(moves) <= MAX_STAGES:
        raise TaskValidationError(
            f"task {task.id!r}: {len(moves)} navigation stages, need {MIN_STAGES}..{MAX_STAGES}"
        )
    holding: str | None = None
    prev: Subtask | None = None
    for sub in task.subtasks:
        if not scene.has_object(sub.object_id):
            raise TaskValidationError(f"unknown object {sub.object_id!r}")
        obj = scene.object(sub.object_id)
        if sub.kind == MOVE_TO:
            if sub.region_id is None:
                raise TaskValidationError(f"move_to {sub.object_id!r} missing region")
            if not scene.has_region(sub.region_id):
                raise TaskValidationError(f"unknown region {sub.region_id!r}")
            if obj.region_id != sub.region_id:
                raise TaskValidationError(
                    f"object {sub.object_id!r} is not in region {sub.region_id!r}"
                )
        elif sub.kind == GRAB:
            if holding is not None:
                raise TaskValidationError(f"grab {sub.object_id!r} while already holding")
            if not obj.portable:
                raise TaskValidationError(f"grab target {sub.object_id!r} is not portable")
            if prev is None or prev.kind != MOVE_TO or prev.object_id != sub.object_id:
                raise TaskValidationError(
                    f"grab {sub.object_id!r} not preceded by a move to it"
                )
            holding = sub.object_id
        elif sub.kind == RELEASE:
            if holding is None:
                raise TaskValidationError(f"release {sub.object_id!r} with empty arm")
            if holding != sub.object_id:
                raise TaskValidationError(
                    f"release {sub.object_id!r} while holding {holding!r}"
                )
            if prev is None or prev.kind != MOVE_TO:
                raise TaskValidationError(
                    f"release {sub.object_id!r} not preceded by a move to its place"
                )
            holding = None
        else:
            raise TaskValidationError(f"unknown subtask kind {sub.kind!r}")
        prev = sub


# -- template backend ------------------------------------------------------------


def _stage_candidates(scene: Scene, portable: bool) -> list:
    pool = [o for o in scene.objects if o.portable == portable]
    return sorted(pool, key=lambda o: o.id)


def _pick_target(rng: random.Random, scene: Scene, pool, prev_obj, used: set[str]):
    """Deterministically pick the next stage target, preferring a different
    region and a decent geodesic separation from the previous one."""
    from .expert import geodesic_distance

    candidates = [o for o in pool if o.id not in used]
    if prev_obj is not None:
        spread = [
            o
            for o in candidates
            if o.region_id != prev_obj.region_id
            and geodesic_distance(scene, prev_obj.position, o.position)
            >= MIN_TARGET_SEPARATION
        ]
        if not spread:
            spread = [
                o
                for o in candidates
                if scene.cell_of(o.position) != scene.cell_of(prev_obj.position)
            ]
        candidates = spread or candidates
    if not candidates:
        return None
    return rng.choice(candidates)


def _instruction(scene: Scene, stages) -> str:
    def phrase(obj) -> str:
        return f"the {obj.category} in {scene.region(obj.region_id).label}"

    if len(stages) == 2:
        return f"take {phrase(stages[0])} to {phrase(stages[1])}"
    if len(stages) == 3:
        return (
            f"take {phrase(stages[0])} to {phrase(stages[1])}, "
            f"then retrieve {phrase(stages[2])}"
        )
    return (
        f"take {phrase(stages[0])} to {phrase(stages[1])}, "
        f"then take {phrase(stages[2])} to {phrase(stages[3])}"
    )


def _subtask_chain(stages) -> tuple[Subtask, ...]:
    """Stages alternate carry/place: M G M R [M G [M R]]."""
    subs: list[Subtask] = []
    for i, obj in enumerate(stages):
        subs.append(Subtask(kind=MOVE_TO, object_id=obj.id, region_id=obj.region_id))
        if i % 2 == 0:
            subs.append(Subtask(kind=GRAB, object_id=obj.id))
        else:
            subs.append(Subtask(kind=RELEASE, object_id=stages[i - 1].id))
    return tuple(subs)


def sample_task(
    scene: Scene,
    robot: RobotConfig | None = None,
    seed: int = 0,
    allowed_stages=None,
) -> TaskSpec:
    """Sample one task from the offline template backend, deterministic
    under the seed.

    allowed_stages restricts the number of navigation stages (default 2..4,
    capped by what the scene can support).
    """
    robot = robot or ROBOTS["spot"]
    rng = random.Random(f"task:{scene.seed}:{seed}")
    regions_with_objects = {o.region_id for o in scene.objects}
    if len(regions_with_objects) < 2:
        raise SceneTooSparseError("need objects in at least two regions")
    portables = _stage_candidates(scene, portable=True)
    receptacles = _stage_candidates(scene, portable=False)
    destinations = receptacles or portables
    if not portables or not destinations:
        raise SceneTooSparseError("need at least one portable object and one place")

    max_feasible = MAX_STAGES
    if len(portables) < 2:
        max_feasible = min(max_feasible, 2)
    if len(destinations) + len(portables) < 4:
        max_feasible = min(max_feasible, 3)
    allowed = [
        n
        for n in (allowed_stages or range(MIN_STAGES, MAX_STAGES + 1))
        if MIN_STAGES <= n <= max_feasible
    ]
    if not allowed:
        raise SceneTooSparseError("scene cannot support the requested stage count")
    n_stages = rng.choice(allowed)

    stages = []
    used: set[str] = set()
    prev = None
    for i in range(n_stages):
        pool = portables if i % 2 == 0 else destinations
        obj = _pick_target(rng, scene, pool, prev, used)
        if obj is None and i % 2 == 1:
            obj = _pick_target(rng, scene, portables, prev, used)
        if obj is None:
            raise SceneTooSparseError(f"no candidate for stage {i}")
        stages.append(obj)
        used.add(obj.id)
        prev = obj

    task = TaskSpec(
        id=f"task-{scene.seed}-{seed}",
        instruction=_instruction(scene, stages),
        subtasks=_subtask_chain(stages),
        robot=robot.name,
        scene_id=scene.scene_id,
        seed=seed,
    )
    validate_task(scene, task)
    return task


def sample_spawn(
    scene: Scene, task: TaskSpec, min_dist: float = MIN_TARGET_SEPARATION
) -> AgentState:
    """Deterministic spawn for a task: a uniform free cell at least min_dist
    geodesic from the first target (falls back to the farthest reachable
    cell), with a uniform heading."""
    from .expert import field_from

    rng = random.Random(f"spawn:{task.scene_id}:{task.seed}")
    first = scene.object(task.move_targets()[0].object_id)
    field = field_from(scene, scene.cell_of(first.position))
    reachable = sorted(field.steps)
    eligible = [c for c in reachable if field.distance(c) >= min_dist]
    if not eligible:
        eligible = [max(reachable, key=lambda c: (field.distance(c), c))]
    cell = rng.choice(eligible)
    heading = normalize_heading(rng.uniform(0.0, 360.0))
    return AgentState(position=scene.cell_center(cell), heading=heading)


# -- service backend ------------------------------------------------------------


def serialize_scene_for_prompt(scene: Scene) -> str:
    payload = {
        f"Region {r.id}: {r.label.title()}": sorted(
            o.category for o in scene.objects_in_region(r.id)
        )
        for r in scene.regions
        if scene.objects_in_region(r.id)
    }
    return json.dumps(payload, sort_keys=True)


def serialize_robot_for_prompt(robot: RobotConfig) -> str:
    return (
        f"{robot.name} moves {robot.forward_step} m per step, turns "
        f"{robot.turn_step} degrees, and carries three RGB cameras "
        f"(front, left, right) at {robot.camera_height} m with a "
        f"{robot.fov_per_camera} degree field of view each."
    )


_SUBTASK_TOKEN = re.compile(r"^(Move_to|Grab|Release)\(['\"]([^'\"]+)['\"]\)$")


def parse_reply(scene: Scene, robot: RobotConfig, content: str, seed: int = 0) -> TaskSpec:
    """Parse a service reply into a validated TaskSpec.

    The reply body is a dictionary with "Task instruction" and
    "Subtask list" entries; every referenced object and region must resolve
    against the scene.
    """
    try:
        data = json.loads(content)
    except json.JSONDecodeError:
        try:
            import ast

            data = ast.literal_eval(content)
        except (ValueError, SyntaxError) as exc:
            raise LlmParseError(f"reply is not a dictionary: {exc}") from exc
    if not isinstance(data, dict) or "Task instruction" not in data or "Subtask list" not in data:
        raise LlmParseError("reply must contain 'Task instruction' and 'Subtask list'")
    instruction = data["Task instruction"]
    tokens = data["Subtask list"]
    if not isinstance(tokens, list) or not tokens:
        raise LlmParseError("'Subtask list' must be a nonempty list")

    subtasks: list[Subtask] = []
    prev_move: Subtask | None = None
    for token in tokens:
        m = _SUBTASK_TOKEN.match(str(token).strip())
        if not m:
            raise LlmParseError(f"unparseable subtask token {token!r}")
        kind, arg = m.group(1), m.group(2)
        if kind == "Move_to":
            if "_" not in arg:
                raise TaskValidationError(f"move target {arg!r} lacks a region id")
            category, region_id = arg.rsplit("_", 1)
            if not scene.has_region(region_id):
                raise TaskValidationError(f"unknown region in {arg!r}")
            matches = sorted(
                (o for o in scene.objects_in_region(region_id) if o.category == category),
                key=lambda o: o.id,
            )
            if not matches:
                raise TaskValidationError(
                    f"no {category!r} in region {region_id!r} (token {arg!r})"
                )
            sub = Subtask(kind=MOVE_TO, object_id=matches[0].id, region_id=region_id)
            prev_move = sub
            subtasks.append(sub)
        else:
            if prev_move is None:
                raise TaskValidationError(f"{kind} {arg!r} has no preceding move")
            if kind == "Grab":
                target = scene.object(prev_move.object_id)
                if target.category != arg:
                    raise TaskValidationError(
                        f"grab names {arg!r} but the move went to {target.category!r}"
                    )
                subtasks.append(Subtask(kind=GRAB, object_id=target.id))
            else:
                held = next(
                    (s for s in reversed(subtasks) if s.kind == GRAB), None
                )
                if held is None or scene.object(held.object_id).category != arg:
                    raise TaskValidationError(f"release names unheld object {arg!r}")
                subtasks.append(Subtask(kind=RELEASE, object_id=held.object_id))

    import hashlib

    digest = hashlib.sha256(instruction.encode("utf-8")).hexdigest()[:8]
    task = TaskSpec(
        id=f"llm-task-{digest}-{seed}",
        instruction=instruction,
        subtasks=tuple(subtasks),
        robot=robot.name,
        scene_id=scene.scene_id,
        seed=seed,
    )
    validate_task(scene, task)
    return task


def chat_completion(cfg: LlmClientConfig, system: str, user: str) -> str:
    """One blocking chat-completion round trip; returns the assistant body.

    Each call opens its own connection, so concurrent workers never share
    state.
    """
    if not cfg.enabled:
        raise ValueError("LLM client is disabled")
    body = {
        "model": cfg.model,
        "temperature": 0,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
    }
    req = urllib.request.Request(
        cfg.endpoint,
        data=json.dumps(body).encode("utf-8"),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise LlmNetworkError(f"request to {cfg.endpoint} failed: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LlmParseError(f"response is not JSON: {exc}") from exc
    try:
        return payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise LlmParseError(f"malformed chat completion payload: {exc}") from exc


def generate_via_llm(
    scene: Scene, robot: RobotConfig, cfg: LlmClientConfig, seed: int = 0
) -> TaskSpec:
    """Request one task from a chat-completion endpoint and validate it.

    Network failures, unparseable replies, and invariant violations raise
    distinct error types.
    """
    content = chat_completion(
        cfg,
        load_prompt("forward_task"),
        (
            f"Scene: {serialize_scene_for_prompt(scene)}\n"
            f"Robot: {serialize_robot_for_prompt(robot)}"
        ),
    )
    return parse_reply(scene, robot, content, seed=seed)


# -- persistence ------------------------------------------------------------------


def save_tasks(tasks: list[TaskSpec], path: str | Path) -> None:
    data = [t.to_dict() for t in tasks]
    Path(path).write_text(
        json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_tasks(path: str | Path) -> list[TaskSpec]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [TaskSpec.from_dict(d) for d in data]
