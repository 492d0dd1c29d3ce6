"""Geodesic shortest paths on the occupancy grid and the greedy expert policy.

Distances are 8-connected grid geodesics: axis steps cost one cell, diagonal
steps cost sqrt(2) cells, and a diagonal move is legal only when both
adjacent axis cells are free (no corner cutting).  Internally every distance
is kept as an integer pair (axis steps, diagonal steps) so two independent
implementations convert to meters through the identical expression and can
be compared bit-for-bit.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from .world import Action, AgentState, Scene, bearing_to, subtask_success
from .world import RobotConfig, ROBOTS
from .trajectory import StepRecord, SubtaskSpan, Trajectory

SQRT2 = math.sqrt(2.0)

UNREACHABLE = math.inf


class UnreachableTargetError(ValueError):
    pass


class BudgetExhaustedError(RuntimeError):
    pass


def steps_to_meters(axis: int, diag: int, cell_size: float) -> float:
    """Canonical conversion from step counts to meters."""
    return (axis + diag * SQRT2) * cell_size


@dataclass
class GeodesicField:
    """Distances from one source cell to every reachable cell."""

    source: tuple[int, int]
    steps: dict[tuple[int, int], tuple[int, int]]  # cell -> (axis, diag)
    pred: dict[tuple[int, int], tuple[int, int]]
    cell_size: float

    def distance(self, cell: tuple[int, int]) -> float:
        s = self.steps.get(cell)
        if s is None:
            return UNREACHABLE
        return steps_to_meters(s[0], s[1], self.cell_size)


def grid_neighbors(scene: Scene, cell: tuple[int, int]):
    """Yield (neighbor, is_diagonal) moves legal from a cell."""
    r, c = cell
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        if scene.is_free(r + dr, c + dc):
            yield (r + dr, c + dc), False
    for dr, dc in ((-1, -1), (-1, 1), (1, -1), (1, 1)):
        if (
            scene.is_free(r + dr, c + dc)
            and scene.is_free(r + dr, c)
            and scene.is_free(r, c + dc)
        ):
            yield (r + dr, c + dc), True


def compute_field(scene: Scene, source: tuple[int, int]) -> GeodesicField:
    """Dijkstra over the 8-connected grid from a source cell."""
    if not scene.is_free(*source):
        raise ValueError(f"source cell {source} is occupied")
    steps: dict[tuple[int, int], tuple[int, int]] = {source: (0, 0)}
    pred: dict[tuple[int, int], tuple[int, int]] = {}
    # priority uses the float value; distinct (axis, diag) pairs cannot
    # collide at grid scale because sqrt(2) is irrational
    heap: list[tuple[float, int, int]] = [(0.0, *source)]
    done: set[tuple[int, int]] = set()
    while heap:
        _, r, c = heapq.heappop(heap)
        cell = (r, c)
        if cell in done:
            continue
        done.add(cell)
        a, d = steps[cell]
        for nb, diag in grid_neighbors(scene, cell):
            cand = (a, d + 1) if diag else (a + 1, d)
            cur = steps.get(nb)
            if cur is None or cand[0] + cand[1] * SQRT2 < cur[0] + cur[1] * SQRT2:
                steps[nb] = cand
                pred[nb] = cell
                heapq.heappush(heap, (cand[0] + cand[1] * SQRT2, *nb))
    return GeodesicField(source=source, steps=steps, pred=pred, cell_size=scene.cell_size)


def field_from(scene: Scene, source: tuple[int, int]) -> GeodesicField:
    """Cached field lookup; scenes are immutable so entries never go stale."""
    cache = scene._field_cache
    f = cache.get(source)
    if f is None:
        f = compute_field(scene, source)
        cache[source] = f
    return f  # type: ignore[return-value]


def geodesic_distance(
    scene: Scene, a: tuple[float, float], b: tuple[float, float]
) -> float:
    """Shortest 8-connected path length between the cells of two points.

    Returns math.inf when the points lie in different connected components.
    """
    ca = scene.cell_of(a)
    cb = scene.cell_of(b)
    if not scene.is_free(*ca):
        raise ValueError(f"point {a} lies in an occupied cell")
    if not scene.is_free(*cb):
        raise ValueError(f"point {b} lies in an occupied cell")
    return field_from(scene, ca).distance(cb)


# -- expert policy ----------------------------------------------------------

# fixed probe order keeps the waypoint choice deterministic
_NEIGHBOR_ORDER = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


def _next_waypoint(
    scene: Scene, field: GeodesicField, cell: tuple[int, int]
) -> tuple[int, int] | None:
    """The adjacent cell that strictly descends the distance field."""
    best = None
    best_key = field.steps[cell]
    best_val = best_key[0] + best_key[1] * SQRT2
    for dr, dc in _NEIGHBOR_ORDER:
        nb = (cell[0] + dr, cell[1] + dc)
        s = field.steps.get(nb)
        if s is None:
            continue
        diag = dr != 0 and dc != 0
        if diag and not (scene.is_free(cell[0] + dr, cell[1]) and scene.is_free(cell[0], cell[1] + dc)):
            continue
        val = s[0] + s[1] * SQRT2
        if val < best_val:
            best_val = val
            best = nb
    return best


def expert_next_action(
    scene: Scene,
    state: AgentState,
    target: str,
    robot: RobotConfig | None = None,
) -> Action:
    """Greedy pathfinder step toward a target object.

    Stops when the success predicate holds; otherwise turns toward the next
    waypoint while the heading error exceeds half a turn step, then moves
    forward.  A 180 degree tie turns left.
    """
    robot = robot or ROBOTS["spot"]
    if subtask_success(scene, state, target, robot):
        return Action.STOP
    obj = scene.object(target)
    target_cell = scene.cell_of(obj.position)
    field = field_from(scene, target_cell)
    cell = scene.cell_of(state.position)
    if cell not in field.steps:
        raise UnreachableTargetError(f"target {target!r} unreachable from {cell}")
    if cell == target_cell:
        aim = obj.position
    else:
        waypoint = _next_waypoint(scene, field, cell)
        if waypoint is None:  # only the target cell itself has no descent
            aim = obj.position
        else:
            aim = scene.cell_center(waypoint)
    error = bearing_to(state, aim)
    if abs(error) <= robot.turn_step / 2.0:
        return Action.MOVE_FORWARD
    return Action.TURN_LEFT if error > 0 else Action.TURN_RIGHT


def expert_rollout(
    scene: Scene,
    start: AgentState,
    targets: list[str],
    robot: RobotConfig | None = None,
    budget: int = 500,
    task_id: str = "rollout",
) -> Trajectory:
    """Run the expert through an ordered target list, one stop per target.

    Each subtask records the geodesic distance from its start pose as the
    ground-truth path length.  Raises when a target is unreachable or the
    per-subtask budget runs out.
    """
    from .world import apply_action

    robot = robot or ROBOTS["spot"]
    state = start
    steps: list[StepRecord] = []
    spans: list[SubtaskSpan] = []
    for sub_idx, target in enumerate(targets):
        obj = scene.object(target)
        gt = geodesic_distance(scene, state.position, obj.position)
        if gt == UNREACHABLE:
            raise UnreachableTargetError(f"target {target!r} unreachable")
        seg_start = len(steps)
        stopped = False
        for _ in range(budget):
            action = expert_next_action(scene, state, target, robot)
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
            state = result.state
            if result.stopped:
                stopped = True
                break
        if not stopped:
            raise BudgetExhaustedError(
                f"expert exceeded {budget} steps on subtask {sub_idx} ({target!r})"
            )
        spans.append(
            SubtaskSpan(
                index=sub_idx,
                kind="move_to",
                target_id=target,
                start=seg_start,
                end=len(steps),
                gt=gt,
                stopped=True,
            )
        )
    return Trajectory(
        task_id=task_id,
        scene_id=scene.scene_id,
        robot=robot.name,
        steps=steps,
        spans=spans,
        final_state=state,
    )
