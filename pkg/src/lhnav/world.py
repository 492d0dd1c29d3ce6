"""Deterministic 2D grid environment with continuous agent pose.

The world is a single-floor occupancy grid (default 0.25 m cells) populated
with regioned object instances.  The agent moves with four atomic actions
(move forward +0.25 m, turn left/right +-30 deg, stop) and senses through
three cameras facing +60/0/-60 degrees relative to its heading.  A
navigation target counts as reached when the agent is within a 1 m geodesic
distance, the target sits inside a 60 degree frontal cone, and the line of
sight is clear.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path

CELL_SIZE = 0.25          # meters per grid cell
SUCCESS_RADIUS = 1.0      # meters, geodesic
SUCCESS_CONE_DEG = 60.0   # frontal cone for task success; task semantics, not camera fov

OCCUPIED = "#"
FREE = "."


class Action(IntEnum):
    """Atomic actions.  Index order doubles as the decision-vector layout
    (candidate 0 is stop)."""

    STOP = 0
    TURN_LEFT = 1
    MOVE_FORWARD = 2
    TURN_RIGHT = 3


ACTION_NAMES = {
    Action.STOP: "stop",
    Action.TURN_LEFT: "turn_left",
    Action.MOVE_FORWARD: "move_forward",
    Action.TURN_RIGHT: "turn_right",
}
ACTION_BY_NAME = {v: k for k, v in ACTION_NAMES.items()}


class SceneValidationError(ValueError):
    pass


class UnknownObjectError(KeyError):
    pass


@dataclass(frozen=True)
class Region:
    id: str
    label: str
    cells: tuple[tuple[int, int], ...]  # (row, col)


@dataclass(frozen=True)
class ObjectInstance:
    id: str
    category: str
    region_id: str
    position: tuple[float, float]  # meters (x, y)
    portable: bool


@dataclass(frozen=True)
class RobotConfig:
    name: str = "spot"
    camera_height: float = 0.5
    forward_step: float = 0.25
    turn_step: float = 30.0
    fov_per_camera: float = 60.0
    sensing_range: float = 5.0

    def __post_init__(self) -> None:
        if self.forward_step <= 0:
            raise ValueError("forward_step must be positive")
        if not 0 < self.turn_step <= 90:
            raise ValueError("turn_step must be in (0, 90]")
        if not 0 < self.fov_per_camera <= 180:
            raise ValueError("fov_per_camera must be in (0, 180]")


# Stock robot platforms; camera heights differ but only the name is persisted.
ROBOTS = {
    "spot": RobotConfig(name="spot", camera_height=0.5),
    "stretch": RobotConfig(name="stretch", camera_height=1.2),
}


def normalize_heading(deg: float) -> float:
    """Wrap a heading into [0, 360)."""
    h = deg % 360.0
    return h if h != 360.0 else 0.0


def signed_angle(deg: float) -> float:
    """Wrap an angle difference into (-180, 180]."""
    a = deg % 360.0
    return a - 360.0 if a > 180.0 else a


@dataclass(frozen=True)
class AgentState:
    position: tuple[float, float]
    heading: float  # degrees in [0, 360)
    holding: str | None = None


@dataclass(frozen=True)
class SightedObject:
    object_id: str
    category: str
    bearing: float  # degrees relative to heading, (-180, 180]
    range: float    # meters, euclidean


@dataclass(frozen=True)
class View:
    direction: str  # "left" | "front" | "right"
    offset: float   # camera axis relative to heading
    objects: tuple[SightedObject, ...]


@dataclass(frozen=True)
class Observation:
    views: tuple[View, View, View]

    def visible_ids(self) -> set[str]:
        return {o.object_id for v in self.views for o in v.objects}

    def visible(self) -> list[SightedObject]:
        return [o for v in self.views for o in v.objects]


class Scene:
    """Immutable occupancy grid plus regions and object instances.

    Rows index y (row 0 spans y in [0, cell)), columns index x.  The grid
    must be bordered by occupied cells so the agent can never leave it.
    """

    def __init__(
        self,
        grid: list[str] | tuple[str, ...],
        regions: list[Region] | tuple[Region, ...],
        objects: list[ObjectInstance] | tuple[ObjectInstance, ...],
        seed: int = 0,
        cell_size: float = CELL_SIZE,
    ):
        self.grid = tuple(grid)
        self.regions = tuple(regions)
        self.objects = tuple(objects)
        self.seed = int(seed)
        self.cell_size = float(cell_size)
        self._objects_by_id = {o.id: o for o in self.objects}
        self._regions_by_id = {r.id: r for r in self.regions}
        self._region_of_cell: dict[tuple[int, int], Region] = {}
        for r in self.regions:
            for c in r.cells:
                self._region_of_cell[c] = r
        # per-instance cache for geodesic fields, keyed by source cell
        self._field_cache: dict[tuple[int, int], object] = {}
        self._validate()

    # -- geometry helpers ---------------------------------------------------

    @property
    def rows(self) -> int:
        return len(self.grid)

    @property
    def cols(self) -> int:
        return len(self.grid[0]) if self.grid else 0

    @property
    def scene_id(self) -> str:
        return f"scene-{self.seed}"

    def is_free(self, row: int, col: int) -> bool:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            return False
        return self.grid[row][col] == FREE

    def cell_of(self, point: tuple[float, float]) -> tuple[int, int]:
        x, y = point
        return int(math.floor(y / self.cell_size)), int(math.floor(x / self.cell_size))

    def cell_center(self, cell: tuple[int, int]) -> tuple[float, float]:
        row, col = cell
        return ((col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size)

    def free_cells(self) -> list[tuple[int, int]]:
        return [
            (r, c)
            for r in range(self.rows)
            for c in range(self.cols)
            if self.grid[r][c] == FREE
        ]

    def object(self, object_id: str) -> ObjectInstance:
        try:
            return self._objects_by_id[object_id]
        except KeyError:
            raise UnknownObjectError(object_id) from None

    def has_object(self, object_id: str) -> bool:
        return object_id in self._objects_by_id

    def region(self, region_id: str) -> Region:
        return self._regions_by_id[region_id]

    def has_region(self, region_id: str) -> bool:
        return region_id in self._regions_by_id

    def region_at(self, cell: tuple[int, int]) -> Region | None:
        return self._region_of_cell.get(cell)

    def objects_in_region(self, region_id: str) -> list[ObjectInstance]:
        return [o for o in self.objects if o.region_id == region_id]

    # -- validation ---------------------------------------------------------

    def _validate(self) -> None:
        if not self.grid or not self.grid[0]:
            raise SceneValidationError("grid must be nonempty")
        width = len(self.grid[0])
        for i, row in enumerate(self.grid):
            if len(row) != width:
                raise SceneValidationError(f"row {i} has inconsistent width")
            if any(ch not in (OCCUPIED, FREE) for ch in row):
                raise SceneValidationError(f"row {i} contains invalid characters")
        border = (
            all(ch == OCCUPIED for ch in self.grid[0])
            and all(ch == OCCUPIED for ch in self.grid[-1])
            and all(row[0] == OCCUPIED and row[-1] == OCCUPIED for row in self.grid)
        )
        if not border:
            raise SceneValidationError("grid must be bordered by occupied cells")
        if len(self._regions_by_id) != len(self.regions):
            raise SceneValidationError("region ids must be unique")
        seen_cells: set[tuple[int, int]] = set()
        for r in self.regions:
            for cell in r.cells:
                if not self.is_free(*cell):
                    raise SceneValidationError(
                        f"region {r.id!r} contains occupied cell {cell}"
                    )
                if cell in seen_cells:
                    raise SceneValidationError(f"cell {cell} assigned to two regions")
                seen_cells.add(cell)
        if len(self._objects_by_id) != len(self.objects):
            raise SceneValidationError("object ids must be unique")
        for o in self.objects:
            if not o.category:
                raise SceneValidationError(f"object {o.id!r} has empty category")
            if o.region_id not in self._regions_by_id:
                raise SceneValidationError(
                    f"object {o.id!r} references unknown region {o.region_id!r}"
                )
            cell = self.cell_of(o.position)
            if not self.is_free(*cell):
                raise SceneValidationError(f"object {o.id!r} sits in occupied cell")
            if cell not in set(self._regions_by_id[o.region_id].cells):
                raise SceneValidationError(
                    f"object {o.id!r} lies outside its region {o.region_id!r}"
                )

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "grid": list(self.grid),
            "regions": [
                {"id": r.id, "label": r.label, "cells": [list(c) for c in r.cells]}
                for r in self.regions
            ],
            "objects": [
                {
                    "id": o.id,
                    "category": o.category,
                    "region_id": o.region_id,
                    "position": list(o.position),
                    "portable": o.portable,
                }
                for o in self.objects
            ],
            "seed": self.seed,
            "cell_size": self.cell_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        regions = [
            Region(
                id=r["id"],
                label=r["label"],
                cells=tuple(tuple(c) for c in r["cells"]),
            )
            for r in data["regions"]
        ]
        objects = [
            ObjectInstance(
                id=o["id"],
                category=o["category"],
                region_id=o["region_id"],
                position=tuple(o["position"]),
                portable=bool(o["portable"]),
            )
            for o in data["objects"]
        ]
        return cls(
            grid=data["grid"],
            regions=regions,
            objects=objects,
            seed=data.get("seed", 0),
            cell_size=data.get("cell_size", CELL_SIZE),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(canonical_json(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Scene":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def canonical_json(data: dict) -> str:
    """Canonical JSON form used everywhere a file must round-trip bit-exactly."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def validate_state(scene: Scene, state: AgentState) -> None:
    if not scene.is_free(*scene.cell_of(state.position)):
        raise ValueError(f"agent position {state.position} is not in free space")
    if not 0 <= state.heading < 360:
        raise ValueError(f"heading {state.heading} not normalized")
    if state.holding is not None and not scene.has_object(state.holding):
        raise ValueError(f"held object {state.holding!r} not in scene")


# -- line of sight ----------------------------------------------------------


def cells_on_segment(
    scene: Scene, a: tuple[float, float], b: tuple[float, float]
):
    """Yield every grid cell the segment from a to b passes through.

    Amanatides-Woo traversal; on an exact corner tie the column advances
    first, which makes occlusion deterministic.
    """
    cs = scene.cell_size
    (x0, y0), (x1, y1) = a, b
    row = int(math.floor(y0 / cs))
    col = int(math.floor(x0 / cs))
    row1 = int(math.floor(y1 / cs))
    col1 = int(math.floor(x1 / cs))
    yield (row, col)
    dx = x1 - x0
    dy = y1 - y0
    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    if dx != 0:
        next_x = (col + (1 if dx > 0 else 0)) * cs
        t_max_x = (next_x - x0) / dx
        t_delta_x = cs / abs(dx)
    else:
        t_max_x = math.inf
        t_delta_x = math.inf
    if dy != 0:
        next_y = (row + (1 if dy > 0 else 0)) * cs
        t_max_y = (next_y - y0) / dy
        t_delta_y = cs / abs(dy)
    else:
        t_max_y = math.inf
        t_delta_y = math.inf
    # the traversal can take at most this many boundary crossings
    remaining = abs(row1 - row) + abs(col1 - col) + 4
    while (row, col) != (row1, col1) and remaining > 0:
        if t_max_x <= t_max_y:
            col += step_c
            t_max_x += t_delta_x
        else:
            row += step_r
            t_max_y += t_delta_y
        remaining -= 1
        yield (row, col)


def line_of_sight(
    scene: Scene, a: tuple[float, float], b: tuple[float, float]
) -> bool:
    """True when the straight segment from a to b crosses no occupied cell."""
    return all(scene.is_free(r, c) for r, c in cells_on_segment(scene, a, b))


# -- operations -------------------------------------------------------------


@dataclass(frozen=True)
class StepResult:
    state: AgentState
    collided: bool = False
    stopped: bool = False


def apply_action(
    scene: Scene, state: AgentState, action: Action, robot: RobotConfig | None = None
) -> StepResult:
    """Apply one atomic action.

    Forward moves are blocked (position unchanged, collided flag set) when
    the destination cell is occupied; turns rotate by the robot's turn step;
    stop leaves the state unchanged and flags episode-level stop.
    """
    robot = robot or ROBOTS["spot"]
    if action == Action.STOP:
        return StepResult(state, stopped=True)
    if action == Action.TURN_LEFT:
        return StepResult(replace(state, heading=normalize_heading(state.heading + robot.turn_step)))
    if action == Action.TURN_RIGHT:
        return StepResult(replace(state, heading=normalize_heading(state.heading - robot.turn_step)))
    rad = math.radians(state.heading)
    x, y = state.position
    nx = x + robot.forward_step * math.cos(rad)
    ny = y + robot.forward_step * math.sin(rad)
    if not scene.is_free(*scene.cell_of((nx, ny))):
        return StepResult(state, collided=True)
    return StepResult(replace(state, position=(nx, ny)))


# camera order also fixes the tie break: on a shared fov boundary the
# object goes to the camera with the smaller index
CAMERA_OFFSETS = (("left", 60.0), ("front", 0.0), ("right", -60.0))


def observe(scene: Scene, state: AgentState, robot: RobotConfig | None = None) -> Observation:
    """Sense the scene through the three fixed cameras.

    An object is visible when its bearing falls within some camera's fov,
    its euclidean range is within the sensing range, and the line of sight
    crosses no occupied cell.  Each visible object lands in exactly one view.
    """
    robot = robot or ROBOTS["spot"]
    half_fov = robot.fov_per_camera / 2.0
    buckets: dict[str, list[SightedObject]] = {name: [] for name, _ in CAMERA_OFFSETS}
    ax, ay = state.position
    for obj in scene.objects:
        dx = obj.position[0] - ax
        dy = obj.position[1] - ay
        rng = math.hypot(dx, dy)
        if rng > robot.sensing_range:
            continue
        bearing = 0.0 if rng < 1e-9 else signed_angle(math.degrees(math.atan2(dy, dx)) - state.heading)
        camera = None
        for name, offset in CAMERA_OFFSETS:
            if abs(signed_angle(bearing - offset)) <= half_fov:
                camera = name
                break
        if camera is None:
            continue
        if not line_of_sight(scene, state.position, obj.position):
            continue
        buckets[camera].append(
            SightedObject(object_id=obj.id, category=obj.category, bearing=bearing, range=rng)
        )
    views = tuple(
        View(direction=name, offset=offset, objects=tuple(sorted(buckets[name], key=lambda s: (s.range, s.object_id))))
        for name, offset in CAMERA_OFFSETS
    )
    return Observation(views=views)  # type: ignore[arg-type]


def bearing_to(state: AgentState, point: tuple[float, float]) -> float:
    """Bearing of a point relative to the agent heading, in (-180, 180]."""
    dx = point[0] - state.position[0]
    dy = point[1] - state.position[1]
    if math.hypot(dx, dy) < 1e-9:
        return 0.0
    return signed_angle(math.degrees(math.atan2(dy, dx)) - state.heading)


def subtask_success(
    scene: Scene, state: AgentState, target: str, robot: RobotConfig | None = None
) -> bool:
    """Navigation success predicate for a single target.

    Requires geodesic distance <= 1 m, bearing inside the 60 degree frontal
    cone, and clear line of sight.  The cone is part of the task definition
    and does not scale with the camera fov.
    """
    from .expert import geodesic_distance

    obj = scene.object(target)
    dist = geodesic_distance(scene, state.position, obj.position)
    if not dist <= SUCCESS_RADIUS:  # also rejects unreachable (inf)
        return False
    if abs(bearing_to(state, obj.position)) > SUCCESS_CONE_DEG / 2.0:
        return False
    return line_of_sight(scene, state.position, obj.position)


def apply_grab(
    scene: Scene, state: AgentState, object_id: str, robot: RobotConfig | None = None
) -> tuple[AgentState, bool]:
    """Pick up an object: requires an empty arm and the success predicate.

    Pure bookkeeping; the scene itself never changes.
    """
    obj = scene.object(object_id)
    if state.holding is not None:
        return state, False
    if not obj.portable:
        return state, False
    if not subtask_success(scene, state, object_id, robot):
        return state, False
    return replace(state, holding=object_id), True


def apply_release(
    scene: Scene,
    state: AgentState,
    object_id: str,
    place_id: str,
    robot: RobotConfig | None = None,
) -> tuple[AgentState, bool]:
    """Put down the held object at a place (the preceding move target).

    Succeeds when the matching object is in hand and the agent satisfies the
    success predicate for the place.  Held objects have no position of their
    own, so the place anchors the check.
    """
    scene.object(object_id)
    if state.holding != object_id:
        return state, False
    if not subtask_success(scene, state, place_id, robot):
        return state, False
    return replace(state, holding=None), True
