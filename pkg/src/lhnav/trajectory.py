"""Step-level trajectory records shared by the expert generator and the runner.

A trajectory file is JSONL: one header line carrying episode identity and
the config hash, then one line per step record.  Loading a saved trajectory
reproduces it exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .world import ACTION_BY_NAME, ACTION_NAMES, Action, AgentState


@dataclass(frozen=True)
class StepRecord:
    index: int
    state: AgentState  # pose before the action
    action: Action
    collided: bool
    obs_id: str
    subtask: int

    def to_dict(self) -> dict:
        return {
            "i": self.index,
            "pose": [self.state.position[0], self.state.position[1], self.state.heading],
            "holding": self.state.holding,
            "action": ACTION_NAMES[self.action],
            "collided": self.collided,
            "obs_id": self.obs_id,
            "subtask": self.subtask,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        x, y, heading = d["pose"]
        return cls(
            index=d["i"],
            state=AgentState(position=(x, y), heading=heading, holding=d.get("holding")),
            action=ACTION_BY_NAME[d["action"]],
            collided=bool(d["collided"]),
            obs_id=d["obs_id"],
            subtask=d["subtask"],
        )


@dataclass(frozen=True)
class SubtaskSpan:
    """One subtask's slice of the step list; end is exclusive."""

    index: int
    kind: str         # move_to | grab | release
    target_id: str
    start: int
    end: int
    gt: float         # geodesic distance at subtask start (move_to only)
    stopped: bool     # ended with an explicit stop rather than truncation
    interaction_ok: bool | None = None  # grab/release outcome

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "kind": self.kind,
            "target_id": self.target_id,
            "start": self.start,
            "end": self.end,
            "gt": self.gt,
            "stopped": self.stopped,
            "interaction_ok": self.interaction_ok,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubtaskSpan":
        return cls(
            index=d["index"],
            kind=d["kind"],
            target_id=d["target_id"],
            start=d["start"],
            end=d["end"],
            gt=d["gt"],
            stopped=bool(d["stopped"]),
            interaction_ok=d.get("interaction_ok"),
        )


@dataclass
class Trajectory:
    task_id: str
    scene_id: str
    robot: str
    steps: list[StepRecord]
    spans: list[SubtaskSpan]
    final_state: AgentState
    config_hash: str = ""
    seed: int = 0

    def actions(self, span: SubtaskSpan | None = None) -> list[Action]:
        records = self.steps if span is None else self.steps[span.start : span.end]
        return [r.action for r in records]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "task_id": self.task_id,
                "scene_id": self.scene_id,
                "robot": self.robot,
                "config_hash": self.config_hash,
                "seed": self.seed,
                "final_pose": [
                    self.final_state.position[0],
                    self.final_state.position[1],
                    self.final_state.heading,
                ],
                "final_holding": self.final_state.holding,
                "spans": [s.to_dict() for s in self.spans],
            }
            fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
            for step in self.steps:
                fh.write(json.dumps(step.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Trajectory":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        header = json.loads(lines[0])
        steps = [StepRecord.from_dict(json.loads(ln)) for ln in lines[1:]]
        fx, fy, fh_deg = header["final_pose"]
        return cls(
            task_id=header["task_id"],
            scene_id=header["scene_id"],
            robot=header["robot"],
            steps=steps,
            spans=[SubtaskSpan.from_dict(s) for s in header["spans"]],
            final_state=AgentState(
                position=(fx, fy), heading=fh_deg, holding=header.get("final_holding")
            ),
            config_hash=header.get("config_hash", ""),
            seed=header.get("seed", 0),
        )
