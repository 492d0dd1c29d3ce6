"""Split single-stage action traces into labeled segments and render them as
step-by-step instructions.

Segmentation slides a 3-wide window over the trace for each turn symbol.
A window holding at least two occurrences yields a turn record spanning the
first two of them, and scanning resumes right after the second.  Sorted
records merge when a same-label successor starts within three indices of
the previous end.  Merged records become turn segments padded by one action
of context on each side, with move-forward filler segments between them.

The printed recipe drops any actions after the last turn record; since a
step-by-step task has to end at its target, the default mode appends a
trailing move-forward segment covering that tail (and turns a turn-free
trace into a single forward segment).  Literal mode switches the extension
off.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from .world import Action, RobotConfig, Scene, observe

FORWARD = "move_forward"
TURN_LEFT = "turn_left"
TURN_RIGHT = "turn_right"

_SYMBOLS = {"F": FORWARD, "L": TURN_LEFT, "R": TURN_RIGHT}
_ACTION_SYMBOLS = {
    Action.MOVE_FORWARD: "F",
    Action.TURN_LEFT: "L",
    Action.TURN_RIGHT: "R",
}


@dataclass(frozen=True)
class Tag:
    name: str
    kind: str  # "object" | "region"
    confidence: float


@dataclass(frozen=True)
class Segment:
    label: str  # move_forward | turn_left | turn_right
    start: int  # inclusive index into the action trace
    end: int    # inclusive
    tags: tuple[Tag, ...] = ()

    def with_tags(self, tags: tuple[Tag, ...]) -> "Segment":
        return Segment(label=self.label, start=self.start, end=self.end, tags=tags)


@dataclass(frozen=True)
class StepByStepTask:
    target: str
    steps: tuple[tuple[str, str], ...]  # (action label, chosen tag)
    instruction: str
    source_task_id: str = ""
    source_subtask: int = -1

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "steps": [list(s) for s in self.steps],
            "instruction": self.instruction,
            "source_task_id": self.source_task_id,
            "source_subtask": self.source_subtask,
        }


def normalize_actions(actions) -> str:
    """Coerce a trace of Action values or F/L/R symbols into a symbol string."""
    out = []
    for a in actions:
        if isinstance(a, Action):
            if a == Action.STOP:
                raise ValueError("strip the trailing stop before splitting")
            out.append(_ACTION_SYMBOLS[a])
        elif a in _SYMBOLS:
            out.append(a)
        else:
            raise ValueError(f"unknown action symbol {a!r}")
    return "".join(out)


def turn_records(symbols: str, turn: str) -> list[tuple[int, int, str]]:
    """Scan one turn symbol, recording the first two occurrences of every
    firing window and resuming after the second."""
    records = []
    i, n = 0, len(symbols)
    while i < n - 3:
        window = symbols[i : i + 3]
        if window.count(turn) >= 2:
            hits = [i + k for k, s in enumerate(window) if s == turn]
            first, second = hits[0], hits[1]
            records.append((first, second, turn))
            i = second + 1
        else:
            i += 1
    return records


def merge_records(records: list[tuple[int, int, str]]) -> list[tuple[int, int, str]]:
    """Fuse sorted records whose same-label successor starts within 3 of the
    previous end."""
    if not records:
        return []
    merged = []
    c_start, c_end, c_label = records[0]
    for start, end, label in records[1:]:
        if start <= c_end + 3 and label == c_label:
            c_end = max(c_end, end)
        else:
            merged.append((c_start, c_end, c_label))
            c_start, c_end, c_label = start, end, label
    merged.append((c_start, c_end, c_label))
    return merged


def split_trajectory(actions, include_tail: bool = True) -> list[Segment]:
    """Segment an action trace over {F, L, R}.

    include_tail=False reproduces the bare recipe, which drops tail actions
    after the last turn record and yields nothing for a turn-free trace.
    """
    symbols = normalize_actions(actions)
    if not symbols:
        raise ValueError("action trace must be nonempty")
    n = len(symbols)
    records = sorted(turn_records(symbols, "L") + turn_records(symbols, "R"))
    merged = merge_records(records)
    if not merged:
        return [Segment(FORWARD, 0, n - 1)] if include_tail else []
    segments: list[Segment] = []
    last_end = -1
    for start, end, label in merged:
        if last_end + 2 < start:
            segments.append(Segment(FORWARD, last_end + 1, start - 1))
        segments.append(Segment(_SYMBOLS[label], max(start - 1, 0), min(end + 1, n - 1)))
        last_end = end
    if include_tail and last_end + 1 <= n - 1:
        segments.append(Segment(FORWARD, last_end + 1, n - 1))
    return segments


# -- tagging ------------------------------------------------------------------


def tag_segment(
    scene: Scene,
    steps,
    segment: Segment,
    robot: RobotConfig | None = None,
    top: int = 5,
) -> tuple[Tag, ...]:
    """Most frequent visible object categories and region labels over the
    segment's observations, occurrence fraction as confidence, top five.

    steps is the per-subtask StepRecord list the segment indices refer to.
    Deterministic stand-in for a learned image tagger.
    """
    lo = max(segment.start, 0)
    hi = min(segment.end, len(steps) - 1)
    if lo > hi:
        raise ValueError(f"segment [{segment.start}, {segment.end}] out of range")
    counts: Counter[tuple[str, str]] = Counter()
    n_steps = hi - lo + 1
    for idx in range(lo, hi + 1):
        state = steps[idx].state
        obs = observe(scene, state, robot)
        seen = {o.category for o in obs.visible()}
        for cat in seen:
            counts[(cat, "object")] += 1
        region = scene.region_at(scene.cell_of(state.position))
        if region is not None:
            counts[(region.label, "region")] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))
    return tuple(
        Tag(name=name, kind=kind, confidence=count / n_steps)
        for (name, kind), count in ranked[:top]
    )


# -- instruction rendering -----------------------------------------------------

_GENERIC_TAG = "open area"


def _choose_tag(segment: Segment, target: str) -> str:
    """One tag per step: forward steps prefer region tags, turns prefer
    object tags; the target category itself never serves as a waypoint."""
    preferred = "region" if segment.label == FORWARD else "object"
    candidates = [t for t in segment.tags if t.name != target]
    for kind in (preferred, "region" if preferred == "object" else "object"):
        pool = [t for t in candidates if t.kind == kind]
        if pool:
            best = max(pool, key=lambda t: (t.confidence, ))
            top_conf = best.confidence
            return min(t.name for t in pool if t.confidence == top_conf)
    return _GENERIC_TAG


def render_step_instruction(
    target: str,
    segments: list[Segment],
    source_task_id: str = "",
    source_subtask: int = -1,
) -> StepByStepTask:
    """Compose a step-by-step instruction from tagged segments.

    One clause per segment in trace order; the final clause always walks
    straight to the target, which is mentioned exactly once.
    """
    if not segments:
        raise ValueError("need at least one segment")
    steps = []
    for i, seg in enumerate(segments):
        if i == len(segments) - 1 and seg.label == FORWARD:
            steps.append((seg.label, target))  # the walk to the target is the step
        else:
            steps.append((seg.label, _choose_tag(seg, target)))
    steps = tuple(steps)
    clauses: list[str] = []
    for i, (seg, (_, tag)) in enumerate(zip(segments, steps)):
        last = i == len(segments) - 1
        if seg.label == FORWARD:
            if last and len(segments) == 1:
                clauses.append(f"go straight to the {target}")
            elif last:
                clauses.append(f"finally go straight to the {target}")
            elif i == 0:
                clauses.append(f"move forward through the {tag}")
            else:
                clauses.append(f"go ahead through the {tag}")
        elif seg.label == TURN_LEFT:
            clauses.append(f"make a left turn at the {tag}")
        else:
            clauses.append(f"turn right at the {tag}")
    if segments[-1].label != FORWARD:
        clauses.append(f"finally go straight to the {target}")
    if len(clauses) == 1:
        text = clauses[0]
    else:
        text = clauses[0] + " and " + clauses[1]
        for clause in clauses[2:]:
            text += ", " + clause
    text = text[0].upper() + text[1:] + "."
    return StepByStepTask(
        target=target,
        steps=steps,
        instruction=text,
        source_task_id=source_task_id,
        source_subtask=source_subtask,
    )


def render_via_llm(
    target: str,
    segments: list[Segment],
    cfg,
    source_task_id: str = "",
    source_subtask: int = -1,
) -> StepByStepTask:
    """Ask a chat-completion service to phrase the instruction instead of
    the template; the step structure stays deterministic."""
    from .taskforge import chat_completion, load_prompt

    if not segments:
        raise ValueError("need at least one segment")
    payload: dict = {"target": target}
    for i, seg in enumerate(segments):
        payload[f"step_{i}"] = {
            "action": seg.label,
            "tags": [t.name for t in seg.tags],
        }
    instruction = chat_completion(
        cfg, load_prompt("step_instruction"), json.dumps(payload)
    ).strip()
    steps = tuple((seg.label, _choose_tag(seg, target)) for seg in segments)
    return StepByStepTask(
        target=target,
        steps=steps,
        instruction=instruction,
        source_task_id=source_task_id,
        source_subtask=source_subtask,
    )
