"""Pluggable per-step decision makers.

A policy backend maps (instruction, scene representation, short-term
memory) to a 4-way decision vector over (stop, turn_left, move_forward,
turn_right) plus a confidence.  The shipped learnable backend is a linear
softmax over concatenated features with an analytic gradient, trained by
full-batch gradient descent against expert actions.  A deterministic
hashing oracle stands in for the frozen visual encoder.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .memory import (
    LongTermStore,
    N_ACTIONS,
    ShortTermMemory,
    cross_entropy,
    forget_and_append,
    weight_decision,
)
from .world import (
    Action,
    AgentState,
    Observation,
    ROBOTS,
    RobotConfig,
    Scene,
    observe,
)
from . import expert as expert_mod
from .taskforge import TaskSpec

MAX_STAGES = 4  # one-hot width for the navigation stage feature


class EmbeddingOracle:
    """Deterministic observation embeddings: every category owns a hashed
    coordinate, scaled by 1/(1+range) and L2-normalized.  An empty
    observation maps to a fixed unit "void" vector."""

    def __init__(self, dim: int = 64, salt: str = "lhnav-v1"):
        if dim < 2:
            raise ValueError("embedding dim must be at least 2")
        self.dim = dim
        self.salt = salt

    def index_for(self, name: str) -> int:
        digest = hashlib.sha256(f"{self.salt}|{name}".encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def void_vector(self) -> np.ndarray:
        v = np.zeros(self.dim)
        v[self.index_for("__void__")] = 1.0
        return v

    def _embed_pairs(self, pairs) -> np.ndarray:
        if not pairs:
            return self.void_vector()
        v = np.zeros(self.dim)
        for category, rng in pairs:
            v[self.index_for(category)] += 1.0 / (1.0 + rng)
        norm = float(np.linalg.norm(v))
        return v / norm

    def embed_view(self, view) -> np.ndarray:
        closest: dict[str, float] = {}
        for s in view.objects:
            if s.category not in closest or s.range < closest[s.category]:
                closest[s.category] = s.range
        return self._embed_pairs(sorted(closest.items()))

    def embed_observation(self, obs: Observation) -> np.ndarray:
        closest: dict[str, float] = {}
        for s in obs.visible():
            if s.category not in closest or s.range < closest[s.category]:
                closest[s.category] = s.range
        return self._embed_pairs(sorted(closest.items()))


def embed_observation(oracle: EmbeddingOracle, obs: Observation) -> np.ndarray:
    return oracle.embed_observation(obs)


@dataclass(frozen=True)
class SceneRepresentation:
    """Directional view embeddings plus step-indexed history entries."""

    views: tuple[tuple[str, np.ndarray], ...]  # ordered left/front/right
    history: tuple[tuple[int, np.ndarray], ...]
    stage: int = 0

    def __post_init__(self) -> None:
        if len(self.views) != 3:
            raise ValueError("scene representation needs exactly 3 view slots")
        indices = [i for i, _ in self.history]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("history step indices must strictly increase")

    def feature(self) -> np.ndarray:
        return np.concatenate([vec for _, vec in self.views])


def build_scene_representation(
    oracle: EmbeddingOracle,
    obs: Observation,
    memory: ShortTermMemory | None = None,
    stage: int = 0,
) -> SceneRepresentation:
    views = tuple((v.direction, oracle.embed_view(v)) for v in obs.views)
    history = tuple(enumerate(memory.entries)) if memory is not None else ()
    return SceneRepresentation(views=views, history=history, stage=stage)


# -- backends -----------------------------------------------------------------


class PolicyBackend(Protocol):
    def decide(
        self,
        instruction: str,
        scene_rep: SceneRepresentation,
        memory: ShortTermMemory,
    ) -> tuple[np.ndarray, float]: ...


def uniform_decision() -> np.ndarray:
    return np.full(N_ACTIONS, 1.0 / N_ACTIONS)


def one_hot(action: Action) -> np.ndarray:
    v = np.zeros(N_ACTIONS)
    v[int(action)] = 1.0
    return v


class LinearSoftmaxBackend:
    """Softmax over a linear map of (scene embedding, mean short-term
    memory, stage one-hot).  Confidence is the probability of the action the
    backend itself would take."""

    def __init__(self, embed_dim: int = 64, seed: int = 0, literal_ce: bool = False):
        self.embed_dim = embed_dim
        self.feature_dim = 3 * embed_dim + embed_dim + MAX_STAGES
        rng = np.random.default_rng(seed)
        self.W = rng.normal(0.0, 0.01, size=(N_ACTIONS, self.feature_dim))
        self.b = np.zeros(N_ACTIONS)
        self.literal_ce = literal_ce

    def features(
        self, scene_rep: SceneRepresentation, memory: ShortTermMemory
    ) -> np.ndarray:
        stage_hot = np.zeros(MAX_STAGES)
        stage_hot[min(scene_rep.stage, MAX_STAGES - 1)] = 1.0
        return np.concatenate(
            [scene_rep.feature(), memory.mean_entry(self.embed_dim), stage_hot]
        )

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        logits = self.W @ x + self.b
        logits = logits - logits.max()
        e = np.exp(logits)
        return e / e.sum()

    def decide(self, instruction, scene_rep, memory):
        p = self.probabilities(self.features(scene_rep, memory))
        return p, float(p.max())

    # -- parameter plumbing for training and persistence --

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b])

    def set_params(self, theta: np.ndarray) -> None:
        n_w = self.W.size
        self.W = theta[:n_w].reshape(self.W.shape).copy()
        self.b = theta[n_w:].copy()

    def save(self, path: str | Path) -> None:
        payload = {
            "embed_dim": self.embed_dim,
            "n_actions": N_ACTIONS,
            "theta": self.get_params().tolist(),
        }
        Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LinearSoftmaxBackend":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        backend = cls(embed_dim=payload["embed_dim"])
        backend.set_params(np.array(payload["theta"]))
        return backend


class UniformBackend:
    """Flat decision vector; useful as a weighting-path probe."""

    def decide(self, instruction, scene_rep, memory):
        return uniform_decision(), 1.0 / N_ACTIONS


class ExpertTeacherBackend:
    """Emits a one-hot on the expert action for the bound step context.

    The memory policy rebinds the context before every decide call, so this
    backend exercises the full memory/weighting path while never being the
    reason an episode fails.
    """

    def __init__(self) -> None:
        self._ctx: tuple[Scene, AgentState, str, RobotConfig] | None = None

    def set_context(
        self, scene: Scene, state: AgentState, target_id: str, robot: RobotConfig
    ) -> None:
        self._ctx = (scene, state, target_id, robot)

    def decide(self, instruction, scene_rep, memory):
        if self._ctx is None:
            raise RuntimeError("teacher backend has no bound context")
        scene, state, target_id, robot = self._ctx
        action = expert_mod.expert_next_action(scene, state, target_id, robot)
        return one_hot(action), 1.0


# -- training -------------------------------------------------------------------


def loss_and_grad(
    backend: LinearSoftmaxBackend, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean imitation loss over a batch and its gradient in theta.

    Default mode is the standard expert-as-target cross-entropy; literal
    mode swaps prediction and target (finite thanks to the clamp) and keeps
    a well-defined gradient.
    """
    n = X.shape[0]
    total = 0.0
    gW = np.zeros_like(backend.W)
    gb = np.zeros_like(backend.b)
    for i in range(n):
        x = X[i]
        p = backend.probabilities(x)
        e = one_hot(Action(int(y[i])))
        total += cross_entropy(p, e, literal=backend.literal_ce)
        if backend.literal_ce:
            g = -np.log(np.clip(e, 1e-12, 1.0))
            dlogits = p * (g - float(np.dot(g, p)))
        else:
            dlogits = p - e
        gW += np.outer(dlogits, x)
        gb += dlogits
    total /= n
    gW /= n
    gb /= n
    return total, np.concatenate([gW.ravel(), gb])


@dataclass
class TrainReport:
    losses: list[float]
    final_loss: float


def collect_imitation_dataset(
    scene: Scene,
    task,
    backend: LinearSoftmaxBackend,
    oracle: EmbeddingOracle | None = None,
    robot: RobotConfig | None = None,
    budget: int = 500,
    capacity: int = 32,
    start: AgentState | None = None,
):
    """Roll the expert through a task, featurizing every step exactly the
    way the backend will see it; labels are the expert actions.

    Memory along the rollout is maintained with the backend's own
    confidences, so training features match evaluation features.
    """
    from .taskforge import sample_spawn
    from .world import apply_action

    oracle = oracle or EmbeddingOracle(dim=backend.embed_dim)
    robot = robot or ROBOTS["spot"]
    state = start if start is not None else sample_spawn(scene, task)
    mem = ShortTermMemory(capacity=capacity)
    dataset = []
    for stage, sub in enumerate(task.move_targets()):
        for _ in range(budget):
            action = expert_mod.expert_next_action(scene, state, sub.object_id, robot)
            obs = observe(scene, state, robot)
            rep = build_scene_representation(oracle, obs, memory=mem, stage=stage)
            features = backend.features(rep, mem)
            dataset.append((features, int(action)))
            probs = backend.probabilities(features)
            mem = forget_and_append(
                mem, oracle.embed_observation(obs), float(probs.max())
            )
            result = apply_action(scene, state, action, robot)
            state = result.state
            if result.stopped:
                break
    return dataset


def train_schedule(
    backend: LinearSoftmaxBackend,
    rollout_data,
    stored_data,
    epochs: int = 100,
    lr: float = 0.5,
    mode: str = "alternate",
) -> TrainReport:
    """Combine fresh expert-rollout batches with stored-trajectory batches.

    "alternate" interleaves one full-batch step on each source per epoch;
    "two_stage" trains on the stored data first, then on the rollouts.
    """
    if not len(rollout_data) or not len(stored_data):
        raise ValueError("both data sources must be nonempty")
    if mode not in ("alternate", "two_stage"):
        raise ValueError(f"unknown schedule {mode!r}")

    def batch(data):
        X = np.stack([np.asarray(x, dtype=float) for x, _ in data])
        y = np.array([int(a) for _, a in data])
        return X, y

    sources = [batch(rollout_data), batch(stored_data)]
    losses: list[float] = []
    if mode == "alternate":
        plan = [sources[i % 2] for i in range(2 * epochs)]
    else:
        plan = [sources[1]] * epochs + [sources[0]] * epochs
    for X, y in plan:
        loss, grad = loss_and_grad(backend, X, y)
        losses.append(loss)
        backend.set_params(backend.get_params() - lr * grad)
    X_all = np.concatenate([sources[0][0], sources[1][0]])
    y_all = np.concatenate([sources[0][1], sources[1][1]])
    final_loss, _ = loss_and_grad(backend, X_all, y_all)
    return TrainReport(losses=losses, final_loss=final_loss)


def train_backend(
    backend: LinearSoftmaxBackend,
    dataset,
    epochs: int = 100,
    lr: float = 0.5,
) -> TrainReport:
    """Full-batch gradient descent on the imitation loss.

    dataset is a sequence of (feature vector, expert action index) pairs.
    Returns the per-epoch loss curve measured before each update, plus the
    final loss after the last step.
    """
    if not len(dataset):
        raise ValueError("training dataset must be nonempty")
    X = np.stack([np.asarray(x, dtype=float) for x, _ in dataset])
    y = np.array([int(a) for _, a in dataset])
    losses = []
    for _ in range(epochs):
        loss, grad = loss_and_grad(backend, X, y)
        losses.append(loss)
        theta = backend.get_params() - lr * grad
        backend.set_params(theta)
    final_loss, _ = loss_and_grad(backend, X, y)
    return TrainReport(losses=losses, final_loss=final_loss)


# -- chain-of-thought seam --------------------------------------------------------


class CotFeedback(Protocol):
    def refine(self, instruction: str, history) -> list[str]: ...


class RuleBasedCotFeedback:
    """Rule-based stand-in for an LLM planner: the subgoal list is the
    task's own navigation target categories, in order."""

    def __init__(self, scene: Scene, task: TaskSpec):
        self._subgoals = [
            scene.object(s.object_id).category for s in task.move_targets()
        ]

    def refine(self, instruction: str, history) -> list[str]:
        return list(self._subgoals)


# -- one decision step of the memory pipeline ---------------------------------------


def memory_policy_step(
    instruction: str,
    obs: Observation,
    mem: ShortTermMemory,
    store: LongTermStore,
    backend: PolicyBackend,
    oracle: EmbeddingOracle,
    target_category: str,
    stage: int = 0,
    use_argmax: bool = True,
    rng: random.Random | None = None,
    pooling: str = "pair",
) -> tuple[Action, ShortTermMemory]:
    """One decision step: embed, decide, weight by retrieved actions, pick
    an action, and fold the observation into short-term memory."""
    scene_rep = build_scene_representation(oracle, obs, memory=mem, stage=stage)
    decision, confidence = backend.decide(instruction, scene_rep, mem)
    fused = oracle.embed_observation(obs)
    retrieved = store.retrieve_topk(target_category, fused)
    if retrieved:
        decision, _ = weight_decision(decision, [act for _, act in retrieved])
    if use_argmax:
        action = Action(int(np.argmax(decision)))
    else:
        if rng is None:
            raise ValueError("sampling mode needs an rng")
        total = float(decision.sum())
        probs = decision / total if total > 0 else uniform_decision()
        action = Action(rng.choices(range(N_ACTIONS), weights=probs)[0])
    mem = forget_and_append(mem, fused, confidence, window=pooling)
    return action, mem


# -- runner-facing policies ---------------------------------------------------------


@dataclass
class StepContext:
    scene: Scene
    state: AgentState
    robot: RobotConfig
    task: TaskSpec
    target_id: str
    stage: int           # ordinal of the current navigation stage
    step_in_subtask: int
    instruction: str


class Policy(Protocol):
    def begin_episode(self, scene: Scene, task: TaskSpec, robot: RobotConfig, seed: int) -> None: ...

    def act(self, ctx: StepContext) -> Action: ...


class ExpertPolicy:
    """Direct greedy-pathfinder control; the imitation target."""

    def begin_episode(self, scene, task, robot, seed):
        pass

    def act(self, ctx: StepContext) -> Action:
        return expert_mod.expert_next_action(ctx.scene, ctx.state, ctx.target_id, ctx.robot)


class RandomPolicy:
    """Uniform over the four actions, reproducible under the episode seed."""

    def __init__(self) -> None:
        self._rng = random.Random(0)

    def begin_episode(self, scene, task, robot, seed):
        self._rng = random.Random(f"random-policy:{task.id}:{seed}")

    def act(self, ctx: StepContext) -> Action:
        return Action(self._rng.randrange(N_ACTIONS))


class StopPolicy:
    """Stops immediately; degenerate baseline for harness checks."""

    def begin_episode(self, scene, task, robot, seed):
        pass

    def act(self, ctx: StepContext) -> Action:
        return Action.STOP


class MemoryPolicy:
    """Memory-augmented policy: backend decision, long-term weighting, and
    short-term forgetting, refreshed by the chain-of-thought seam at stage
    starts and every cot_period steps."""

    def __init__(
        self,
        backend: PolicyBackend,
        store: LongTermStore | None = None,
        oracle: EmbeddingOracle | None = None,
        capacity: int = 32,
        use_argmax: bool = True,
        cot_period: int = 10,
        pooling: str = "pair",
    ):
        self.backend = backend
        self.store = store if store is not None else LongTermStore()
        self.oracle = oracle or EmbeddingOracle()
        self.capacity = capacity
        self.use_argmax = use_argmax
        self.cot_period = cot_period
        self.pooling = pooling
        self.memory = ShortTermMemory(capacity=capacity)
        self._cot: RuleBasedCotFeedback | None = None
        self._subgoals: list[str] = []
        self._rng = random.Random(0)
        self._last_stage = -1

    def begin_episode(self, scene, task, robot, seed):
        self.memory = ShortTermMemory(capacity=self.capacity)
        self._cot = RuleBasedCotFeedback(scene, task)
        self._subgoals = []
        self._rng = random.Random(f"memory-policy:{task.id}:{seed}")
        self._last_stage = -1

    def act(self, ctx: StepContext) -> Action:
        stage_started = ctx.stage != self._last_stage
        if self._cot is not None and (
            stage_started or ctx.step_in_subtask % self.cot_period == 0
        ):
            self._subgoals = self._cot.refine(ctx.instruction, self.memory.entries)
        self._last_stage = ctx.stage
        if self._subgoals and ctx.stage < len(self._subgoals):
            target_category = self._subgoals[ctx.stage]
        else:
            target_category = ctx.scene.object(ctx.target_id).category
        if hasattr(self.backend, "set_context"):
            self.backend.set_context(ctx.scene, ctx.state, ctx.target_id, ctx.robot)
        obs = observe(ctx.scene, ctx.state, ctx.robot)
        action, self.memory = memory_policy_step(
            ctx.instruction,
            obs,
            self.memory,
            self.store,
            self.backend,
            self.oracle,
            target_category,
            stage=ctx.stage,
            use_argmax=self.use_argmax,
            rng=self._rng,
            pooling=self.pooling,
        )
        return action
