"""Synthetic reasoning environment with an exact success-probability oracle.

Each task is a depth-by-branching decision tree with one fully correct
path. A policy walking the tree "slips" off the path with a per-step
probability; once off the path it wanders uniformly. Generated segment text
carries a phrase that reflects whether the step kept the trajectory on the
path ("the check holds" style vs. "the check fails" style), which is the
textual signal a learned scorer can pick up — the stand-in for reasoning
text whose style correlates with correctness.

Off-path trajectories may still end correct with probability
``recovery_prob`` (a deterministic per-leaf pseudo-random draw), modelling
chains that recover from a bad intermediate step. With ``recovery_prob=0``
every success probability has a closed form and the oracle is O(depth);
with recovery enabled it falls back to exact subtree evaluation, so keep
those tasks small.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import re
from dataclasses import dataclass, field

from beamanneal.core import ActionSegment, EngineConfig, DEFAULT_CONFIG, Problem, TrajectoryState
from beamanneal.errors import SizeLimitError, UsageError
from beamanneal.seeding import TAG_GOLD, TAG_TASK, hash_u64

ENUMERATION_GUARD = 10_000
_RECOVERY_GUARD = 300_000  # leaves; recovery oracle walks the whole subtree

_TAG_PHRASE = 0x50485241
_TAG_RECOVER = 0x52454356
_TAG_WRONG = 0x57524F4E

_ON_PATH_PHRASES = (
    "the check holds",
    "the ledger balances",
    "the invariant is intact",
)
_OFF_PATH_PHRASES = (
    "the check fails",
    "the ledger is off",
    "the invariant breaks",
)

_OPTION_RE = re.compile(r"took option (\d+)")

PROFILES = ("frontloaded", "uniform", "slipfree")


@dataclass(frozen=True)
class SyntheticTask:
    """One decision-tree task; see the module docstring for semantics."""

    depth: int
    branching: int
    correct_path: tuple[int, ...]
    slip_prob: tuple[float, ...]
    recovery_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "correct_path", tuple(self.correct_path))
        object.__setattr__(self, "slip_prob", tuple(float(p) for p in self.slip_prob))
        if self.depth < 1:
            raise UsageError("depth must be >= 1")
        if self.branching < 2:
            raise UsageError("branching must be >= 2")
        if len(self.correct_path) != self.depth:
            raise UsageError("correct_path length must equal depth")
        if len(self.slip_prob) != self.depth:
            raise UsageError("slip_prob length must equal depth")
        if any(not (0 <= b < self.branching) for b in self.correct_path):
            raise UsageError("correct_path entries must be < branching")
        if any(not (0.0 <= p <= 1.0) for p in self.slip_prob):
            raise UsageError("slip probabilities must lie in [0, 1]")
        if not (0.0 <= self.recovery_prob <= 1.0):
            raise UsageError("recovery_prob must lie in [0, 1]")

    @property
    def gold_answer(self) -> str:
        return str(1000 + hash_u64(self.seed, TAG_GOLD) % 9000)

    @property
    def wrong_answer(self) -> str:
        gold = int(self.gold_answer)
        offset = 1 + hash_u64(self.seed, _TAG_WRONG) % 8999
        return str(1000 + (gold - 1000 + offset) % 9000)


@dataclass(frozen=True)
class OraclePosition:
    """A task plus the branches chosen so far."""

    task: SyntheticTask
    branch_history: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "branch_history", tuple(self.branch_history))
        if len(self.branch_history) > self.task.depth:
            raise UsageError("branch history longer than task depth")
        if any(not (0 <= b < self.task.branching) for b in self.branch_history):
            raise UsageError("branch history entry out of range")

    @property
    def step(self) -> int:
        return len(self.branch_history)

    def child(self, branch: int) -> "OraclePosition":
        return OraclePosition(self.task, self.branch_history + (branch,))


def is_on_path(task: SyntheticTask, history: tuple[int, ...]) -> bool:
    return history == task.correct_path[: len(history)]


def _recovers(task: SyntheticTask, history: tuple[int, ...]) -> bool:
    if task.recovery_prob <= 0.0:
        return False
    draw = hash_u64(task.seed, _TAG_RECOVER, *history) / 2.0**64
    return draw < task.recovery_prob


def trajectory_correct(task: SyntheticTask, history: tuple[int, ...]) -> bool:
    """Whether a complete branch sequence ends at the gold answer."""
    if len(history) != task.depth:
        raise UsageError("trajectory must reach full depth")
    if history == task.correct_path:
        return True
    return _recovers(task, history)


def branch_probabilities(task: SyntheticTask, history: tuple[int, ...]) -> list[float]:
    """Policy distribution over branches at the given position."""
    t = len(history)
    if t >= task.depth:
        raise UsageError("position is already at full depth")
    if is_on_path(task, history):
        slip = task.slip_prob[t]
        off_share = slip / (task.branching - 1)
        return [
            (1.0 - slip) if b == task.correct_path[t] else off_share
            for b in range(task.branching)
        ]
    return [1.0 / task.branching] * task.branching


def sample_branch(task: SyntheticTask, history: tuple[int, ...], rng: random.Random) -> int:
    """Draw one branch from the policy distribution at this position."""
    t = len(history)
    if t >= task.depth:
        raise UsageError("position is already at full depth")
    if is_on_path(task, history):
        slip = task.slip_prob[t]
        if rng.random() >= slip:
            return task.correct_path[t]
        pick = rng.randrange(task.branching - 1)
        return pick if pick < task.correct_path[t] else pick + 1
    return rng.randrange(task.branching)


def final_segment_tokens(segment_length: int) -> int:
    return max(1, segment_length // 3)


def _phrase(task: SyntheticTask, step: int, branch: int, on_path: bool) -> str:
    pool = _ON_PATH_PHRASES if on_path else _OFF_PATH_PHRASES
    return pool[hash_u64(task.seed, _TAG_PHRASE, step, branch) % len(pool)]


def render_segment(
    position: OraclePosition,
    branch: int,
    config: EngineConfig = DEFAULT_CONFIG,
) -> ActionSegment:
    """Deterministic text for taking ``branch`` at ``position``.

    Non-final steps fill the full segment length; the final step emits the
    end-of-sequence segment carrying "Final answer: ..." with the gold
    answer iff the completed trajectory qualifies as correct.
    """
    task = position.task
    t = position.step
    if t >= task.depth:
        raise UsageError("cannot render past task depth")
    if not (0 <= branch < task.branching):
        raise UsageError(f"branch {branch} out of range (branching={task.branching})")
    successor = position.branch_history + (branch,)
    on_path = is_on_path(task, successor)
    body = f"step {t}: took option {branch}; {_phrase(task, t, branch, on_path)}"
    if t == task.depth - 1:
        answer = task.gold_answer if trajectory_correct(task, successor) else task.wrong_answer
        return ActionSegment(
            text=f"{body}\nFinal answer: {answer}",
            token_count=final_segment_tokens(config.segment_length),
            terminal=True,
        )
    return ActionSegment(text=body, token_count=config.segment_length, terminal=False)


def _subtree_value(task: SyntheticTask, history: tuple[int, ...]) -> float:
    if len(history) == task.depth:
        return 1.0 if trajectory_correct(task, history) else 0.0
    probs = branch_probabilities(task, history)
    return sum(
        p * _subtree_value(task, history + (b,))
        for b, p in enumerate(probs)
        if p > 0.0
    )


def true_success_prob(position: OraclePosition, policy=None) -> float:
    """Exact probability that a policy rollout from here ends correct.

    ``policy`` is accepted for interface symmetry with the backends module;
    only the synthetic slip policy is modelled. With ``recovery_prob=0``
    this is closed-form; otherwise the full subtree is evaluated exactly.
    """
    task = position.task
    history = position.branch_history
    t = len(history)
    if task.recovery_prob == 0.0:
        if not is_on_path(task, history):
            return 0.0
        prod = 1.0
        for u in range(t, task.depth):
            prod *= 1.0 - task.slip_prob[u]
        return prod
    remaining = task.depth - t
    if task.branching**remaining > _RECOVERY_GUARD:
        raise SizeLimitError(
            f"recovery oracle needs {task.branching}**{remaining} leaves, "
            f"guard is {_RECOVERY_GUARD}"
        )
    return _subtree_value(task, history)


@dataclass(frozen=True)
class TrajectoryOutcome:
    history: tuple[int, ...]
    correct: bool
    probability: float


def enumerate_trajectories(task: SyntheticTask) -> list[TrajectoryOutcome]:
    """All complete branch sequences with exact policy probability mass."""
    total = task.branching**task.depth
    if total > ENUMERATION_GUARD:
        raise SizeLimitError(
            f"enumeration of {total} trajectories exceeds guard {ENUMERATION_GUARD}"
        )
    outcomes = []
    for combo in itertools.product(range(task.branching), repeat=task.depth):
        prob = 1.0
        for t in range(task.depth):
            prob *= branch_probabilities(task, combo[:t])[combo[t]]
        outcomes.append(
            TrajectoryOutcome(
                history=combo,
                correct=trajectory_correct(task, combo),
                probability=prob,
            )
        )
    return outcomes


# ---------------------------------------------------------------------------
# Task suites


@dataclass(frozen=True)
class TaskSuite:
    """An ordered collection of tasks wired to Problem objects by index."""

    tasks: tuple[SyntheticTask, ...]
    _by_id: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        by_id = {problem_id(i): task for i, task in enumerate(self.tasks)}
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.tasks)

    def problems(self) -> list[Problem]:
        return [problem_for_task(task, i) for i, task in enumerate(self.tasks)]

    def task_for(self, pid: str) -> SyntheticTask:
        try:
            return self._by_id[pid]
        except KeyError:
            raise UsageError(f"unknown problem id {pid!r}") from None

    def has_problem(self, pid: str) -> bool:
        return pid in self._by_id

    def to_json(self) -> str:
        doc = {
            "format_version": 1,
            "tasks": [
                {
                    "depth": t.depth,
                    "branching": t.branching,
                    "correct_path": list(t.correct_path),
                    "slip_prob": list(t.slip_prob),
                    "recovery_prob": t.recovery_prob,
                    "seed": t.seed,
                }
                for t in self.tasks
            ],
        }
        return json.dumps(doc, indent=None, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TaskSuite":
        doc = json.loads(text)
        if doc.get("format_version") != 1:
            raise UsageError(f"unsupported task suite version {doc.get('format_version')!r}")
        tasks = [
            SyntheticTask(
                depth=entry["depth"],
                branching=entry["branching"],
                correct_path=tuple(entry["correct_path"]),
                slip_prob=tuple(entry["slip_prob"]),
                recovery_prob=entry.get("recovery_prob", 0.0),
                seed=entry["seed"],
            )
            for entry in doc["tasks"]
        ]
        return cls(tasks=tuple(tasks))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TaskSuite":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def problem_id(index: int) -> str:
    return f"task-{index:05d}"


def problem_for_task(task: SyntheticTask, index: int) -> Problem:
    prompt = (
        f"A {task.depth}-step decision chain with {task.branching} options per "
        f"step. At each step take the option whose check holds, then report "
        f"the final code."
    )
    return Problem(
        id=problem_id(index),
        prompt=prompt,
        gold_answer=task.gold_answer,
        source="synthetic",
    )


def _slips_for_profile(profile: str, depth: int, rng: random.Random) -> list[float]:
    if profile == "frontloaded":
        # Nearly all policy risk sits at the first step; the remainder decays
        # geometrically, so candidate-reward variance shrinks with depth.
        s0 = 0.45 + 0.10 * rng.random()
        slips = []
        for t in range(depth):
            s = s0 * (0.04**t)
            slips.append(s if s >= 1e-6 else 0.0)
        return slips
    if profile == "uniform":
        s = 0.25 + 0.10 * rng.random()
        return [s] * depth
    if profile == "slipfree":
        return [0.0] * depth
    raise UsageError(f"unknown profile {profile!r} (choices: {', '.join(PROFILES)})")


def generate_tasks(
    count: int,
    depth_range: tuple[int, int] = (7, 11),
    branching: int = 3,
    profile: str = "frontloaded",
    recovery_prob: float = 0.0,
    seed: int = 0,
) -> TaskSuite:
    """Seeded task generator; the "frontloaded" profile is the default suite."""
    if count < 1:
        raise UsageError("count must be >= 1")
    lo, hi = depth_range
    if not (1 <= lo <= hi):
        raise UsageError("invalid depth range")
    tasks = []
    for i in range(count):
        task_seed = hash_u64(seed, TAG_TASK, i)
        rng = random.Random(task_seed)
        depth = rng.randint(lo, hi)
        correct = tuple(rng.randrange(branching) for _ in range(depth))
        slips = _slips_for_profile(profile, depth, rng)
        tasks.append(
            SyntheticTask(
                depth=depth,
                branching=branching,
                correct_path=correct,
                slip_prob=tuple(slips),
                recovery_prob=recovery_prob,
                seed=task_seed,
            )
        )
    return TaskSuite(tasks=tuple(tasks))


def branch_of_segment(text: str) -> int:
    """The branch index a rendered segment encodes."""
    m = _OPTION_RE.search(text)
    if m is None:
        raise UsageError(f"segment text does not encode a branch: {text!r}")
    return int(m.group(1))


def position_for_state(task: SyntheticTask, state: TrajectoryState) -> OraclePosition:
    """Recover the branch history encoded in a trajectory's segment texts."""
    history = tuple(branch_of_segment(seg.text) for seg in state.segments)
    return OraclePosition(task=task, branch_history=history)


def max_enumerated_success(task: SyntheticTask) -> float:
    """Highest terminal success value over all trajectories (0 or 1)."""
    return max(
        (1.0 if outcome.correct else 0.0)
        for outcome in enumerate_trajectories(task)
    )


def mean_success_mass(task: SyntheticTask) -> float:
    """Probability-weighted success over the full enumeration."""
    return math.fsum(
        outcome.probability for outcome in enumerate_trajectories(task) if outcome.correct
    )
