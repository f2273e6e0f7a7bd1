"""Rollout-based construction of soft-labeled reward triplets.

At every step of a problem, M candidate continuations are sampled and each
is estimated by N full rollouts; the fraction of rollouts that reach the
gold answer is the candidate's soft reward. The highest-reward candidate
advances the state ("the spine"), the per-step candidate pool is class
balanced, and everything is persisted as JSONL plus aggregate per-step
reward statistics bucketed by completed-response length.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Iterable

from beamanneal.core import (
    ActionSegment,
    TrajectoryState,
    append_action,
    answers_match,
    extract_final_answer,
    initial_state,
)
from beamanneal.errors import BackendError, ConstructionError, DataFormatError, UsageError
from beamanneal.seeding import TAG_BALANCE, TAG_ESTIMATE, TAG_ROLLOUT, hash_str, hash_u64
from beamanneal.backends import rollout_to_completion, sample_continuations

DATASET_FORMAT_VERSION = 1

_TRIPLET_FIELDS = (
    "problem_id",
    "step_index",
    "state_text",
    "action_text",
    "action_tokens",
    "reward",
    "n_rollouts",
    "chosen",
    "source",
)


@dataclass(frozen=True)
class SamplingSchedule:
    """Per-step (candidates, rollouts) sizes: larger early, smaller late."""

    early: tuple[int, int] = (8, 8)
    tail: tuple[int, int] = (4, 4)
    cutoff: int = 3

    def __post_init__(self):
        object.__setattr__(self, "early", tuple(self.early))
        object.__setattr__(self, "tail", tuple(self.tail))
        if self.cutoff < 0:
            raise UsageError("cutoff must be >= 0")
        if any(v < 1 for v in self.early + self.tail):
            raise UsageError("all schedule entries must be >= 1")
        if self.early[0] < self.tail[0] or self.early[1] < self.tail[1]:
            raise UsageError("early (M, N) must dominate the tail values")

    def params_at(self, step: int) -> tuple[int, int]:
        return self.early if step < self.cutoff else self.tail


@dataclass(frozen=True)
class RewardTriplet:
    """One (state, candidate action, soft reward) training example."""

    problem_id: str
    step_index: int
    state_text: str
    action_text: str
    action_tokens: int
    reward: float
    n_rollouts: int
    chosen: bool
    source: str = "synthetic"

    def __post_init__(self):
        if not (0.0 <= self.reward <= 1.0):
            raise UsageError(f"reward {self.reward} outside [0, 1]")
        if self.n_rollouts < 1:
            raise UsageError("n_rollouts must be >= 1")
        scaled = self.reward * self.n_rollouts
        if abs(scaled - round(scaled)) > 1e-9:
            raise UsageError(
                f"reward {self.reward} is not a multiple of 1/{self.n_rollouts}"
            )


@dataclass(frozen=True)
class StepBucketStats:
    bucket: int
    step: int
    count: int
    mean_reward: float
    variance_reward: float


@dataclass
class Dataset:
    triplets: list[RewardTriplet] = field(default_factory=list)
    segment_length: int = 30

    def __len__(self) -> int:
        return len(self.triplets)

    def groups(self) -> dict[tuple[str, int], list[RewardTriplet]]:
        """Triplets grouped by (problem, step) in file order."""
        grouped: dict[tuple[str, int], list[RewardTriplet]] = {}
        for t in self.triplets:
            grouped.setdefault((t.problem_id, t.step_index), []).append(t)
        return grouped


@dataclass
class ConstructionReport:
    dataset: Dataset
    trajectories: dict[str, TrajectoryState] = field(default_factory=dict)
    failures: list[tuple[str, int, str]] = field(default_factory=list)


def _rollout_correct(final: TrajectoryState, config) -> bool:
    if not final.is_terminal:
        return False
    answer = extract_final_answer(final.text, config.answer_marker)
    if answer is None:
        return False
    return answers_match(answer, final.problem.gold_answer)


def estimate_action_reward(
    state: TrajectoryState,
    action: ActionSegment,
    policy,
    n_rollouts: int,
    seed: int,
) -> tuple[float, list[bool]]:
    """Soft reward for ``action``: fraction of N rollout completions correct.

    Rollouts that hit the step cap without terminating count as incorrect.
    """
    if n_rollouts < 1:
        raise UsageError("n_rollouts must be >= 1")
    config = policy.config
    successor = append_action(state, action, config.max_steps)
    outcomes = []
    for j in range(n_rollouts):
        if successor.is_terminal:
            final = successor
        else:
            try:
                final = rollout_to_completion(
                    policy, successor, hash_u64(seed, TAG_ROLLOUT, j)
                )
            except BackendError as exc:
                raise BackendError(f"rollout {j} failed: {exc}", exc.attempts) from exc
        outcomes.append(_rollout_correct(final, config))
    return sum(outcomes) / n_rollouts, outcomes


def balance_candidates(
    triplets: list[RewardTriplet],
    max_ratio: int = 3,
    threshold: float = 0.5,
    cap: int = 3,
    seed: int = 0,
) -> list[RewardTriplet]:
    """Class-balance one (problem, step) candidate group.

    Positives are rewards strictly above ``threshold``. With both classes
    present the larger one is down-sampled (seeded, uniform) so it is at
    most ``max_ratio`` times the smaller; a single-class group keeps at
    most ``cap`` members. The chosen candidate is always retained and
    counts toward its class. Output preserves input order.
    """
    if not triplets:
        raise UsageError("balance_candidates needs a nonempty group")
    positives = [t for t in triplets if t.reward > threshold]
    negatives = [t for t in triplets if t.reward <= threshold]
    rng = random.Random(seed)

    def shrink(group: list[RewardTriplet], target: int) -> list[RewardTriplet]:
        if len(group) <= target:
            return group
        pinned = [t for t in group if t.chosen]
        rest = [t for t in group if not t.chosen]
        picked = pinned + rng.sample(rest, target - len(pinned))
        return picked

    if positives and negatives:
        if len(positives) >= len(negatives):
            positives = shrink(positives, min(len(positives), max_ratio * len(negatives)))
        else:
            negatives = shrink(negatives, min(len(negatives), max_ratio * len(positives)))
    else:
        only = positives or negatives
        kept = shrink(only, min(len(only), cap))
        positives = [t for t in kept if t.reward > threshold]
        negatives = [t for t in kept if t.reward <= threshold]

    keep = set(map(id, positives)) | set(map(id, negatives))
    return [t for t in triplets if id(t) in keep]


def construct_for_problem(
    problem,
    policy,
    schedule: SamplingSchedule,
    seed: int,
) -> tuple[list[RewardTriplet], TrajectoryState]:
    """Run the per-step sampling loop for one problem.

    Advances greedily by estimated reward (ties to the lowest candidate
    index) until the chosen continuation terminates or the step cap is hit.
    """
    config = policy.config
    state = initial_state(problem)
    collected: list[RewardTriplet] = []
    step = 0
    while not state.is_terminal and step < config.max_steps:
        m_cand, n_roll = schedule.params_at(step)
        try:
            candidates = sample_continuations(policy, state, m_cand, seed)
        except BackendError as exc:
            raise ConstructionError(
                f"candidate sampling failed at step {step}: {exc}",
                problem.id,
                step,
                partial=collected,
            ) from exc
        estimates: list[float | None] = []
        last_error = None
        for i, cand in enumerate(candidates):
            try:
                reward, _ = estimate_action_reward(
                    state, cand, policy, n_roll, hash_u64(seed, TAG_ESTIMATE, step, i)
                )
                estimates.append(reward)
            except BackendError as exc:
                estimates.append(None)
                last_error = exc
        scored = [(r, i) for i, r in enumerate(estimates) if r is not None]
        if not scored:
            raise ConstructionError(
                f"all {m_cand} candidates failed at step {step}: {last_error}",
                problem.id,
                step,
                partial=collected,
            )
        best_index = max(scored, key=lambda pair: (pair[0], -pair[1]))[1]
        group = [
            RewardTriplet(
                problem_id=problem.id,
                step_index=step,
                state_text=state.text,
                action_text=cand.text,
                action_tokens=cand.token_count,
                reward=estimates[i],
                n_rollouts=n_roll,
                chosen=(i == best_index),
                source=problem.source,
            )
            for i, cand in enumerate(candidates)
            if estimates[i] is not None
        ]
        collected.extend(
            balance_candidates(group, seed=hash_u64(seed, TAG_BALANCE, step))
        )
        state = append_action(state, candidates[best_index], config.max_steps)
        step += 1
    return collected, state


def construct_dataset(
    problems: Iterable,
    policy,
    schedule: SamplingSchedule,
    seed: int,
) -> ConstructionReport:
    """Map :func:`construct_for_problem` over a suite; failures are non-fatal."""
    dataset = Dataset(segment_length=policy.config.segment_length)
    report = ConstructionReport(dataset=dataset)
    for problem in problems:
        problem_seed = hash_u64(seed, hash_str(problem.id))
        try:
            triplets, trajectory = construct_for_problem(
                problem, policy, schedule, problem_seed
            )
        except ConstructionError as exc:
            dataset.triplets.extend(exc.partial)
            report.failures.append((exc.problem_id, exc.step, str(exc)))
            continue
        dataset.triplets.extend(triplets)
        report.trajectories[problem.id] = trajectory
    return report


def spine_lengths(dataset: Dataset) -> dict[str, int]:
    """Completed-response token length per problem (sum of chosen actions)."""
    lengths: dict[str, int] = {}
    for t in dataset.triplets:
        if t.chosen:
            lengths[t.problem_id] = lengths.get(t.problem_id, 0) + t.action_tokens
    return lengths


def step_bucket_stats(dataset: Dataset, segment_length: int | None = None) -> list[StepBucketStats]:
    """Reward mean/variance per (length bucket, step).

    A problem whose completed response has ``y`` tokens lands in bucket
    ``n`` with (n-1)*L <= y < n*L; all its triplets inherit that bucket.
    Variance is the population variance.
    """
    if not dataset.triplets:
        raise UsageError("dataset is empty")
    length = segment_length if segment_length is not None else dataset.segment_length
    lengths = spine_lengths(dataset)
    cells: dict[tuple[int, int], list[float]] = {}
    for t in dataset.triplets:
        bucket = lengths[t.problem_id] // length + 1
        cells.setdefault((bucket, t.step_index), []).append(t.reward)
    stats = []
    for (bucket, step), rewards in sorted(cells.items()):
        mean = math.fsum(rewards) / len(rewards)
        variance = math.fsum((r - mean) ** 2 for r in rewards) / len(rewards)
        stats.append(
            StepBucketStats(
                bucket=bucket,
                step=step,
                count=len(rewards),
                mean_reward=mean,
                variance_reward=variance,
            )
        )
    return stats


def stats_to_csv(stats: list[StepBucketStats]) -> str:
    lines = ["bucket,step,count,mean,variance"]
    for s in stats:
        lines.append(f"{s.bucket},{s.step},{s.count},{s.mean_reward!r},{s.variance_reward!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Persistence (JSONL; header line then one triplet per line)


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format_version": DATASET_FORMAT_VERSION,
            "segment_length": dataset.segment_length,
        }
        fh.write(json.dumps(header, sort_keys=True))
        fh.write("\n")
        for t in dataset.triplets:
            fh.write(json.dumps(asdict(t), sort_keys=True))
            fh.write("\n")


def _parse_triplet(row: dict, line_no: int) -> RewardTriplet:
    missing = [f for f in _TRIPLET_FIELDS if f not in row]
    if missing:
        raise DataFormatError(f"missing fields {missing}", line=line_no)
    try:
        return RewardTriplet(**{f: row[f] for f in _TRIPLET_FIELDS})
    except (UsageError, TypeError) as exc:
        raise DataFormatError(str(exc), line=line_no) from exc


def read_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError("empty dataset file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"bad header: {exc}", line=1) from exc
    if header.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataFormatError(
            f"format_version {header.get('format_version')!r} unsupported "
            f"(expected {DATASET_FORMAT_VERSION})",
            line=1,
        )
    if "segment_length" not in header:
        raise DataFormatError("header missing segment_length", line=1)
    triplets = []
    for idx, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"bad JSON: {exc}", line=idx) from exc
        triplets.append(_parse_triplet(row, idx))
    dataset = Dataset(triplets=triplets, segment_length=header["segment_length"])
    for (pid, step), group in dataset.groups().items():
        chosen = sum(1 for t in group if t.chosen)
        if chosen != 1:
            raise DataFormatError(
                f"group ({pid!r}, step {step}) has {chosen} chosen rows, wants 1"
            )
    return dataset
