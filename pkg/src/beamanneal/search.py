"""Inference strategies under one token-budget accountant.

Strategies: single-shot sampling, Best-of-N over complete responses,
step-level Best-of-N, and annealing beam search, whose width follows

    width(t) = max(b0 - floor(k * t), epsilon)

starting wide while context is scarce and narrowing as the reward model
has more to judge. Every strategy reports the tokens of *every* candidate
it ever sampled, including discarded ones, so accuracy-versus-compute
comparisons are honest.

Candidate streams are slot-seeded (see ``beamanneal.seeding``): under a
shared per-problem seed, the step-level strategies and the beam search see
identical root candidates for shared slots, and a beam lineage replays the
same draws as the Best-of-N rollout with the same slot. Comparisons across
strategies are therefore paired, not merely same-distribution.

In the beam search, completed trajectories freeze into a pool but keep
occupying beam slots until selection ends; the final answer is the pooled
trajectory with the highest last-step score, ties broken by the
lexicographically smallest path of (per-step candidate ordinal) indices.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from beamanneal.backends import (
    rollout_to_completion,
    sample_continuations,
    score,
    score_batch,
)
from beamanneal.core import (
    TrajectoryState,
    answers_match,
    append_action,
    extract_final_answer,
    initial_state,
)
from beamanneal.errors import BackendError, SearchError, UsageError
from beamanneal.seeding import hash_str, hash_u64

STRATEGY_NAMES = ("single", "bon", "step_bon", "bas")


@dataclass(frozen=True)
class BasSchedule:
    """Annealing schedule; ``expansion`` candidates per surviving beam."""

    b0: int = 12
    k: float = 1.0
    epsilon: int = 2
    expansion: int = 1

    def __post_init__(self):
        if self.b0 < 1 or self.epsilon < 1:
            raise UsageError("b0 and epsilon must be >= 1")
        if self.k < 0:
            raise UsageError("k must be >= 0")
        if self.expansion < 1:
            raise UsageError("expansion must be >= 1")


def beam_size_at(schedule: BasSchedule, t: int) -> int:
    """Beam width at step ``t``; fractional k*t rounds down."""
    if t < 0:
        raise UsageError("step index must be >= 0")
    return max(schedule.b0 - math.floor(schedule.k * t), schedule.epsilon)


@dataclass(frozen=True)
class StrategySpec:
    """A strategy name plus its parameters, usable as a report label."""

    name: str
    n: int = 8
    schedule: BasSchedule = field(default_factory=BasSchedule)

    def __post_init__(self):
        if self.name not in STRATEGY_NAMES:
            raise UsageError(f"unknown strategy {self.name!r}")
        if self.n < 1:
            raise UsageError("n must be >= 1")

    def label(self) -> str:
        if self.name == "single":
            return "single"
        if self.name in ("bon", "step_bon"):
            return f"{self.name}[n={self.n}]"
        s = self.schedule
        return f"bas[b0={s.b0},k={s.k:g},eps={s.epsilon},exp={s.expansion}]"


@dataclass(frozen=True)
class SearchResult:
    trajectory: TrajectoryState
    answer: str | None
    correct: bool | None
    tokens_generated: int
    scores: tuple[float, ...]
    strategy: str
    flagged: bool = False
    width_history: tuple[int, ...] = ()


def same_outcome(a: SearchResult, b: SearchResult) -> bool:
    """Equality of trajectory, answer, correctness and token accounting."""
    return (
        a.trajectory == b.trajectory
        and a.answer == b.answer
        and a.correct == b.correct
        and a.tokens_generated == b.tokens_generated
    )


def _finish(
    trajectory: TrajectoryState,
    tokens: int,
    scores: tuple[float, ...],
    label: str,
    config,
    width_history: tuple[int, ...] = (),
) -> SearchResult:
    flagged = not trajectory.is_terminal
    answer = None
    if trajectory.is_terminal:
        answer = extract_final_answer(trajectory.text, config.answer_marker)
    correct = answer is not None and answers_match(answer, trajectory.problem.gold_answer)
    return SearchResult(
        trajectory=trajectory,
        answer=answer,
        correct=correct,
        tokens_generated=tokens,
        scores=scores,
        strategy=label,
        flagged=flagged,
        width_history=width_history,
    )


# ---------------------------------------------------------------------------
# Strategies


def single_shot(problem, policy, seed: int) -> SearchResult:
    """One greedy rollout; the token-ratio baseline for everything else."""
    trajectory = rollout_to_completion(policy, initial_state(problem), seed)
    return _finish(
        trajectory, trajectory.tokens_generated, (), "single", policy.config
    )


def _last_action_score(reward, trajectory: TrajectoryState) -> float:
    before_last = TrajectoryState(trajectory.problem, trajectory.segments[:-1])
    return score(reward, before_last, trajectory.segments[-1])


def best_of_n(problem, policy, reward, n: int, seed: int) -> SearchResult:
    """N independent rollouts; keep the one whose final step scores highest."""
    if n < 1:
        raise UsageError("n must be >= 1")
    rollouts = [
        rollout_to_completion(policy, initial_state(problem), seed, slot=j)
        for j in range(n)
    ]
    finals = [_last_action_score(reward, t) for t in rollouts]
    winner = max(range(n), key=lambda j: (finals[j], -j))
    tokens = sum(t.tokens_generated for t in rollouts)
    return _finish(
        rollouts[winner], tokens, (finals[winner],), f"bon[n={n}]", policy.config
    )


def step_level_best_of_n(problem, policy, reward, n: int, seed: int) -> SearchResult:
    """At every step sample n candidates and keep the top-scored one."""
    if n < 1:
        raise UsageError("n must be >= 1")
    config = policy.config
    state = initial_state(problem)
    tokens = 0
    kept_scores: list[float] = []
    while not state.is_terminal and state.step_index < config.max_steps:
        candidates = sample_continuations(policy, state, n, seed)
        tokens += sum(seg.token_count for seg in candidates)
        values = score_batch(reward, state, candidates)
        best = max(range(len(candidates)), key=lambda i: (values[i], -i))
        kept_scores.append(values[best])
        state = append_action(state, candidates[best], config.max_steps)
    return _finish(
        state, tokens, tuple(kept_scores), f"step_bon[n={n}]", config
    )


@dataclass(frozen=True)
class _Node:
    state: TrajectoryState
    path: tuple[int, ...]
    lineage: int
    scores: tuple[float, ...]

    @property
    def last_score(self) -> float:
        return self.scores[-1]


def beam_anneal_search(
    problem, policy, reward, schedule: BasSchedule, seed: int
) -> SearchResult:
    """Beam search with a shrinking width; see the module docstring."""
    config = policy.config
    label = StrategySpec("bas", schedule=schedule).label()
    root = _Node(state=initial_state(problem), path=(), lineage=0, scores=())
    live = [root]
    pool: list[_Node] = []  # frozen: terminal, or non-terminal at the step cap
    tokens = 0
    width_history = [beam_size_at(schedule, 0)]
    t = 0
    while live:
        fan = beam_size_at(schedule, 0) if t == 0 else schedule.expansion
        proposals: list[tuple[_Node, list]] = []
        ordinal = 0
        last_error: BackendError | None = None
        for node in live:
            slot_base = 0 if t == 0 else node.lineage * schedule.expansion
            try:
                segments = sample_continuations(
                    policy, node.state, fan, seed, slot_base=slot_base
                )
            except BackendError as exc:
                last_error = exc
                continue
            proposals.append((node, segments, slot_base, ordinal))
            ordinal += len(segments)
        if not proposals:
            raise SearchError(
                f"all candidate generation failed at step {t}: {last_error}", step=t
            )
        entries: list[_Node] = []
        for node, segments, slot_base, first_ordinal in proposals:
            tokens += sum(seg.token_count for seg in segments)
            values = score_batch(reward, node.state, segments)
            for offset, (seg, value) in enumerate(zip(segments, values)):
                entries.append(
                    _Node(
                        state=append_action(node.state, seg, config.max_steps),
                        path=node.path + (first_ordinal + offset,),
                        lineage=slot_base + offset,
                        scores=node.scores + (value,),
                    )
                )
        width = beam_size_at(schedule, t + 1)
        ranked = sorted(entries + pool, key=lambda n: (-n.last_score, n.path))
        kept = ranked[:width]
        width_history.append(len(kept))
        pool = [
            n
            for n in kept
            if n.state.is_terminal or n.state.step_index >= config.max_steps
        ]
        live = [
            n
            for n in kept
            if not n.state.is_terminal and n.state.step_index < config.max_steps
        ]
        t += 1
        if pool and not live:
            break
    terminal = [n for n in pool if n.state.is_terminal]
    finishers = terminal or pool
    if not finishers:
        raise SearchError("search ended with no completed trajectory", step=t)
    winner = min(finishers, key=lambda n: (-n.last_score, n.path))
    return _finish(
        winner.state,
        tokens,
        winner.scores,
        label,
        config,
        width_history=tuple(width_history),
    )


def run_strategy(spec: StrategySpec, problem, policy, reward, seed: int) -> SearchResult:
    if spec.name == "single":
        return single_shot(problem, policy, seed)
    if spec.name == "bon":
        return best_of_n(problem, policy, reward, spec.n, seed)
    if spec.name == "step_bon":
        return step_level_best_of_n(problem, policy, reward, spec.n, seed)
    return beam_anneal_search(problem, policy, reward, spec.schedule, seed)


# ---------------------------------------------------------------------------
# Suite runner


@dataclass(frozen=True)
class ProblemOutcome:
    problem_id: str
    correct: bool
    tokens: int
    baseline_tokens: int
    token_ratio: float | None
    answer: str | None
    flagged: bool
    error: str | None = None


@dataclass(frozen=True)
class SuiteReport:
    strategy: str
    seed: int
    outcomes: tuple[ProblemOutcome, ...]
    accuracy: float
    mean_tokens: float
    mean_token_ratio: float | None
    failure_count: int

    def to_json(self) -> str:
        doc = {
            "strategy": self.strategy,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "mean_tokens": self.mean_tokens,
            "mean_token_ratio": self.mean_token_ratio,
            "failure_count": self.failure_count,
            "outcomes": [
                {
                    "problem_id": o.problem_id,
                    "correct": o.correct,
                    "tokens": o.tokens,
                    "baseline_tokens": o.baseline_tokens,
                    "token_ratio": o.token_ratio,
                    "answer": o.answer,
                    "flagged": o.flagged,
                    "error": o.error,
                }
                for o in self.outcomes
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SuiteReport":
        doc = json.loads(text)
        outcomes = tuple(
            ProblemOutcome(
                problem_id=o["problem_id"],
                correct=o["correct"],
                tokens=o["tokens"],
                baseline_tokens=o["baseline_tokens"],
                token_ratio=o["token_ratio"],
                answer=o["answer"],
                flagged=o["flagged"],
                error=o.get("error"),
            )
            for o in doc["outcomes"]
        )
        return cls(
            strategy=doc["strategy"],
            seed=doc["seed"],
            outcomes=outcomes,
            accuracy=doc["accuracy"],
            mean_tokens=doc["mean_tokens"],
            mean_token_ratio=doc["mean_token_ratio"],
            failure_count=doc["failure_count"],
        )

    def to_csv(self) -> str:
        lines = ["problem_id,strategy,correct,tokens,token_ratio"]
        for o in self.outcomes:
            ratio = "" if o.token_ratio is None else repr(o.token_ratio)
            lines.append(
                f"{o.problem_id},{self.strategy},{int(o.correct)},{o.tokens},{ratio}"
            )
        return "\n".join(lines) + "\n"


def run_suite(
    problems,
    spec: StrategySpec,
    policy,
    reward,
    seed: int,
    workers: int = 1,
) -> SuiteReport:
    """Run a strategy over a suite with a paired single-shot baseline.

    Baselines share the per-problem seed, so token ratios compare against
    the exact rollout the strategy's slot-0 stream would have produced.
    Per-problem backend failures are recorded, not fatal.
    """
    problems = list(problems)
    if not problems:
        raise UsageError("problem list is empty")

    def run_one(problem) -> ProblemOutcome:
        problem_seed = hash_u64(seed, hash_str(problem.id))
        try:
            result = run_strategy(spec, problem, policy, reward, problem_seed)
            if spec.name == "single":
                baseline_tokens = result.tokens_generated
            else:
                baseline = single_shot(problem, policy, problem_seed)
                baseline_tokens = baseline.tokens_generated
            ratio = result.tokens_generated / baseline_tokens
            return ProblemOutcome(
                problem_id=problem.id,
                correct=bool(result.correct),
                tokens=result.tokens_generated,
                baseline_tokens=baseline_tokens,
                token_ratio=ratio,
                answer=result.answer,
                flagged=result.flagged,
            )
        except (BackendError, SearchError) as exc:
            return ProblemOutcome(
                problem_id=problem.id,
                correct=False,
                tokens=0,
                baseline_tokens=0,
                token_ratio=None,
                answer=None,
                flagged=True,
                error=str(exc),
            )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, problems))
    else:
        outcomes = [run_one(p) for p in problems]

    succeeded = [o for o in outcomes if o.error is None]
    ratios = [o.token_ratio for o in succeeded if o.token_ratio is not None]
    return SuiteReport(
        strategy=spec.label(),
        seed=seed,
        outcomes=tuple(outcomes),
        accuracy=sum(o.correct for o in outcomes) / len(outcomes),
        mean_tokens=(
            sum(o.tokens for o in succeeded) / len(succeeded) if succeeded else 0.0
        ),
        mean_token_ratio=(sum(ratios) / len(ratios) if ratios else None),
        failure_count=len(outcomes) - len(succeeded),
    )
