"""Generation and reward-scoring backends behind uniform interfaces.

Three policy backends (synthetic environment, scripted replay, HTTP
chat-completions) and three reward backends (exact oracle, learned scorer,
constant). Search code only ever sees the module-level operations, so it
never knows which implementation is behind them.

Candidate seeding: ``sample_continuations`` derives the seed for candidate
``i`` as ``hash_u64(seed, state.step_index, slot_base + i)``. Callers that
track lineages (beam search) pass a stable ``slot_base`` so a candidate's
stream is a function of its slot, not of how many siblings were requested;
re-running with a wider fan-out reproduces the narrower run's candidates
exactly.

HTTP wire format (OpenAI-style chat completions), one request per call:

    {"model": <model_name>, "messages": [system, user, assistant?],
     "max_tokens": <segment_length>, "n": <count>,
     "temperature": <temperature>, "seed": <derived int32>}

with system = the configured prompt template, user = the problem prompt,
and the partial answer (when any) as an assistant message. Responses are
read from ``choices[i].message.content``; per-candidate token counts come
from ``choices[i].usage.completion_tokens`` when the server provides them,
else from top-level ``usage.completion_tokens`` for single-choice requests,
else fall back to whitespace-delimited word count. ``finish_reason ==
"stop"`` marks end-of-sequence. Setting ``chunk_size`` splits one call into
several concurrent requests; results are reassembled in candidate order no
matter which request finishes first.
"""

from __future__ import annotations

import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import requests

from beamanneal.core import (
    ActionSegment,
    DEFAULT_CONFIG,
    EngineConfig,
    TrajectoryState,
    append_action,
    validate_segment,
)
from beamanneal.errors import (
    BackendError,
    ProtocolError,
    UnsupportedRewardError,
    UsageError,
)
from beamanneal.seeding import child_seed
from beamanneal.synthenv import (
    OraclePosition,
    TaskSuite,
    branch_of_segment,
    position_for_state,
    render_segment,
    sample_branch,
    true_success_prob,
)

POLICY_KINDS = ("synthetic", "replay", "http")
REWARD_KINDS = ("oracle", "learned", "constant")

TOKEN_ENV_VAR = "BEAMANNEAL_API_TOKEN"


@dataclass(frozen=True)
class PolicyDescriptor:
    """Configuration describing a generation backend."""

    kind: str
    temperature: float = 1.0
    endpoint: str | None = None
    model_name: str | None = None
    concurrency_limit: int = 4

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise UsageError(f"unknown policy kind {self.kind!r}")
        if self.concurrency_limit < 1:
            raise UsageError("concurrency_limit must be >= 1")
        if (self.kind == "http") != (self.endpoint is not None):
            raise UsageError("endpoint must be present iff kind is http")


@dataclass(frozen=True)
class RewardDescriptor:
    """Configuration describing a reward backend."""

    kind: str
    scorer: object | None = None
    constant_value: float = 0.5

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise UsageError(f"unknown reward kind {self.kind!r}")
        if not (0.0 <= self.constant_value <= 1.0):
            raise UsageError("constant_value must lie in [0, 1]")
        if self.kind == "learned" and self.scorer is None:
            raise UsageError("learned reward needs a scorer")


# ---------------------------------------------------------------------------
# Policies


class SyntheticPolicy:
    """Walks the synthetic decision-tree environment."""

    kind = "synthetic"

    def __init__(self, suite: TaskSuite, config: EngineConfig = DEFAULT_CONFIG):
        self.suite = suite
        self.config = config

    def sample_continuations(self, state, count, seed, slot_base=0):
        task = self.suite.task_for(state.problem.id)
        position = position_for_state(task, state)
        segments = []
        for i in range(count):
            rng = random.Random(child_seed(seed, state.step_index, slot_base + i))
            branch = sample_branch(task, position.branch_history, rng)
            segments.append(render_segment(position, branch, self.config))
        return segments


class ReplayPolicy:
    """Serves scripted continuations keyed by the partial-answer text.

    ``script`` maps a state's text (empty string for the initial state) to
    the candidate segments offered there; candidate ``slot_base + i`` picks
    the entry at that index modulo the list length, so replay is fully
    deterministic and seed-independent.
    """

    kind = "replay"

    def __init__(self, script: dict[str, list[ActionSegment]], config: EngineConfig = DEFAULT_CONFIG):
        self.script = dict(script)
        self.config = config

    def sample_continuations(self, state, count, seed, slot_base=0):
        entries = self.script.get(state.text)
        if not entries:
            raise BackendError(f"no scripted continuation for state {state.text!r}")
        return [entries[(slot_base + i) % len(entries)] for i in range(count)]


class HttpPolicy:
    """OpenAI-compatible chat-completions client with bounded retries."""

    kind = "http"

    def __init__(
        self,
        descriptor: PolicyDescriptor,
        config: EngineConfig = DEFAULT_CONFIG,
        chunk_size: int | None = None,
        session: requests.Session | None = None,
        max_attempts: int = 3,
        backoff_base: float = 0.25,
        timeout: float = 30.0,
        sleep=time.sleep,
    ):
        if descriptor.kind != "http":
            raise UsageError("HttpPolicy needs an http descriptor")
        if chunk_size is not None and chunk_size < 1:
            raise UsageError("chunk_size must be >= 1")
        self.descriptor = descriptor
        self.config = config
        self.chunk_size = chunk_size
        self.session = session or requests.Session()
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout
        self._sleep = sleep

    # -- wire format -------------------------------------------------------

    def build_request_body(self, state: TrajectoryState, count: int, seed_value: int) -> dict:
        messages = [
            {"role": "system", "content": self.config.prompt_template},
            {"role": "user", "content": state.problem.prompt},
        ]
        if state.segments:
            messages.append({"role": "assistant", "content": state.text})
        return {
            "model": self.descriptor.model_name,
            "messages": messages,
            "max_tokens": self.config.segment_length,
            "n": count,
            "temperature": self.descriptor.temperature,
            "seed": seed_value % (2**31),
        }

    def _headers(self) -> dict:
        import os

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(TOKEN_ENV_VAR)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, body: dict) -> dict:
        last_error = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                response = self.session.post(
                    self.descriptor.endpoint,
                    json=body,
                    headers=self._headers(),
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if response.status_code == 200:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise ProtocolError(f"response body is not JSON: {exc}") from exc
                if response.status_code == 429 or response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                else:
                    raise ProtocolError(
                        f"HTTP {response.status_code}: {response.text[:200]}",
                        attempts=attempt,
                    )
            if attempt < self.max_attempts:
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
        raise BackendError(
            f"request failed after {self.max_attempts} attempts: {last_error}",
            attempts=self.max_attempts,
        )

    def _segments_from_response(self, payload: dict, expected: int) -> list[ActionSegment]:
        try:
            choices = payload["choices"]
        except (KeyError, TypeError):
            raise ProtocolError("response missing 'choices'") from None
        if len(choices) != expected:
            raise ProtocolError(f"expected {expected} choices, got {len(choices)}")
        usage = payload.get("usage") or {}
        segments = []
        for choice in choices:
            try:
                content = choice["message"]["content"]
            except (KeyError, TypeError):
                raise ProtocolError("choice missing message content") from None
            if not isinstance(content, str) or not content:
                raise ProtocolError("choice content empty or not a string")
            terminal = choice.get("finish_reason") == "stop"
            limit = self.config.segment_length
            per_choice_usage = choice.get("usage") or {}
            tokens = per_choice_usage.get("completion_tokens")
            if tokens is None and expected == 1:
                tokens = usage.get("completion_tokens")
            if tokens is not None:
                if not isinstance(tokens, int) or tokens < 1 or tokens > limit:
                    raise ProtocolError(
                        f"reported completion token count {tokens!r} outside [1, {limit}]"
                    )
                if not terminal and tokens != limit:
                    raise ProtocolError(
                        f"non-terminal choice reported {tokens} tokens; a choice "
                        f"that did not stop must have filled all {limit}"
                    )
            elif terminal:
                # documented fallback: whitespace-delimited word count
                tokens = min(max(1, len(content.split())), limit)
            else:
                tokens = limit
            segments.append(ActionSegment(text=content, token_count=tokens, terminal=terminal))
        return segments

    # -- sampling ----------------------------------------------------------

    def sample_continuations(self, state, count, seed, slot_base=0):
        chunk = count if self.chunk_size is None else self.chunk_size
        spans = []
        offset = 0
        while offset < count:
            size = min(chunk, count - offset)
            spans.append((slot_base + offset, size))
            offset += size
        if len(spans) == 1:
            slot, size = spans[0]
            body = self.build_request_body(state, size, child_seed(seed, state.step_index, slot))
            return self._segments_from_response(self._post(body), size)
        results: list[list[ActionSegment]] = [None] * len(spans)  # type: ignore[list-item]
        workers = min(len(spans), self.descriptor.concurrency_limit)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = []
            for slot, size in spans:
                body = self.build_request_body(
                    state, size, child_seed(seed, state.step_index, slot)
                )
                futures.append(pool.submit(lambda b=body, s=size: self._segments_from_response(self._post(b), s)))
            for idx, future in enumerate(futures):
                results[idx] = future.result()
        return [seg for group in results for seg in group]


class CountingPolicy:
    """Wrapper that counts every token any strategy ever sampled."""

    def __init__(self, inner):
        self.inner = inner
        self.tokens_sampled = 0
        self.segments_sampled = 0

    @property
    def kind(self):
        return self.inner.kind

    @property
    def config(self):
        return self.inner.config

    def sample_continuations(self, state, count, seed, slot_base=0):
        segments = self.inner.sample_continuations(state, count, seed, slot_base)
        self.tokens_sampled += sum(seg.token_count for seg in segments)
        self.segments_sampled += len(segments)
        return segments


def make_policy(
    descriptor: PolicyDescriptor,
    *,
    suite: TaskSuite | None = None,
    config: EngineConfig = DEFAULT_CONFIG,
    script: dict | None = None,
    **http_kwargs,
):
    if descriptor.kind == "synthetic":
        if suite is None:
            raise UsageError("synthetic policy needs a task suite")
        return SyntheticPolicy(suite, config)
    if descriptor.kind == "replay":
        if script is None:
            raise UsageError("replay policy needs a script")
        return ReplayPolicy(script, config)
    return HttpPolicy(descriptor, config, **http_kwargs)


# ---------------------------------------------------------------------------
# Rewards


class OracleReward:
    """Scores an action by the exact success probability of its successor."""

    kind = "oracle"

    def __init__(self, suite: TaskSuite):
        self.suite = suite

    def score(self, state: TrajectoryState, action: ActionSegment) -> float:
        if state.problem.source != "synthetic" or not self.suite.has_problem(state.problem.id):
            raise UnsupportedRewardError(
                f"oracle reward cannot score problem {state.problem.id!r}"
            )
        task = self.suite.task_for(state.problem.id)
        position = position_for_state(task, state)
        branch = branch_of_segment(action.text)
        return true_success_prob(position.child(branch))


class LearnedReward:
    """Scores with a trained scorer model's forward pass."""

    kind = "learned"

    def __init__(self, scorer):
        self.scorer = scorer

    def score(self, state, action):
        return float(
            self.scorer.predict_fields(
                step_index=state.step_index,
                state_text=state.text,
                action_text=action.text,
                action_tokens=action.token_count,
            )
        )

    def score_batch(self, state, actions):
        return [
            float(v)
            for v in self.scorer.predict_fields_batch(
                [
                    dict(
                        step_index=state.step_index,
                        state_text=state.text,
                        action_text=action.text,
                        action_tokens=action.token_count,
                    )
                    for action in actions
                ]
            )
        ]


class ConstantReward:
    kind = "constant"

    def __init__(self, value: float):
        if not (0.0 <= value <= 1.0):
            raise UsageError("constant reward must lie in [0, 1]")
        self.value = value

    def score(self, state, action):
        return self.value


def make_reward(descriptor: RewardDescriptor, *, suite: TaskSuite | None = None):
    if descriptor.kind == "oracle":
        if suite is None:
            raise UsageError("oracle reward needs a task suite")
        return OracleReward(suite)
    if descriptor.kind == "learned":
        return LearnedReward(descriptor.scorer)
    return ConstantReward(descriptor.constant_value)


# ---------------------------------------------------------------------------
# Module-level operations


def sample_continuations(policy, state: TrajectoryState, count: int, seed: int, slot_base: int = 0):
    """Draw ``count`` candidate segments in stable candidate order."""
    if count < 1:
        raise UsageError("count must be >= 1")
    if state.is_terminal:
        raise UsageError("cannot continue a terminal state")
    segments = policy.sample_continuations(state, count, seed, slot_base)
    length = policy.config.segment_length
    return [validate_segment(seg, length) for seg in segments]


def rollout_to_completion(policy, state: TrajectoryState, seed: int, slot: int = 0):
    """Greedy-sample one continuation per step until terminal or the cap.

    A state returned non-terminal hit the step cap; downstream consumers
    treat it as incorrect.
    """
    if state.is_terminal:
        raise UsageError("cannot roll out a terminal state")
    max_steps = policy.config.max_steps
    current = state
    while not current.is_terminal and current.step_index < max_steps:
        segment = sample_continuations(policy, current, 1, seed, slot_base=slot)[0]
        current = append_action(current, segment, max_steps)
    return current


def score(reward, state: TrajectoryState, action: ActionSegment) -> float:
    """Probability-like quality of taking ``action`` from ``state``."""
    value = float(reward.score(state, action))
    if not (0.0 <= value <= 1.0):
        raise UsageError(f"reward backend produced {value} outside [0, 1]")
    return value


def score_batch(reward, state: TrajectoryState, actions) -> list[float]:
    """Elementwise :func:`score`; order-preserving."""
    actions = list(actions)
    if not actions:
        return []
    native = getattr(reward, "score_batch", None)
    if native is not None:
        values = [float(v) for v in native(state, actions)]
        for value in values:
            if not (0.0 <= value <= 1.0):
                raise UsageError(f"reward backend produced {value} outside [0, 1]")
        return values
    return [score(reward, state, action) for action in actions]
