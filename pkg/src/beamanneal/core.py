"""Core vocabulary: problems, fixed-length action segments, trajectories.

A trajectory grows by appending segments of generated text; each segment
counts the tokens the backend reported for it. Everything here is an
immutable value object, safe to share across threads.

Token counts are whatever the generation backend reports; this module never
tokenizes text itself.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

from beamanneal.errors import UsageError

DEFAULT_SEGMENT_LENGTH = 30
DEFAULT_MAX_STEPS = 20
DEFAULT_ANSWER_MARKER = "Final answer:"
DEFAULT_PROMPT_TEMPLATE = (
    "Please answer the question and provide the correct answer, e.g., 1, 2, "
    "3, 4, at the end. Give step by step reasoning before you answer, and "
    'when you\'re ready to answer, please use the format "Final answer: ..."'
)

PROBLEM_SOURCES = ("synthetic", "ingested")

_NUMERIC_REL_TOL = 1e-6


@dataclass(frozen=True)
class Problem:
    """A question with a canonical answer.

    ``media`` is an opaque attachment reference carried along for backends
    that want it; nothing in this package ever interprets it.
    """

    id: str
    prompt: str
    gold_answer: str
    source: str = "synthetic"
    media: str | None = None

    def __post_init__(self):
        if not self.id:
            raise UsageError("problem id must be nonempty")
        if not self.gold_answer:
            raise UsageError("gold answer must be nonempty")
        if self.source not in PROBLEM_SOURCES:
            raise UsageError(f"unknown problem source {self.source!r}")


@dataclass(frozen=True)
class ActionSegment:
    """One fixed-length block of generated text.

    ``terminal`` may be true only when the backend reported end-of-sequence
    within this segment. A segment shorter than the configured length must
    be terminal; backends enforce that at creation time via
    :func:`validate_segment` because the length limit is configuration, not
    a property of the segment itself.
    """

    text: str
    token_count: int
    terminal: bool = False

    def __post_init__(self):
        if self.token_count < 1:
            raise UsageError("segment token_count must be >= 1")


def validate_segment(segment: ActionSegment, segment_length: int) -> ActionSegment:
    """Check the config-dependent segment invariants; returns the segment."""
    if segment.token_count > segment_length:
        raise UsageError(
            f"segment has {segment.token_count} tokens, limit is {segment_length}"
        )
    if segment.token_count < segment_length and not segment.terminal:
        raise UsageError("segment shorter than the limit must be terminal")
    return segment


@dataclass(frozen=True)
class EngineConfig:
    """Engine-wide constants shared by backends and search strategies."""

    segment_length: int = DEFAULT_SEGMENT_LENGTH
    max_steps: int = DEFAULT_MAX_STEPS
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    answer_marker: str = DEFAULT_ANSWER_MARKER

    def __post_init__(self):
        if self.segment_length < 1:
            raise UsageError("segment_length must be >= 1")
        if self.max_steps < 1:
            raise UsageError("max_steps must be >= 1")
        if not self.answer_marker:
            raise UsageError("answer_marker must be nonempty")


DEFAULT_CONFIG = EngineConfig()


@dataclass(frozen=True)
class TrajectoryState:
    """A problem plus the ordered segments generated so far."""

    problem: Problem
    segments: tuple[ActionSegment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        for seg in self.segments[:-1]:
            if seg.terminal:
                raise UsageError("no segment may follow a terminal segment")

    @property
    def step_index(self) -> int:
        return len(self.segments)

    @property
    def tokens_generated(self) -> int:
        return sum(seg.token_count for seg in self.segments)

    @property
    def is_terminal(self) -> bool:
        return bool(self.segments) and self.segments[-1].terminal

    @property
    def text(self) -> str:
        """The partial answer so far; segment texts joined by newlines."""
        return "\n".join(seg.text for seg in self.segments)


def initial_state(problem: Problem) -> TrajectoryState:
    return TrajectoryState(problem=problem)


def append_action(
    state: TrajectoryState,
    action: ActionSegment,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> TrajectoryState:
    """Return a new state with ``action`` appended; the input is unchanged."""
    if state.is_terminal:
        raise UsageError("cannot append to a terminal state")
    if state.step_index >= max_steps:
        raise UsageError(f"cannot append past max_steps={max_steps}")
    return replace(state, segments=state.segments + (action,))


def extract_final_answer(text: str, marker: str = DEFAULT_ANSWER_MARKER) -> str | None:
    """Pull the declared answer out of a full response.

    The text after the *last* occurrence of ``marker`` (up to the first line
    break) is the answer; long chains may restate the marker while
    self-correcting, so the final statement wins. Returns None when the
    marker is absent or followed only by whitespace.
    """
    pos = text.rfind(marker)
    if pos < 0:
        return None
    tail = text[pos + len(marker) :]
    newline = tail.find("\n")
    if newline >= 0:
        tail = tail[:newline]
    tail = tail.strip()
    return tail or None


def _normalize_answer(answer: str) -> str:
    collapsed = re.sub(r"\s+", " ", answer.strip().lower())
    if collapsed.endswith("."):
        collapsed = collapsed[:-1].rstrip()
    return collapsed


def _try_number(text: str) -> float | None:
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def answers_match(predicted: str, gold: str) -> bool:
    """Compare an extracted answer against the gold answer.

    Both sides are lowercased, whitespace-collapsed and stripped of one
    trailing period. If both then parse as finite decimal numbers they are
    compared with relative tolerance 1e-6 (generation prints floats in
    varying formats); otherwise plain string equality. Fractions like
    "3/4" are deliberately not parsed.
    """
    if not gold:
        raise UsageError("gold answer must be nonempty")
    p = _normalize_answer(predicted)
    g = _normalize_answer(gold)
    pn = _try_number(p)
    gn = _try_number(g)
    if pn is not None and gn is not None:
        return math.isclose(pn, gn, rel_tol=_NUMERIC_REL_TOL, abs_tol=0.0)
    return p == g
