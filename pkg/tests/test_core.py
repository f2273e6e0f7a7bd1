"""Core vocabulary: trajectories, answer extraction, answer matching."""

import random

import pytest

from beamanneal.core import (
    ActionSegment,
    Problem,
    TrajectoryState,
    answers_match,
    append_action,
    extract_final_answer,
    initial_state,
)
from beamanneal.errors import UsageError


def _problem(pid="p0"):
    return Problem(id=pid, prompt="pick wisely", gold_answer="4")


def _segment(tokens=30, terminal=False, text="step text"):
    return ActionSegment(text=text, token_count=tokens, terminal=terminal)


class TestProblem:
    def test_empty_id_rejected(self):
        with pytest.raises(UsageError):
            Problem(id="", prompt="x", gold_answer="4")

    def test_empty_gold_rejected(self):
        with pytest.raises(UsageError):
            Problem(id="p", prompt="x", gold_answer="")

    def test_bad_source_rejected(self):
        with pytest.raises(UsageError):
            Problem(id="p", prompt="x", gold_answer="4", source="scraped")


class TestAppendAction:
    def test_empty_plus_full_segment(self):
        state = initial_state(_problem())
        out = append_action(state, _segment(30))
        assert out.step_index == 1
        assert out.tokens_generated == 30
        assert not out.is_terminal

    def test_running_sums(self):
        state = initial_state(_problem())
        for _ in range(3):
            state = append_action(state, _segment(30))
        out = append_action(state, _segment(12, terminal=True))
        assert out.step_index == 4
        assert out.tokens_generated == 102
        assert out.is_terminal

    def test_append_to_terminal_is_usage_error(self):
        state = append_action(initial_state(_problem()), _segment(12, terminal=True))
        with pytest.raises(UsageError):
            append_action(state, _segment(30))

    def test_append_past_cap_is_usage_error(self):
        state = initial_state(_problem())
        state = append_action(state, _segment(30), max_steps=1)
        with pytest.raises(UsageError):
            append_action(state, _segment(30), max_steps=1)

    def test_input_state_is_not_mutated(self):
        state = append_action(initial_state(_problem()), _segment(30))
        snapshot = TrajectoryState(state.problem, state.segments)
        append_action(state, _segment(30))
        assert state == snapshot

    def test_token_additivity_over_random_append_chains(self):
        rng = random.Random(42)
        for _ in range(200):
            state = initial_state(_problem())
            counts = []
            for step in range(rng.randrange(1, 12)):
                tokens = rng.randrange(1, 31)
                terminal = tokens < 30
                state = append_action(state, _segment(tokens, terminal))
                counts.append(tokens)
                if terminal:
                    break
            assert state.tokens_generated == sum(counts)
            assert state.step_index == len(counts)

    def test_no_segment_after_terminal_in_constructor(self):
        with pytest.raises(UsageError):
            TrajectoryState(_problem(), (_segment(10, True), _segment(30)))


class TestExtractFinalAnswer:
    def test_single_marker(self):
        assert extract_final_answer("so x=4. Final answer: 4") == "4"

    def test_no_marker(self):
        assert extract_final_answer("no marker here") is None

    def test_last_occurrence_wins(self):
        assert extract_final_answer("Final answer: 3 ... then Final answer: 7") == "7"

    def test_last_occurrence_over_enumerated_positions(self):
        # build texts with the marker at every subset of line positions and
        # confirm the final one is always authoritative
        for first in range(4):
            for second in range(first + 1, 5):
                lines = ["filler"] * 5
                lines[first] = "Final answer: 3"
                lines[second] = "Final answer: 7"
                assert extract_final_answer("\n".join(lines)) == "7"

    def test_marker_followed_by_whitespace_only(self):
        assert extract_final_answer("Final answer:   ") is None
        assert extract_final_answer("Final answer:\nmore text") is None

    def test_stops_at_line_break(self):
        assert extract_final_answer("Final answer: 42\njunk after") == "42"

    def test_idempotent_on_own_output(self):
        answer = extract_final_answer("reasoning... Final answer: 12.5")
        again = extract_final_answer(f"Final answer: {answer}")
        assert again == answer


class TestAnswersMatch:
    @pytest.mark.parametrize(
        "predicted,gold,expected",
        [
            ("4", "4.0", True),
            (" Yes.", "yes", True),
            ("3/4", "0.75", False),  # fractions deliberately not parsed
            ("YES  please", "yes please", True),
            ("4.0000001", "4", True),
            ("4.1", "4", False),
            ("0", "0.0", True),
            ("1e3", "1000", True),
            ("four", "4", False),
        ],
    )
    def test_normalization_table(self, predicted, gold, expected):
        assert answers_match(predicted, gold) is expected

    def test_empty_gold_rejected(self):
        with pytest.raises(UsageError):
            answers_match("4", "")

    def test_symmetric_and_reflexive(self):
        rng = random.Random(7)
        pool = ["4", "4.0", "yes", "Yes.", "12 34", "0.75", "3/4", "-2.5", "abc"]
        for _ in range(500):
            a, b = rng.choice(pool), rng.choice(pool)
            assert answers_match(a, b) == answers_match(b, a)
            assert answers_match(a, a)
