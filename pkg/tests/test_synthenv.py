"""Synthetic environment: rendering, exact oracle, enumeration."""

import math
import random

import pytest

from beamanneal.core import extract_final_answer
from beamanneal.errors import SizeLimitError, UsageError
from beamanneal.synthenv import (
    ENUMERATION_GUARD,
    OraclePosition,
    SyntheticTask,
    TaskSuite,
    branch_of_segment,
    enumerate_trajectories,
    generate_tasks,
    mean_success_mass,
    render_segment,
    sample_branch,
    true_success_prob,
)


def _task(depth=2, branching=2, path=None, slip=0.2, recovery=0.0, seed=11):
    path = tuple(path) if path is not None else tuple([1] * depth)
    slips = tuple([slip] * depth) if isinstance(slip, float) else tuple(slip)
    return SyntheticTask(
        depth=depth,
        branching=branching,
        correct_path=path,
        slip_prob=slips,
        recovery_prob=recovery,
        seed=seed,
    )


class TestTaskValidation:
    def test_branching_below_two_rejected(self):
        with pytest.raises(UsageError):
            _task(branching=1, path=(0, 0))

    def test_path_entry_out_of_range(self):
        with pytest.raises(UsageError):
            _task(path=(2, 0))

    def test_probability_out_of_range(self):
        with pytest.raises(UsageError):
            _task(slip=1.5)


class TestRenderSegment:
    def test_depth_one_correct_branch_carries_gold(self):
        task = _task(depth=1, path=(1,), slip=0.0)
        seg = render_segment(OraclePosition(task), 1)
        assert seg.terminal
        assert extract_final_answer(seg.text) == task.gold_answer

    def test_depth_one_wrong_branch_misses_gold(self):
        task = _task(depth=1, path=(1,), slip=0.0)
        seg = render_segment(OraclePosition(task), 0)
        assert seg.terminal
        assert extract_final_answer(seg.text) != task.gold_answer

    def test_non_final_step_fills_segment(self):
        task = _task(depth=3, path=(1, 1, 1))
        seg = render_segment(OraclePosition(task), 0)
        assert seg.token_count == 30
        assert not seg.terminal

    def test_final_step_is_shorter_and_terminal(self):
        task = _task(depth=2)
        seg = render_segment(OraclePosition(task, (1,)), 1)
        assert seg.terminal
        assert 1 <= seg.token_count < 30

    def test_branch_out_of_range(self):
        task = _task()
        with pytest.raises(UsageError):
            render_segment(OraclePosition(task), 2)

    def test_branch_roundtrips_through_text(self):
        task = _task(branching=4, path=(3, 0))
        for b in range(4):
            assert branch_of_segment(render_segment(OraclePosition(task), b).text) == b


class TestTrueSuccessProb:
    def test_off_path_without_recovery_is_zero(self):
        task = _task(depth=2, path=(1, 1))
        assert true_success_prob(OraclePosition(task, (0,))) == 0.0

    def test_completed_correct_path_is_one(self):
        task = _task(depth=2, path=(1, 1))
        assert true_success_prob(OraclePosition(task, (1, 1))) == 1.0

    def test_two_step_root_value(self):
        task = _task(depth=2, path=(1, 0), slip=0.2)
        value = true_success_prob(OraclePosition(task))
        assert value == pytest.approx(0.64, abs=1e-12)

    def test_dp_matches_enumeration(self):
        rng = random.Random(3)
        for trial in range(40):
            depth = rng.randint(1, 4)
            branching = rng.randint(2, 3)
            recovery = rng.choice([0.0, 0.0, 0.3, 0.7])
            task = SyntheticTask(
                depth=depth,
                branching=branching,
                correct_path=tuple(rng.randrange(branching) for _ in range(depth)),
                slip_prob=tuple(rng.random() for _ in range(depth)),
                recovery_prob=recovery,
                seed=trial,
            )
            dp = true_success_prob(OraclePosition(task))
            assert abs(dp - mean_success_mass(task)) < 1e-10

    def test_on_path_value_non_decreasing_with_constant_slip(self):
        task = _task(depth=6, path=(1,) * 6, slip=0.25)
        values = [
            true_success_prob(OraclePosition(task, tuple([1] * t))) for t in range(7)
        ]
        assert all(b >= a for a, b in zip(values, values[1:]))


class TestEnumeration:
    def test_counts_and_mass(self):
        task = _task(depth=3, branching=3, path=(0, 1, 2), slip=0.3)
        outcomes = enumerate_trajectories(task)
        assert len(outcomes) == 27
        assert abs(math.fsum(o.probability for o in outcomes) - 1.0) < 1e-12

    def test_depth_one_two_trajectories(self):
        outcomes = enumerate_trajectories(_task(depth=1, path=(1,)))
        assert len(outcomes) == 2
        assert abs(sum(o.probability for o in outcomes) - 1.0) < 1e-12

    def test_guard(self):
        task = _task(depth=15, branching=3, path=(0,) * 15, slip=[0.1] * 15)
        assert 3**15 > ENUMERATION_GUARD
        with pytest.raises(SizeLimitError):
            enumerate_trajectories(task)


class TestSampling:
    def test_seeded_determinism(self):
        task = _task(depth=4, branching=3, path=(0, 1, 2, 0), slip=0.4)
        for seed in range(20):
            a = sample_branch(task, (), random.Random(seed))
            b = sample_branch(task, (), random.Random(seed))
            assert a == b

    def test_off_path_is_uniform(self):
        task = _task(depth=2, branching=4, path=(0, 0), slip=0.1)
        rng = random.Random(0)
        draws = [sample_branch(task, (1,), rng) for _ in range(4000)]
        for b in range(4):
            assert abs(draws.count(b) / 4000 - 0.25) < 0.05


class TestSuiteIO:
    def test_round_trip(self, tmp_path):
        suite = generate_tasks(25, depth_range=(3, 6), seed=5, recovery_prob=0.2)
        path = tmp_path / "suite.json"
        suite.save(path)
        loaded = TaskSuite.load(path)
        assert loaded.tasks == suite.tasks

    def test_same_seed_same_suite(self):
        a = generate_tasks(10, seed=9)
        b = generate_tasks(10, seed=9)
        assert a.tasks == b.tasks
        assert a.to_json() == b.to_json()

    def test_problem_binding(self):
        suite = generate_tasks(4, seed=1)
        problems = suite.problems()
        assert len({p.id for p in problems}) == 4
        for i, p in enumerate(problems):
            assert suite.task_for(p.id) is suite.tasks[i]
            assert p.gold_answer == suite.tasks[i].gold_answer

    def test_frontloaded_profile_slips_decrease(self):
        suite = generate_tasks(30, depth_range=(5, 8), profile="frontloaded", seed=2)
        for task in suite.tasks:
            slips = task.slip_prob
            assert 0.45 <= slips[0] <= 0.55
            assert all(b <= a for a, b in zip(slips, slips[1:]))
