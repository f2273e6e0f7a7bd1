"""Policy and reward backends: determinism, seeding, scoring contracts."""

import random

import pytest

from beamanneal.backends import (
    ConstantReward,
    CountingPolicy,
    OracleReward,
    PolicyDescriptor,
    ReplayPolicy,
    RewardDescriptor,
    SyntheticPolicy,
    make_policy,
    make_reward,
    rollout_to_completion,
    sample_continuations,
    score,
    score_batch,
)
from beamanneal.core import (
    ActionSegment,
    EngineConfig,
    Problem,
    initial_state,
)
from beamanneal.errors import BackendError, UnsupportedRewardError, UsageError
from beamanneal.seeding import child_seed, hash_u64
from beamanneal.synthenv import (
    OraclePosition,
    SyntheticTask,
    TaskSuite,
    generate_tasks,
    true_success_prob,
)


@pytest.fixture(scope="module")
def uniform_suite():
    return generate_tasks(8, depth_range=(2, 4), branching=3, profile="uniform", seed=17)


@pytest.fixture(scope="module")
def uniform_policy(uniform_suite):
    return SyntheticPolicy(uniform_suite)


class TestDescriptors:
    def test_http_needs_endpoint(self):
        with pytest.raises(UsageError):
            PolicyDescriptor(kind="http")
        with pytest.raises(UsageError):
            PolicyDescriptor(kind="synthetic", endpoint="http://x")

    def test_concurrency_floor(self):
        with pytest.raises(UsageError):
            PolicyDescriptor(kind="synthetic", concurrency_limit=0)

    def test_constant_value_range(self):
        with pytest.raises(UsageError):
            RewardDescriptor(kind="constant", constant_value=1.5)

    def test_learned_needs_scorer(self):
        with pytest.raises(UsageError):
            RewardDescriptor(kind="learned")


class TestSyntheticSampling:
    def test_seeded_determinism(self, uniform_suite, uniform_policy):
        state = initial_state(uniform_suite.problems()[0])
        a = sample_continuations(uniform_policy, state, 3, seed=5)
        b = sample_continuations(uniform_policy, state, 3, seed=5)
        assert [s.text for s in a] == [s.text for s in b]

    def test_count_one_on_depth_one_task(self):
        task = SyntheticTask(
            depth=1, branching=2, correct_path=(1,), slip_prob=(0.0,), seed=3
        )
        suite = TaskSuite(tasks=(task,))
        policy = SyntheticPolicy(suite)
        segs = sample_continuations(policy, initial_state(suite.problems()[0]), 1, seed=0)
        assert len(segs) == 1
        assert segs[0].terminal

    def test_candidate_streams_are_slot_independent(self, uniform_suite, uniform_policy):
        state = initial_state(uniform_suite.problems()[1])
        wide = sample_continuations(uniform_policy, state, 10, seed=77)
        narrow = sample_continuations(uniform_policy, state, 4, seed=77)
        assert [s.text for s in wide[:4]] == [s.text for s in narrow]
        shifted = sample_continuations(uniform_policy, state, 4, seed=77, slot_base=6)
        assert [s.text for s in wide[6:10]] == [s.text for s in shifted]

    def test_continuing_terminal_state_rejected(self, uniform_suite, uniform_policy):
        state = rollout_to_completion(
            uniform_policy, initial_state(uniform_suite.problems()[0]), seed=1
        )
        assert state.is_terminal
        with pytest.raises(UsageError):
            sample_continuations(uniform_policy, state, 1, seed=1)

    def test_count_below_one_rejected(self, uniform_suite, uniform_policy):
        state = initial_state(uniform_suite.problems()[0])
        with pytest.raises(UsageError):
            sample_continuations(uniform_policy, state, 0, seed=1)


class TestRollout:
    def test_depth_two_task_completes_in_two_steps(self):
        task = SyntheticTask(
            depth=2, branching=2, correct_path=(0, 1), slip_prob=(0.5, 0.5), seed=9
        )
        suite = TaskSuite(tasks=(task,))
        policy = SyntheticPolicy(suite)
        final = rollout_to_completion(policy, initial_state(suite.problems()[0]), seed=4)
        assert final.is_terminal
        assert final.step_index == 2

    def test_step_cap_flags_as_non_terminal(self):
        task = SyntheticTask(
            depth=3, branching=2, correct_path=(0, 0, 0), slip_prob=(0.0,) * 3, seed=9
        )
        suite = TaskSuite(tasks=(task,))
        policy = SyntheticPolicy(suite, EngineConfig(max_steps=1))
        final = rollout_to_completion(policy, initial_state(suite.problems()[0]), seed=4)
        assert not final.is_terminal
        assert final.step_index == 1

    def test_empirical_rate_matches_oracle_within_3_sigma(self):
        task = SyntheticTask(
            depth=3,
            branching=3,
            correct_path=(0, 1, 2),
            slip_prob=(0.3, 0.2, 0.1),
            seed=23,
        )
        suite = TaskSuite(tasks=(task,))
        policy = SyntheticPolicy(suite)
        problem = suite.problems()[0]
        p_true = true_success_prob(OraclePosition(task))
        n = 2000
        hits = 0
        for j in range(n):
            final = rollout_to_completion(
                policy, initial_state(problem), seed=hash_u64(1234, j)
            )
            gold = problem.gold_answer
            hits += gold in final.segments[-1].text
        sigma = (p_true * (1 - p_true) / n) ** 0.5
        assert abs(hits / n - p_true) <= 3 * sigma


class TestReplay:
    def test_scripted_candidates_by_slot(self):
        problem = Problem(id="r0", prompt="count", gold_answer="2", source="ingested")
        seg_a = ActionSegment("alpha\nFinal answer: 2", 5, terminal=True)
        seg_b = ActionSegment("beta\nFinal answer: 9", 5, terminal=True)
        policy = ReplayPolicy({"": [seg_a, seg_b]})
        segs = sample_continuations(policy, initial_state(problem), 3, seed=0)
        assert [s.text for s in segs] == [seg_a.text, seg_b.text, seg_a.text]

    def test_missing_state_is_backend_error(self):
        problem = Problem(id="r0", prompt="count", gold_answer="2", source="ingested")
        policy = ReplayPolicy({})
        with pytest.raises(BackendError):
            sample_continuations(policy, initial_state(problem), 1, seed=0)


class TestRewards:
    def test_oracle_off_path_zero(self):
        task = SyntheticTask(
            depth=2, branching=2, correct_path=(1, 1), slip_prob=(0.2, 0.2), seed=2
        )
        suite = TaskSuite(tasks=(task,))
        policy = SyntheticPolicy(suite)
        reward = OracleReward(suite)
        state = initial_state(suite.problems()[0])
        from beamanneal.synthenv import render_segment

        off = render_segment(OraclePosition(task), 0)
        on = render_segment(OraclePosition(task), 1)
        assert score(reward, state, off) == 0.0
        assert score(reward, state, on) == pytest.approx(0.8)

    def test_oracle_rejects_foreign_problem(self, uniform_suite):
        reward = OracleReward(uniform_suite)
        foreign = Problem(id="zzz", prompt="?", gold_answer="1", source="ingested")
        seg = ActionSegment("step 0: took option 0; x", 30)
        with pytest.raises(UnsupportedRewardError):
            score(reward, initial_state(foreign), seg)

    def test_constant(self):
        reward = ConstantReward(0.5)
        seg = ActionSegment("anything", 3, terminal=True)
        problem = Problem(id="c", prompt="?", gold_answer="1", source="ingested")
        assert score(reward, initial_state(problem), seg) == 0.5

    def test_batch_matches_single_calls(self, uniform_suite, uniform_policy):
        reward = OracleReward(uniform_suite)
        state = initial_state(uniform_suite.problems()[2])
        candidates = sample_continuations(uniform_policy, state, 12, seed=3)
        batch = score_batch(reward, state, candidates)
        singles = [score(reward, state, c) for c in candidates]
        assert batch == singles

    def test_empty_batch(self, uniform_suite):
        reward = OracleReward(uniform_suite)
        state = initial_state(uniform_suite.problems()[0])
        assert score_batch(reward, state, []) == []

    def test_scores_in_unit_interval_10k_inputs(self):
        from beamanneal.core import append_action

        rng = random.Random(5)
        suite = generate_tasks(
            20, depth_range=(1, 4), branching=3, profile="uniform",
            recovery_prob=0.25, seed=33,
        )
        policy = SyntheticPolicy(suite)
        rewards = [OracleReward(suite), ConstantReward(0.31)]
        checked = 0
        while checked < 10_000:
            for problem in suite.problems():
                state = initial_state(problem)
                while not state.is_terminal:
                    candidates = sample_continuations(
                        policy, state, 8, seed=rng.randrange(2**32)
                    )
                    for reward in rewards:
                        for value in score_batch(reward, state, candidates):
                            assert 0.0 <= value <= 1.0
                            checked += 1
                    state = append_action(state, candidates[rng.randrange(8)])
        assert checked >= 10_000


class TestFactories:
    def test_make_policy_synthetic(self, uniform_suite):
        policy = make_policy(PolicyDescriptor(kind="synthetic"), suite=uniform_suite)
        assert isinstance(policy, SyntheticPolicy)

    def test_make_reward_kinds(self, uniform_suite):
        assert isinstance(
            make_reward(RewardDescriptor(kind="oracle"), suite=uniform_suite),
            OracleReward,
        )
        assert isinstance(
            make_reward(RewardDescriptor(kind="constant", constant_value=0.2)),
            ConstantReward,
        )


class TestCountingPolicy:
    def test_counts_every_sampled_token(self, uniform_suite):
        counting = CountingPolicy(SyntheticPolicy(uniform_suite))
        state = initial_state(uniform_suite.problems()[0])
        segs = sample_continuations(counting, state, 7, seed=1)
        assert counting.tokens_sampled == sum(s.token_count for s in segs)
        assert counting.segments_sampled == 7


class TestSeedSplitting:
    def test_child_seeds_distinct(self):
        seen = set()
        for step in range(50):
            for slot in range(50):
                seen.add(child_seed(912, step, slot))
        assert len(seen) == 2500
