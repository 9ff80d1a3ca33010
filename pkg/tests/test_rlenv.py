import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openrace.rlenv import (
    OBSERVATION_SIZE,
    CurriculumState,
    EpisodeResult,
    ScriptedBaseline,
    curriculum_update,
    reward,
)

SUCCESS = EpisodeResult(reason="lap_complete", laps=1, total_reward=100.0, lap_time=40.0)
FAIL = EpisodeResult(reason="track_limit", laps=0, total_reward=-5.0)


def run_sequence(outcomes, threshold=50):
    state = CurriculumState(buffer_episode_threshold=threshold)
    caps = []
    for ok in outcomes:
        state = curriculum_update(state, SUCCESS if ok else FAIL)
        caps.append(state.cap)
    return state, caps


class TestCurriculum:
    def test_below_threshold_cap_unchanged(self):
        state, caps = run_sequence([True] * 49)
        assert caps == [0.0] * 49

    def test_threshold_edge_first_increment(self):
        state, caps = run_sequence([True] * 50)
        assert caps[-2] == 0.0
        assert caps[-1] == 0.5
        assert state.cap_level == 1

    def test_failures_never_lower_cap(self):
        state, caps = run_sequence([True] * 55 + [False] * 20)
        assert caps[-1] == caps[54]

    def test_uncaps_after_twenty_increments(self):
        state, caps = run_sequence([True] * (50 + 19))
        assert math.isinf(state.cap)
        assert state.cap_uncapped

    def test_interleavings_equal_success_only(self):
        # Exhaustive: all length-10 outcome interleavings with equal success
        # counts produce identical caps.
        import itertools

        threshold = 4
        by_successes = {}
        for bits in itertools.product([0, 1], repeat=10):
            state, _ = run_sequence([bool(b) for b in bits], threshold=threshold)
            key = sum(bits)
            by_successes.setdefault(key, set()).add(state.cap)
        for key, caps in by_successes.items():
            assert len(caps) == 1, f"{key} successes gave caps {caps}"

    @given(st.lists(st.booleans(), min_size=1, max_size=200))
    @settings(max_examples=1000, deadline=None)
    def test_cap_non_decreasing_over_any_outcome_sequence(self, outcomes):
        _, caps = run_sequence(outcomes, threshold=10)
        assert all(b >= a for a, b in zip(caps, caps[1:]))


class TestReward:
    def test_initial_cap_zero_reward_is_progress_only(self):
        curriculum = CurriculumState()
        assert reward(3.0, 40.0, curriculum, violation=False) == 3.0
        assert reward(3.0, 40.0, curriculum, violation=True) == 3.0 - 10.0

    def test_bonus_below_cap_equals_uncapped(self):
        c_low = CurriculumState(speed_reward_cap=5.0, cap_level=10)
        c_inf = CurriculumState(cap_uncapped=True, cap_level=20)
        speed = 20.0  # bonus = 0.01 * 400 = 4.0 < 5.0
        assert reward(1.0, speed, c_low, False) == reward(1.0, speed, c_inf, False)

    def test_reward_monotone_in_cap_over_recorded_rollout(self):
        rng = np.random.default_rng(4)
        rollout = [(float(rng.uniform(0.5, 2.0)), float(rng.uniform(5, 50))) for _ in range(400)]

        def total(cap):
            c = CurriculumState(speed_reward_cap=cap, cap_level=1)
            return sum(reward(ds, v, c, False) for ds, v in rollout)

        caps = [0.0, 0.5, 2.0, 5.0, 20.0]
        totals = [total(c) for c in caps]
        assert all(b >= a for a, b in zip(totals, totals[1:]))


class TestEpisodeResult:
    def test_reason_validation(self):
        with pytest.raises(ValueError):
            EpisodeResult(reason="wat", laps=0, total_reward=0.0)

    def test_lap_time_iff_complete(self):
        with pytest.raises(ValueError):
            EpisodeResult(reason="timeout", laps=0, total_reward=0.0, lap_time=5.0)
        with pytest.raises(ValueError):
            EpisodeResult(reason="lap_complete", laps=1, total_reward=0.0)


class TestScriptedBaselinePolicy:
    def make_obs(self, kappas=None, vx=20.0, vy=0.0, yaw=0.0, d_line=0.0,
                 d_left=6.0, d_right=6.0):
        obs = np.zeros(OBSERVATION_SIZE)
        if kappas is not None:
            obs[:30] = kappas
        obs[38] = vx
        obs[39] = vy
        obs[40] = yaw
        obs[41] = d_line
        obs[42] = d_left
        obs[43] = d_right
        return obs

    def test_on_line_on_speed_near_zero_steering(self):
        policy = ScriptedBaseline(v_cap=20.0)
        cmd = policy(self.make_obs(vx=20.0))
        assert abs(cmd.steering) < 0.02
        assert cmd.brake == 0.0

    def test_offset_right_steers_left(self):
        policy = ScriptedBaseline()
        cmd = policy(self.make_obs(d_line=1.5, vx=15.0))
        assert cmd.steering < 0.0

    def test_corner_ahead_slows_down(self):
        policy = ScriptedBaseline(v_cap=46.0)
        straight = policy(self.make_obs(vx=40.0))
        corner = ScriptedBaseline(v_cap=46.0)(
            self.make_obs(kappas=np.full(30, 1.0 / 25.0), vx=40.0)
        )
        assert corner.brake > 0.0
        assert straight.throttle > 0.0

    def test_deterministic(self):
        a = ScriptedBaseline()
        b = ScriptedBaseline()
        obs = self.make_obs(d_line=0.4, vx=22.0)
        seq_a = [a(obs).steering for _ in range(5)]
        seq_b = [b(obs).steering for _ in range(5)]
        assert seq_a == seq_b
