import numpy as np
import pytest

from exotune.datastore import RewardConfig, compute_reward
from exotune.simulator import (
    OracleResult,
    SimConfig,
    SimState,
    ThresholdAction,
    ThresholdGrid,
    VirtualUserConfig,
    desired_angle,
    generate_efforts,
    grid_collect,
    joint_speed,
    rollout_episode,
    static_oracle,
    step_sim,
)

LITERAL = SimConfig()
OFFSET = SimConfig(speed_law="offset")


def user_config(task="vertical", **overrides):
    return VirtualUserConfig(task=task, **overrides)


class TestJointSpeed:
    def test_flexion_above_threshold(self):
        a = ThresholdAction(th_biceps=30.0, th_triceps=30.0)
        assert joint_speed(60.0, 10.0, a, LITERAL) == 50.0

    def test_idle_below_threshold(self):
        a = ThresholdAction(th_biceps=20.0, th_triceps=20.0)
        assert joint_speed(40.0, 25.0, a, LITERAL) == 0.0

    def test_extension_clamped_to_max_speed(self):
        a = ThresholdAction(th_biceps=25.0, th_triceps=25.0)
        cfg = SimConfig(k_p=3.0)
        assert joint_speed(10.0, 80.0, a, cfg) == -100.0

    def test_exact_tie_is_idle(self):
        a = ThresholdAction(th_biceps=20.0, th_triceps=20.0)
        assert joint_speed(70.0, 70.0, a, LITERAL) == 0.0

    def test_delta_equal_threshold_is_idle(self):
        a = ThresholdAction(th_biceps=30.0, th_triceps=30.0)
        assert joint_speed(60.0, 30.0, a, LITERAL) == 0.0

    def test_offset_law_is_continuous_at_threshold(self):
        a = ThresholdAction(th_biceps=30.0, th_triceps=30.0)
        eps = 1e-9
        just_above = joint_speed(60.0 + eps, 30.0, a, OFFSET)
        assert just_above == pytest.approx(0.0, abs=1e-8)

    def test_literal_law_jumps_by_threshold(self):
        a = ThresholdAction(th_biceps=30.0, th_triceps=30.0)
        eps = 1e-6
        jump = joint_speed(60.0 + eps, 30.0, a, LITERAL)
        assert jump == pytest.approx(LITERAL.k_p * 30.0, abs=1e-4)

    @pytest.mark.parametrize("cfg", [LITERAL, OFFSET], ids=["literal", "offset"])
    def test_antisymmetry_and_cap(self, cfg):
        rng = np.random.default_rng(1)
        for _ in range(500):
            e_b, e_t = rng.uniform(0, 100, size=2)
            th_b, th_t = rng.uniform(20, 50, size=2)
            fwd = joint_speed(e_b, e_t, ThresholdAction(th_b, th_t), cfg)
            rev = joint_speed(e_t, e_b, ThresholdAction(th_t, th_b), cfg)
            assert fwd == -rev
            assert abs(fwd) <= cfg.max_speed

    def test_rejects_effort_out_of_range(self):
        a = ThresholdAction(th_biceps=20.0, th_triceps=20.0)
        with pytest.raises(ValueError):
            joint_speed(-1.0, 0.0, a, LITERAL)
        with pytest.raises(ValueError):
            joint_speed(0.0, 101.0, a, LITERAL)


class TestStepSim:
    def test_zero_speed_keeps_angle(self):
        s = SimState(angle=45.0, effort_biceps=10.0, effort_triceps=10.0)
        a = ThresholdAction(20.0, 20.0)
        nxt = step_sim(s, a, (10.0, 10.0), LITERAL)
        assert nxt.angle == 45.0
        assert nxt.t == pytest.approx(0.02)

    def test_clamp_at_upper_limit(self):
        s = SimState(angle=130.0, effort_biceps=90.0, effort_triceps=0.0)
        a = ThresholdAction(20.0, 20.0)
        nxt = step_sim(s, a, (90.0, 0.0), LITERAL)
        assert nxt.angle == 130.0

    def test_angle_increment_arithmetic(self):
        # speed +50 for one 20 ms tick at 0.9 deg/(speed s) moves +0.9 deg
        s = SimState(angle=10.0, effort_biceps=0.0, effort_triceps=0.0)
        a = ThresholdAction(th_biceps=30.0, th_triceps=30.0)
        nxt = step_sim(s, a, (60.0, 10.0), LITERAL)
        assert nxt.angle == pytest.approx(10.9)
        assert (nxt.effort_biceps, nxt.effort_triceps) == (60.0, 10.0)


class TestThresholdAction:
    def test_rejects_out_of_device_range(self):
        with pytest.raises(ValueError):
            ThresholdAction(19.9, 30.0)
        with pytest.raises(ValueError):
            ThresholdAction(30.0, 50.1)


class TestVirtualUser:
    def test_deadband_gives_cocontraction(self):
        user = user_config(noise_std=0.0, co_contraction=10.0)
        state = SimState(angle=desired_angle(user, 0.0), effort_biceps=0, effort_triceps=0)
        e_b, e_t = generate_efforts(user, state, 0.0, np.random.default_rng(0))
        assert e_b == 10.0 and e_t == 10.0

    def test_positive_error_engages_biceps(self):
        user = user_config(noise_std=0.0, co_contraction=10.0, feedback_gain=2.0)
        target = desired_angle(user, 5.0)
        state = SimState(angle=target - 20.0, effort_biceps=0, effort_triceps=0)
        e_b, e_t = generate_efforts(user, state, 5.0, np.random.default_rng(0))
        assert e_b == pytest.approx(10.0 + 2.0 * 20.0)
        assert e_t == pytest.approx(10.0)

    def test_negative_error_engages_triceps(self):
        user = user_config(noise_std=0.0, co_contraction=10.0, feedback_gain=2.0)
        target = desired_angle(user, 5.0)
        state = SimState(angle=target + 15.0, effort_biceps=0, effort_triceps=0)
        e_b, e_t = generate_efforts(user, state, 5.0, np.random.default_rng(0))
        assert e_b == pytest.approx(10.0)
        assert e_t == pytest.approx(10.0 + 2.0 * 15.0)

    def test_efforts_clipped(self):
        user = user_config(noise_std=0.0, feedback_gain=10.0)
        state = SimState(angle=0.0, effort_biceps=0, effort_triceps=0)
        e_b, e_t = generate_efforts(user, state, 5.0, np.random.default_rng(0))
        assert 0.0 <= e_b <= 100.0 and 0.0 <= e_t <= 100.0

    def test_deterministic_given_seed(self):
        user = user_config(noise_std=2.0)
        state = SimState(angle=30.0, effort_biceps=0, effort_triceps=0)
        a = generate_efforts(user, state, 1.0, np.random.default_rng(7))
        b = generate_efforts(user, state, 1.0, np.random.default_rng(7))
        assert a == b

    def test_vertical_trajectory_shape(self):
        user = user_config("vertical")
        assert desired_angle(user, 0.0) == user.angle_low
        assert desired_angle(user, user.slow_phase_s) == user.angle_high
        period = user.slow_phase_s + user.fast_phase_s
        assert desired_angle(user, period) == pytest.approx(user.angle_low)
        # rising during the slow phase
        assert desired_angle(user, 2.0) < desired_angle(user, 4.0)

    def test_horizontal_trajectory_mirrors(self):
        user = user_config("horizontal")
        assert desired_angle(user, 0.0) == user.angle_high
        assert desired_angle(user, user.slow_phase_s) == user.angle_low
        assert desired_angle(user, 2.0) > desired_angle(user, 4.0)

    def test_vertical_episode_is_biceps_dominant(self):
        user = user_config("vertical")
        transitions = rollout_episode(
            ThresholdAction(20.0, 20.0), user, LITERAL, RewardConfig(), 15.0,
            np.random.default_rng(11),
        )
        e_b = np.array([tr.e_b for tr in transitions])
        e_t = np.array([tr.e_t for tr in transitions])
        assert e_b.mean() > e_t.mean()

    def test_horizontal_episode_is_triceps_dominant(self):
        user = user_config("horizontal")
        transitions = rollout_episode(
            ThresholdAction(20.0, 20.0), user, LITERAL, RewardConfig(), 15.0,
            np.random.default_rng(11),
        )
        e_b = np.array([tr.e_b for tr in transitions])
        e_t = np.array([tr.e_t for tr in transitions])
        assert e_t.mean() > e_b.mean()


class TestRollout:
    def test_forty_second_episode_has_2000_transitions(self):
        transitions = rollout_episode(
            ThresholdAction(20.0, 20.0), user_config(), LITERAL, RewardConfig(), 40.0,
            np.random.default_rng(0),
        )
        assert len(transitions) == 2000
        assert transitions[-1].done
        assert not any(tr.done for tr in transitions[:-1])

    def test_weak_user_never_moves_at_max_thresholds(self):
        # max delta effort = gain * angle span = 0.4 * 110 = 44 < 50
        user = user_config(feedback_gain=0.4, noise_std=0.0)
        transitions = rollout_episode(
            ThresholdAction(50.0, 50.0), user, LITERAL, RewardConfig(), 5.0,
            np.random.default_rng(1),
        )
        angles = {tr.p for tr in transitions} | {tr.p_next for tr in transitions}
        assert len(angles) == 1

    def test_same_seed_bit_identical(self):
        kwargs = dict(
            policy=ThresholdAction(25.0, 35.0),
            user=user_config(noise_std=1.5),
            sim_config=LITERAL,
            reward_config=RewardConfig(),
            duration_s=3.0,
        )
        a = rollout_episode(rng=np.random.default_rng(42), **kwargs)
        b = rollout_episode(rng=np.random.default_rng(42), **kwargs)
        assert a == b

    def test_transitions_chain(self):
        transitions = rollout_episode(
            ThresholdAction(20.0, 20.0), user_config(), LITERAL, RewardConfig(), 2.0,
            np.random.default_rng(2),
        )
        for prev, cur in zip(transitions, transitions[1:]):
            assert prev.p_next == cur.p
            assert prev.e_b_next == cur.e_b
            assert prev.e_t_next == cur.e_t
            assert cur.step == prev.step + 1

    def test_angle_stays_in_limits(self):
        transitions = rollout_episode(
            ThresholdAction(20.0, 20.0), user_config(feedback_gain=5.0), LITERAL,
            RewardConfig(), 20.0, np.random.default_rng(3),
        )
        for tr in transitions:
            assert LITERAL.angle_min <= tr.p <= LITERAL.angle_max
            assert LITERAL.angle_min <= tr.p_next <= LITERAL.angle_max

    def test_rewards_match_state_action_recomputation(self):
        cfg = RewardConfig()
        transitions = rollout_episode(
            ThresholdAction(25.0, 30.0), user_config(), LITERAL, cfg, 2.0,
            np.random.default_rng(4),
        )
        for tr in transitions:
            s = SimState(angle=tr.p, effort_biceps=tr.e_b, effort_triceps=tr.e_t)
            assert tr.r == compute_reward(s, ThresholdAction(tr.th_b, tr.th_t), cfg)

    def test_dynamic_policy_callback(self):
        calls = []

        def policy(state):
            calls.append(state.t)
            th = 20.0 if state.angle < 60 else 25.0
            return ThresholdAction(th, 20.0)

        transitions = rollout_episode(
            policy, user_config(), LITERAL, RewardConfig(), 1.0, np.random.default_rng(5)
        )
        assert len(calls) == len(transitions) == 50

    def test_rejects_bad_duration(self):
        with pytest.raises(ValueError):
            rollout_episode(
                ThresholdAction(20.0, 20.0), user_config(), LITERAL, RewardConfig(),
                0.0, np.random.default_rng(0),
            )


class TestThresholdGrid:
    def test_default_grid_is_7x7(self):
        grid = ThresholdGrid.from_range(20.0, 50.0, 5.0)
        assert grid.biceps == (20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0)
        assert len(grid.cells()) == 49

    def test_three_point_grid(self):
        grid = ThresholdGrid.from_range(20.0, 50.0, 15.0)
        assert grid.biceps == (20.0, 35.0, 50.0)
        assert len(grid.cells()) == 9

    def test_cells_are_biceps_major_sorted(self):
        grid = ThresholdGrid(biceps=(30.0, 20.0), triceps=(40.0, 25.0))
        assert grid.cells() == [(20.0, 25.0), (20.0, 40.0), (30.0, 25.0), (30.0, 40.0)]

    def test_rejects_bad_range(self):
        with pytest.raises(ValueError):
            ThresholdGrid.from_range(50.0, 20.0, 5.0)
        with pytest.raises(ValueError):
            ThresholdGrid.from_range(20.0, 50.0, 0.0)


class TestGridCollect:
    def test_desk_scale_counts(self):
        grid = ThresholdGrid.from_range(20.0, 50.0, 15.0)
        ds = grid_collect(
            "vertical", grid, episodes_per_cell=2, episode_s=10.0,
            sim_config=LITERAL, user_config=user_config(), reward_config=RewardConfig(),
            seed=0,
        )
        assert len(ds) == 9 * 2 * 500 == 9000
        assert ds.header.episode_count == 18
        assert ds.header.grid == grid.as_dict()
        ds.validate()

    def test_deterministic_given_seed(self):
        grid = ThresholdGrid(biceps=(20.0,), triceps=(35.0,))
        kwargs = dict(
            grid=grid, episodes_per_cell=2, episode_s=1.0, sim_config=LITERAL,
            user_config=user_config(noise_std=1.0), reward_config=RewardConfig(),
        )
        a = grid_collect("vertical", seed=9, **kwargs)
        b = grid_collect("vertical", seed=9, **kwargs)
        assert a.r.tobytes() == b.r.tobytes()
        assert a.p.tobytes() == b.p.tobytes()

    def test_actions_recorded_per_cell(self):
        grid = ThresholdGrid(biceps=(20.0, 35.0), triceps=(25.0,))
        ds = grid_collect(
            "vertical", grid, episodes_per_cell=1, episode_s=1.0,
            sim_config=LITERAL, user_config=user_config(), reward_config=RewardConfig(),
            seed=3,
        )
        assert set(zip(ds.th_b.tolist(), ds.th_t.tolist())) == {(20.0, 25.0), (35.0, 25.0)}


class TestStaticOracle:
    def oracle(self, grid, task="vertical", episodes=1, duration=2.0, user=None, seed=0):
        return static_oracle(
            task, grid, episodes, duration, LITERAL,
            user or user_config(), RewardConfig(), seed,
        )

    def test_single_cell_is_argmax(self):
        grid = ThresholdGrid(biceps=(25.0,), triceps=(40.0,))
        result = self.oracle(grid)
        assert len(result.cells) == 1
        assert result.best == result.cells[0]

    def test_tie_breaks_lexicographically(self):
        # a user too weak to trigger motion and noise-free: both efforts sit
        # at the baseline inside the deadband only at t=0, then biceps leads;
        # cells sharing th_biceps see identical trajectories, so mirrored
        # thresholds with equal rewards resolve toward the smaller pair.
        user = user_config(feedback_gain=0.1, noise_std=0.0)
        grid = ThresholdGrid(biceps=(20.0,), triceps=(30.0, 45.0))
        result = self.oracle(grid, user=user, duration=1.0)
        r_by_cell = {(c.th_biceps, c.th_triceps): c.mean_reward for c in result.cells}
        assert r_by_cell[(20.0, 30.0)] == r_by_cell[(20.0, 45.0)]
        assert (result.best.th_biceps, result.best.th_triceps) == (20.0, 30.0)

    def test_deterministic(self):
        grid = ThresholdGrid(biceps=(20.0, 35.0), triceps=(20.0,))
        a = self.oracle(grid, seed=5)
        b = self.oracle(grid, seed=5)
        assert a == b
        assert isinstance(a, OracleResult)

    def test_vertical_argmax_prefers_low_biceps_threshold(self):
        grid = ThresholdGrid.from_range(20.0, 50.0, 15.0)
        result = self.oracle(grid, task="vertical", episodes=2, duration=10.0, seed=1)
        assert result.best.th_biceps <= 30.0

    def test_horizontal_argmax_prefers_low_triceps_threshold(self):
        grid = ThresholdGrid.from_range(20.0, 50.0, 15.0)
        result = self.oracle(grid, task="horizontal", episodes=2, duration=10.0, seed=1)
        assert result.best.th_triceps <= 30.0
