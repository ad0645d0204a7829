"""Predator-prey dynamics, prey behaviour, payoff modes and observations."""

import itertools

import numpy as np
import pytest

from fluid_agents.envs import make_env
from fluid_agents.envs.fuzz import fuzz_env
from fluid_agents.envs.predator_prey import (
    EAST,
    NOOP,
    NORTH,
    SPAWN,
    WEST,
    RewardConfig,
    compute_rewards,
    observation_size,
    sample_prey_move,
)
from fluid_agents.errors import ConfigError
from fluid_agents.pofsg import PopulationState


def pre_population(size, n_max=10):
    return PopulationState.initial(n_max, n_max, size)


class TestRewards:
    def test_sip_single_capture(self):
        rewards = compute_rewards(pre_population(2), 1, 0, RewardConfig(5.0, 10.0, 0.01, "SIP"))
        assert rewards[:2] == pytest.approx([2.49, 2.49], abs=1e-12)
        assert not rewards[2:].any()

    def test_scp_capture_with_spawn(self):
        rewards = compute_rewards(pre_population(4), 2, 1, RewardConfig(5.0, 50.0, 0.01, "SCP"))
        assert rewards[:4] == pytest.approx([-2.51] * 4, abs=1e-12)

    def test_nothing_happens(self):
        rewards = compute_rewards(pre_population(3), 0, 0, RewardConfig(5.0, 10.0, 0.0, "SIP"))
        assert not rewards.any()

    @pytest.mark.parametrize("mode", ["SCP", "SIP"])
    def test_formula_over_grid(self, mode):
        cfg = RewardConfig(5.0, 10.0, 0.01, mode)
        for size, n_cap, n_sp in itertools.product(range(1, 11), range(4), range(3)):
            rewards = compute_rewards(pre_population(size), n_cap, n_sp, cfg)
            payoff = 5.0 * n_cap if mode == "SCP" else 5.0 * n_cap / size
            expected = payoff - (10.0 * n_sp / size + 0.01)
            assert np.abs(rewards[:size] - expected).max() <= 1e-12
            assert not rewards[size:].any()

    def test_sip_joint_payoff_is_population_invariant(self):
        cfg = RewardConfig(5.0, 0.0, 0.0, "SIP")
        for size in range(1, 11):
            assert compute_rewards(pre_population(size), 3, 0, cfg).sum() == pytest.approx(15.0, abs=1e-12)

    def test_scp_joint_payoff_scales_with_population(self):
        cfg = RewardConfig(5.0, 0.0, 0.0, "SCP")
        for size in range(1, 11):
            assert compute_rewards(pre_population(size), 2, 0, cfg).sum() == pytest.approx(10.0 * size)

    def test_spawn_cost_is_split(self):
        cfg = RewardConfig(5.0, 10.0, 0.0, "SIP")
        assert compute_rewards(pre_population(4), 0, 2, cfg).sum() == pytest.approx(-20.0)

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            RewardConfig(mode="both")
        with pytest.raises(ConfigError):
            RewardConfig(prey_capture_reward=0.0)
        with pytest.raises(ConfigError):
            RewardConfig(c_spawn=-1.0)


class TestPreyPolicy:
    def test_move_frequencies(self):
        rng = np.random.default_rng(0)
        draws = np.array([sample_prey_move(rng) for _ in range(100_000)])
        stay = np.mean(draws == NOOP)
        assert 0.29 <= stay <= 0.31
        for direction in range(4):
            assert 0.165 <= np.mean(draws == direction) <= 0.185

    def test_prey_never_steps_into_capture_range(self, predprey):
        # Every neighbour of the prey touches some predator.
        predprey.load_state(predators={1: (1, 3), 2: (3, 1), 3: (5, 3), 4: (3, 5)}, preys=[(3, 3)])
        for _ in range(50):
            result = predprey.step({i: NOOP for i in predprey.alive})
            assert predprey.prey_pos[0].tolist() == [3, 3]
            assert result.info["captures"] == 0

    def test_prey_against_wall_stays_in_bounds(self, predprey):
        predprey.load_state(predators={1: (6, 6)}, preys=[(0, 0)])
        for _ in range(100):
            predprey.step({1: NOOP})
            r, c = predprey.prey_pos[0]
            assert 0 <= r < 7 and 0 <= c < 7


class TestDynamics:
    def test_capture_by_two_predators(self, predprey):
        predprey.load_state(predators={1: (2, 1), 2: (2, 3)}, preys=[(2, 2)])
        result = predprey.step({1: NOOP, 2: NOOP})
        assert result.info["captures"] == 1
        assert result.done
        assert result.rewards[:2] == pytest.approx([2.49, 2.49])

    def test_single_predator_cannot_capture(self, predprey):
        predprey.load_state(predators={1: (2, 1)}, preys=[(2, 2), (5, 5)])
        result = predprey.step({1: NOOP})
        assert result.info["captures"] == 0
        assert predprey.prey_alive.all()

    def test_move_into_occupied_cell_fails(self, predprey):
        predprey.load_state(predators={1: (0, 0), 2: (0, 1)}, preys=[(6, 6)])
        predprey.step({1: EAST, 2: NOOP})
        assert predprey.pred_pos[0].tolist() == [0, 0]

    def test_move_off_board_fails(self, predprey):
        predprey.load_state(predators={1: (0, 0)}, preys=[(6, 6)])
        predprey.step({1: NORTH})
        assert predprey.pred_pos[0].tolist() == [0, 0]

    def test_lower_id_wins_contested_cell(self, predprey):
        predprey.load_state(predators={1: (2, 2), 2: (2, 4)}, preys=[(6, 6)])
        predprey.step({1: EAST, 2: WEST})
        assert predprey.pred_pos[0].tolist() == [2, 3]
        assert predprey.pred_pos[1].tolist() == [2, 4]

    def test_spawn_adds_agent_and_charges_pre_step_population(self, predprey):
        predprey.load_state(predators={1: (0, 0), 2: (6, 0)}, preys=[(6, 6)])
        result = predprey.step({1: SPAWN, 2: NOOP})
        assert predprey.alive == (1, 2, 3)
        assert predprey.pop.children_count[1] == 1
        assert result.rewards[:2] == pytest.approx([-5.01, -5.01])
        assert result.rewards[2] == 0.0
        assert predprey.invariant_violations() == []

    def test_spawn_at_ceiling_is_noop(self, predprey):
        predprey.load_state(predators={1: (0, 0), 2: (6, 0)}, preys=[(6, 6)], ceiling=2)
        result = predprey.step({1: SPAWN, 2: SPAWN})
        assert predprey.alive == (1, 2)
        assert result.info["spawns"] == 0
        assert result.rewards[:2] == pytest.approx([-0.01, -0.01])

    def test_spawn_disabled(self):
        env = make_env("predator_prey", {"grid_size": 7, "n_prey": 1, "n_max": 4, "view_size": 5,
                                         "allow_spawn": False})
        env.load_state(predators={1: (0, 0)}, preys=[(6, 6)])
        env.step({1: SPAWN})
        assert env.alive == (1,)

    def test_idle_episode_costs_step_penalty_only(self, predprey):
        predprey.load_state(predators={1: (0, 0)}, preys=[(6, 6)])
        total, done = 0.0, False
        while not done:
            result = predprey.step({1: NOOP})
            total += result.rewards[0]
            done = result.done
        assert predprey.step_count == 100
        assert total == pytest.approx(-1.0)

    def test_prey_count_never_increases(self, predprey):
        rng = np.random.default_rng(3)
        predprey.reset(seed=3)
        preys = predprey.prey_alive.sum()
        for _ in range(100):
            result = predprey.step({i: int(rng.integers(6)) for i in predprey.alive})
            assert predprey.prey_alive.sum() <= preys
            preys = predprey.prey_alive.sum()
            if result.done:
                break

    def test_fuzz_invariants(self, predprey):
        report = fuzz_env(predprey, steps=3000, seed=1)
        assert report.ok, report.violations
        assert report.max_alive <= 4

    @pytest.mark.slow
    def test_long_fuzz_hits_the_ceiling(self, predprey):
        report = fuzz_env(predprey, steps=100_000, seed=11)
        assert report.ok, report.violations
        assert report.spawns_at_cap > 0

    def test_crowded_board_rejected(self):
        with pytest.raises(ConfigError):
            make_env("predator_prey", {"grid_size": 3, "n_prey": 5, "n_max": 5})

    def test_even_view_rejected(self):
        with pytest.raises(ConfigError):
            make_env("predator_prey", {"view_size": 10})


class TestObservation:
    def test_length_matches_formula(self):
        assert observation_size(11, 10) == 11 * 11 * 3 + 2 + 1 + 10 * 7 + 4
        env = make_env("predator_prey")
        obs = env.reset(seed=0)
        assert obs.shape == (10, 440)
        assert env.global_state().shape == (env.global_state_dim,)

    def test_dead_rows_are_zero(self, predprey):
        obs = predprey.reset(seed=0)
        assert obs[:2].any()
        assert not obs[2:].any()

    def test_corner_marks_out_of_bounds(self, predprey):
        predprey.load_state(predators={1: (0, 0)}, preys=[(6, 6)])
        window = predprey.observe(1)[:75].reshape(3, 5, 5)
        outside = np.zeros((5, 5))
        outside[:2, :] = 1.0
        outside[:, :2] = 1.0
        assert np.array_equal(window[2], outside)
        assert not window[0].any()
        assert not window[1].any()

    def test_neighbours_show_up_in_window(self, predprey):
        predprey.load_state(predators={1: (3, 3), 2: (3, 4)}, preys=[(2, 3)])
        window = predprey.observe(1)[:75].reshape(3, 5, 5)
        assert window[0, 2, 3] == 1.0
        assert window[1, 1, 2] == 1.0
        assert window[0].sum() == 1.0

    def test_sampled_ceiling_is_last_feature(self, predprey):
        predprey.load_state(predators={1: (3, 3)}, preys=[(0, 0)], ceiling=2)
        assert predprey.observe(1)[-1] == pytest.approx(2 / 4)
        assert predprey.observe(1, sampled_ceiling=3)[-1] == pytest.approx(3 / 4)
