"""PuddleBridge map, puddle stacking rules, gate sampling and reachability oracles."""

import numpy as np
import pytest

from fluid_agents.envs import make_env
from fluid_agents.envs.fuzz import fuzz_env
from fluid_agents.envs.puddle_bridge import (
    EAST,
    GATE,
    GOAL_REWARD,
    LAND,
    N_TILE_TYPES,
    NONE,
    NORTH,
    SPAWN,
    WALL,
    load_map,
    observation_size,
    parse_map,
    shortest_path_length,
)
from fluid_agents.errors import ConfigError

BELOW_PUDDLE, PUDDLE_A, PUDDLE_B, PAST_BRIDGE = (5, 1), (5, 2), (5, 3), (5, 4)


class TestMap:
    def test_default_layout(self):
        puddle_map = load_map()
        assert puddle_map.shape == (8, 8)
        assert puddle_map.spawn == (1, 1)
        assert puddle_map.goal == (2, 7)
        assert puddle_map.cells(GATE) == [(2, 3)]
        assert puddle_map.puddles == [PUDDLE_A, PUDDLE_B]

    def test_lone_agent_needs_the_gate(self):
        puddle_map = load_map()
        assert shortest_path_length(puddle_map, gate_open=True) == 7
        assert shortest_path_length(puddle_map, gate_open=False) is None

    def test_parse_errors(self):
        with pytest.raises(ConfigError):
            parse_map("S..\n..F.\n")
        with pytest.raises(ConfigError):
            parse_map("S.x\n..F\n")
        with pytest.raises(ConfigError):
            parse_map("S..\n...\n")
        with pytest.raises(ConfigError):
            parse_map("")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_map(tmp_path / "nope.txt")

    def test_custom_map_file(self, tmp_path):
        path = tmp_path / "tiny.txt"
        path.write_text("S.F\n...\n", encoding="utf-8")
        env = make_env("puddle_bridge", {"map_path": str(path), "n_max": 2})
        assert shortest_path_length(env.map, gate_open=False) == 2


class TestPuddles:
    def test_entering_occupied_puddle_makes_a_stack(self, puddle):
        puddle.load_state(agents={1: PUDDLE_A, 2: BELOW_PUDDLE})
        puddle.step({1: NONE, 2: EAST})
        assert puddle.stacks() == [(1, 2)]
        assert puddle.is_top(2)
        assert puddle.invariant_violations() == []

    def test_bottom_is_locked_but_may_spawn(self, puddle):
        puddle.load_state(agents={1: PUDDLE_A, 2: PUDDLE_A}, tops=[2])
        puddle.step({1: NORTH, 2: NONE})
        assert puddle.pos[0].tolist() == list(PUDDLE_A)
        puddle.step({1: SPAWN, 2: NONE})
        assert puddle.alive == (1, 2, 3)
        assert puddle.pos[2].tolist() == [1, 1]

    def test_lone_occupant_cannot_cross_puddles(self, puddle):
        puddle.load_state(agents={1: PUDDLE_A})
        puddle.step({1: EAST})
        assert puddle.pos[0].tolist() == list(PUDDLE_A)

    def test_top_crosses_and_stack_dissolves(self, puddle):
        puddle.load_state(agents={1: PUDDLE_A, 2: PUDDLE_A}, tops=[2])
        puddle.step({1: NONE, 2: EAST})
        assert puddle.pos[1].tolist() == list(PUDDLE_B)
        assert puddle.stacks() == []
        assert puddle.base[PUDDLE_A] == 1
        puddle.step({1: NORTH, 2: EAST})
        assert puddle.pos[0].tolist() == [4, 2]
        assert puddle.pos[1].tolist() == list(PAST_BRIDGE)

    def test_top_drops_when_bottom_leaves_same_step(self, puddle):
        # Agent 1 stacks on top first, then agent 2 (unlocked at step start) walks off.
        puddle.load_state(agents={1: BELOW_PUDDLE, 2: PUDDLE_A})
        puddle.step({1: EAST, 2: NORTH})
        assert puddle.base[PUDDLE_A] == 1
        assert puddle.top[PUDDLE_A] == 0
        assert puddle.invariant_violations() == []

    def test_full_puddle_refuses_a_third_agent(self, puddle):
        puddle.load_state(agents={1: PUDDLE_A, 2: PUDDLE_A, 3: BELOW_PUDDLE}, tops=[2])
        puddle.step({1: NONE, 2: NONE, 3: EAST})
        assert puddle.pos[2].tolist() == list(BELOW_PUDDLE)

    def test_two_agents_bridge_a_closed_gate(self, puddle):
        puddle.load_state(agents={1: PUDDLE_A, 2: BELOW_PUDDLE}, gate_open=False)
        plan = [EAST, EAST, EAST, NORTH, NORTH, NORTH, EAST, EAST, EAST]
        total = 0.0
        for move in plan:
            result = puddle.step({1: NONE, 2: move})
            total += result.rewards.sum()
        assert result.done
        assert result.info["goal_reached"]
        assert total == pytest.approx(GOAL_REWARD - len(plan) * 2 * 0.1)


class TestGateAndGoal:
    def test_closed_gate_blocks(self, puddle):
        puddle.load_state(agents={1: (2, 2)}, gate_open=False)
        puddle.step({1: EAST})
        assert puddle.pos[0].tolist() == [2, 2]

    def test_goal_reward_is_split(self, puddle):
        puddle.load_state(agents={1: (2, 6), 2: (0, 0)})
        result = puddle.step({1: EAST, 2: NONE})
        assert result.done
        assert result.rewards[:2] == pytest.approx([4.9, 4.9])

    def test_optimal_open_gate_return(self, puddle):
        puddle.load_state(agents={1: (1, 1)}, gate_open=True)
        total = 0.0
        for move in [EAST, 2, EAST, EAST, EAST, EAST, EAST]:
            result = puddle.step({1: move})
            total += result.rewards[0]
        assert result.done
        assert total == pytest.approx(GOAL_REWARD - shortest_path_length(puddle.map, True) * 0.1)

    def test_gate_open_about_half_the_time(self, puddle):
        puddle.reset(seed=0)
        opened = 0
        for _ in range(10_000):
            puddle.reset()
            opened += puddle.gate_open
        assert 0.48 <= opened / 10_000 <= 0.52

    def test_reset_is_repeatable(self, puddle):
        puddle.reset(seed=9)
        first = puddle.snapshot()
        puddle.reset(seed=9)
        assert puddle.snapshot() == first

    def test_gate_prob_bounds(self):
        with pytest.raises(ConfigError):
            make_env("puddle_bridge", {"gate_prob": 1.5})


class TestSpawning:
    def test_child_appears_on_spawn_cell(self, puddle):
        puddle.load_state(agents={1: (0, 0)})
        result = puddle.step({1: SPAWN})
        assert puddle.alive == (1, 2)
        assert puddle.pos[1].tolist() == [1, 1]
        assert result.rewards[0] == pytest.approx(-1.1)

    def test_occupied_spawn_cell_blocks_spawn(self, puddle):
        puddle.load_state(agents={1: (1, 1)})
        result = puddle.step({1: SPAWN})
        assert puddle.alive == (1,)
        assert result.info["spawns"] == 0

    def test_initial_extras_next_to_spawn(self, puddle):
        from fluid_agents.pofsg import PopulationSample

        assert puddle.max_initial_agents() == 5
        puddle.reset(seed=0, population=PopulationSample(n_agents=4, ceiling=4))
        assert puddle.pos[0].tolist() == [1, 1]
        for agent_id in (2, 3, 4):
            r, c = puddle.pos[agent_id - 1]
            assert abs(r - 1) + abs(c - 1) == 1

    def test_fuzz_invariants(self, puddle):
        report = fuzz_env(puddle, steps=5000, seed=3)
        assert report.ok, report.violations

    @pytest.mark.slow
    def test_long_fuzz_hits_the_ceiling(self, puddle):
        report = fuzz_env(puddle, steps=100_000, seed=13)
        assert report.ok, report.violations
        assert report.spawns_at_cap > 0


class TestObservation:
    def test_length(self, puddle):
        assert observation_size(puddle.map, 4) == 64 * 7 + 2 + 2 + 1 + 4 * 6 + 1
        assert puddle.reset(seed=0).shape == (4, puddle.obs_dim)

    def test_gate_renders_as_wall_or_land(self, puddle):
        for gate_open, tile in ((False, WALL), (True, LAND)):
            puddle.load_state(agents={1: (0, 0)}, gate_open=gate_open)
            grid = puddle.observe(1)[:64 * 7].reshape(7, 8, 8)
            assert grid[tile, 2, 3] == 1.0
            assert grid[:N_TILE_TYPES, 2, 3].sum() == 1.0

    def test_stack_uses_virtual_slot(self, puddle):
        puddle.load_state(agents={1: PUDDLE_A, 2: PUDDLE_A}, tops=[2])
        obs = puddle.observe(1)
        grid = obs[:64 * 7].reshape(7, 8, 8)
        assert grid[N_TILE_TYPES][PUDDLE_A] == pytest.approx(1 / 4)
        assert obs[64 * 7:64 * 7 + 2].tolist() == pytest.approx([2 / 4, 0.0])

    def test_previous_actions_one_hot(self, puddle):
        puddle.load_state(agents={1: (0, 0)})
        puddle.step({1: EAST})
        obs = puddle.observe(1)
        prev = obs[64 * 7 + 2 + 3:64 * 7 + 2 + 3 + 24].reshape(4, 6)
        assert prev[0].tolist() == [0, 0, 0, 0, 1, 0]
        assert not prev[1:].any()
        assert obs[-1] == pytest.approx(1.0)


def test_closed_gate_unreachable_for_lone_agent_by_rollout():
    env = make_env("puddle_bridge", {"n_max": 1, "gate_prob": 0.0})
    rng = np.random.default_rng(0)
    for seed in range(30):
        env.reset(seed=seed)
        done = False
        while not done:
            result = env.step({1: int(rng.integers(5))})
            assert not result.info["goal_reached"]
            done = result.done
