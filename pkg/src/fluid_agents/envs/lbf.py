"""
Fluid Level-Based Foraging
==========================

Fully observed grid with levelled agents and levelled foods. A food of level
l is collected when the agents in its four neighbour cells that chose
``load`` this step have levels summing to at least l; participants share l in
proportion to their levels. A spawned agent inherits its parent's level.
"""

from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError
from ..pofsg import DUMMY_ACTION, AgentId, FluidEnv, PopulationSample, PopulationState, StepResult, resolve_spawns

# Actions
NONE = 0
NORTH = 1
SOUTH = 2
WEST = 3
EAST = 4
LOAD = 5
SPAWN = 6
N_ACTIONS = 7
ACTION_NAMES = ["none", "north", "south", "west", "east", "load", "spawn"]

MOVES = {
    NORTH: (-1, 0),
    SOUTH: (1, 0),
    WEST: (0, -1),
    EAST: (0, 1),
}
NEIGHBOURS = list(MOVES.values())


@dataclass
class LbfConfig:
    grid_size: int = 8
    food_levels: Tuple[int, ...] = (2, 3, 4, 5)
    food_positions: Optional[Tuple[Tuple[int, int], ...]] = None
    initial_levels: Tuple[int, ...] = (1, 2)
    n_max: int = 4
    c_spawn: float = 1.0
    c_step: float = 0.025
    horizon: int = 100


@dataclass
class LbfRewardConfig:
    c_spawn: float = 1.0
    c_step: float = 0.025


@dataclass
class Collection:
    food_index: int
    food_level: int
    participants: Tuple[AgentId, ...] = field(default_factory=tuple)


def compute_rewards(pre_pop: PopulationState, loads: Sequence[Collection], n_sp: int,
                    cfg: LbfRewardConfig) -> np.ndarray:
    """Level-weighted food shares for participants, minus per-capita spawn and step costs."""
    size = pre_pop.size
    if size < 1:
        raise ValueError("reward needs at least one alive agent")
    rewards = np.zeros(pre_pop.n_max, dtype=np.float64)
    for collection in loads:
        levels = {i: pre_pop.attributes[i]["level"] for i in collection.participants}
        total = sum(levels.values())
        for i, level in levels.items():
            rewards[i - 1] += collection.food_level * level / total
    cost = cfg.c_spawn * n_sp / size + cfg.c_step
    for i in pre_pop.alive:
        rewards[i - 1] -= cost
    return rewards


def observation_size(n_food: int, n_agents: int) -> int:
    return 3 * n_food + 6 * n_agents + 2


def _prev_action_feature(action: int) -> float:
    # 0 means no previous action; NONE encodes as 1 / N_ACTIONS.
    return 0.0 if action == DUMMY_ACTION else (action + 1) / N_ACTIONS


class LevelBasedForagingEnv(FluidEnv):
    kind = "lbf"
    n_actions = N_ACTIONS
    noop_action = NONE
    spawn_action = SPAWN

    def __init__(self, config: Optional[LbfConfig] = None, seed: Optional[int] = None):
        self.config = config or LbfConfig()
        super().__init__(self.config.n_max, self.config.horizon, seed)
        self.reward_config = LbfRewardConfig(self.config.c_spawn, self.config.c_step)
        self.grid_size = self.config.grid_size
        self.n_food = len(self.config.food_levels)
        if not self.config.initial_levels or len(self.config.initial_levels) > self.n_max:
            raise ConfigError(f"need 1..{self.n_max} initial agents, got {len(self.config.initial_levels)}")
        if any(level < 1 for level in tuple(self.config.initial_levels) + tuple(self.config.food_levels)):
            raise ConfigError("levels must be positive integers")
        if self.config.food_positions is not None and len(self.config.food_positions) != self.n_food:
            raise ConfigError("food_positions and food_levels must have the same length")
        if self.n_food + self.n_max > self.grid_size ** 2:
            raise ConfigError("foods and agents do not fit on the grid")
        self.max_agent_level = max(self.config.initial_levels)
        self.max_food_level = max(self.config.food_levels, default=1)

        self.grid = np.zeros((self.grid_size, self.grid_size), dtype=np.int64)
        self.agent_pos = np.full((self.n_max, 2), -1, dtype=np.int64)
        self.food_pos = np.zeros((self.n_food, 2), dtype=np.int64)
        self.food_level = np.array(self.config.food_levels, dtype=np.int64)
        self.food_alive = np.zeros(self.n_food, dtype=bool)

    @property
    def obs_dim(self) -> int:
        return observation_size(self.n_food, self.n_max)

    @property
    def global_state_dim(self) -> int:
        return self.obs_dim - 1

    def default_population(self) -> PopulationSample:
        levels = tuple(self.config.initial_levels)
        return PopulationSample(n_agents=len(levels), ceiling=self.n_max, levels=levels)

    def level(self, agent_id: AgentId) -> int:
        return self.pop.attributes[agent_id]["level"]

    # ------------------------------------------------------------------ board

    def _in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.grid_size and 0 <= c < self.grid_size

    def _random_empty_cell(self) -> Optional[Tuple[int, int]]:
        empties = np.argwhere(self.grid == 0)
        if len(empties) == 0:
            return None
        r, c = empties[self.rng.integers(len(empties))]
        return int(r), int(c)

    def _put_agent(self, agent_id: AgentId, r: int, c: int) -> None:
        self.grid[r, c] = agent_id
        self.agent_pos[agent_id - 1] = (r, c)

    def _place_child(self, parent: AgentId, child: AgentId) -> bool:
        cell = self._random_empty_cell()
        if cell is None:
            return False
        self._put_agent(child, *cell)
        return True

    def _sample_food_cells(self) -> List[Tuple[int, int]]:
        # Interior cells, no two foods touching (8-neighbourhood).
        if self.n_food == 0:
            return []
        lo, hi = (1, self.grid_size - 1) if self.grid_size > 2 else (0, self.grid_size)
        interior = [(r, c) for r in range(lo, hi) for c in range(lo, hi)]
        chosen: List[Tuple[int, int]] = []
        for idx in self.rng.permutation(len(interior)):
            r, c = interior[idx]
            if all(max(abs(r - fr), abs(c - fc)) > 1 for fr, fc in chosen):
                chosen.append((r, c))
                if len(chosen) == self.n_food:
                    return chosen
        raise ConfigError(f"cannot place {self.n_food} separated foods on a {self.grid_size}x{self.grid_size} grid")

    def load_state(self, agents: Dict[AgentId, Tuple[int, int, int]], foods: Sequence[Tuple[int, int, int]],
                   ceiling: Optional[int] = None) -> None:
        """Place agents ``{id: (row, col, level)}`` and foods ``[(row, col, level)]`` explicitly."""
        ids = sorted(agents)
        if ids != list(range(1, len(ids) + 1)):
            raise ConfigError(f"agent ids must be 1..k, got {ids}")
        if any(agents[i][2] > self.max_agent_level for i in ids):
            raise ConfigError(f"agent levels must not exceed {self.max_agent_level}")
        if any(level > self.max_food_level for *_, level in foods):
            raise ConfigError(f"food levels must not exceed {self.max_food_level}")
        attributes = {i: {"level": agents[i][2]} for i in ids}
        self.pop = PopulationState.initial(self.n_max, ceiling or self.n_max, len(ids), attributes)
        self.grid[:] = 0
        self.agent_pos[:] = -1
        self.n_food = len(foods)
        self.food_pos = np.array([(r, c) for r, c, _ in foods], dtype=np.int64).reshape(-1, 2)
        self.food_level = np.array([level for _, _, level in foods], dtype=np.int64)
        self.food_alive = np.ones(self.n_food, dtype=bool)
        for k, (r, c) in enumerate(self.food_pos):
            self.grid[r, c] = -(k + 1)
        for agent_id in ids:
            r, c, _ = agents[agent_id]
            if self.grid[r, c] != 0:
                raise ConfigError(f"cell ({r}, {c}) is already occupied")
            self._put_agent(agent_id, r, c)
        self.step_count = 0
        self.prev_actions[:] = DUMMY_ACTION

    # -------------------------------------------------------------- dynamics

    def _reset(self, population: PopulationSample) -> None:
        levels = population.levels or tuple(self.config.initial_levels)[:population.n_agents]
        if len(levels) != population.n_agents:
            raise ConfigError(f"{population.n_agents} agents but {len(levels)} levels")
        attributes = {i: {"level": int(level)} for i, level in enumerate(levels, start=1)}
        self.pop = PopulationState.initial(self.n_max, population.ceiling, population.n_agents, attributes)
        self.grid[:] = 0
        self.agent_pos[:] = -1
        self.n_food = len(self.config.food_levels)

        cells = self.config.food_positions or self._sample_food_cells()
        self.food_pos = np.array(cells, dtype=np.int64).reshape(-1, 2)
        self.food_level = np.array(self.config.food_levels, dtype=np.int64)
        self.food_alive = np.ones(self.n_food, dtype=bool)
        for k, (r, c) in enumerate(self.food_pos):
            if not self._in_bounds(r, c) or self.grid[r, c] != 0:
                raise ConfigError(f"food cell ({r}, {c}) is out of bounds or taken")
            self.grid[r, c] = -(k + 1)
        for agent_id in self.pop.alive:
            cell = self._random_empty_cell()
            self._put_agent(agent_id, *cell)

    def _loaders_around(self, r: int, c: int, loaders: Sequence[AgentId]) -> Tuple[AgentId, ...]:
        found = []
        for dr, dc in NEIGHBOURS:
            nr, nc = r + dr, c + dc
            if self._in_bounds(nr, nc) and self.grid[nr, nc] > 0 and int(self.grid[nr, nc]) in loaders:
                found.append(int(self.grid[nr, nc]))
        return tuple(sorted(found))

    def _transition(self, actions: Dict[AgentId, int]) -> StepResult:
        pre_pop = self.pop
        alive_pre = pre_pop.alive

        for agent_id in alive_pre:
            move = MOVES.get(actions[agent_id])
            if move is None:
                continue
            r, c = self.agent_pos[agent_id - 1]
            nr, nc = r + move[0], c + move[1]
            if self._in_bounds(nr, nc) and self.grid[nr, nc] == 0:
                self.grid[r, c] = 0
                self._put_agent(agent_id, nr, nc)

        spawners = [i for i in alive_pre if actions[i] == SPAWN]
        before = set(self.pop.alive)
        self.pop, n_sp = resolve_spawns(self.pop, spawners, place=self._place_child)
        children = sorted(set(self.pop.alive) - before)
        for child in children:
            parent = self.pop.attributes[child]["parent"]
            self.pop.attributes[child]["level"] = pre_pop.attributes[parent]["level"]
        spawn_levels = [self.level(i) for i in children]

        loaders = [i for i in alive_pre if actions[i] == LOAD]
        loads: List[Collection] = []
        for k in np.flatnonzero(self.food_alive):
            r, c = self.food_pos[k]
            around = self._loaders_around(r, c, loaders)
            if around and sum(pre_pop.attributes[i]["level"] for i in around) >= self.food_level[k]:
                loads.append(Collection(int(k), int(self.food_level[k]), around))
        for collection in loads:
            r, c = self.food_pos[collection.food_index]
            self.grid[r, c] = 0
            self.food_alive[collection.food_index] = False

        rewards = compute_rewards(pre_pop, loads, n_sp, self.reward_config)
        self.step_count += 1
        done = not self.food_alive.any() or self.step_count >= self.horizon
        info = {
            "loads": [(c.food_index, c.participants) for c in loads],
            "spawns": n_sp,
            "spawn_levels": spawn_levels,
            "foods_left": int(self.food_alive.sum()),
        }
        return StepResult(rewards=rewards, observations=None, done=done, info=info)

    # ---------------------------------------------------------- observations

    def _shared_features(self) -> List[float]:
        scale = max(1, self.grid_size - 1)
        features: List[float] = []
        for k in range(self.n_food):
            if self.food_alive[k]:
                r, c = self.food_pos[k]
                features += [r / scale, c / scale, self.food_level[k] / self.max_food_level]
            else:
                features += [0.0, 0.0, 0.0]
        for agent_id in range(1, self.n_max + 1):
            if self.pop.is_alive(agent_id):
                r, c = self.agent_pos[agent_id - 1]
                prev = self.prev_actions[agent_id - 1]
                features += [
                    r / scale,
                    c / scale,
                    self.level(agent_id) / self.max_agent_level,
                    1.0,
                    self.pop.children_count[agent_id] / max(1, self.n_max - 1),
                    _prev_action_feature(prev),
                ]
            else:
                features += [0.0] * 6
        features.append(self.pop.ceiling / self.n_max)
        return features

    def observe(self, agent_id: AgentId, sampled_ceiling: Optional[int] = None) -> np.ndarray:
        features = self._shared_features()
        if sampled_ceiling is not None:
            features[-1] = sampled_ceiling / self.n_max
        features.append(agent_id / self.n_max)
        return np.array(features, dtype=np.float32)

    def global_state(self) -> np.ndarray:
        return np.array(self._shared_features(), dtype=np.float32)

    def invariant_violations(self) -> List[str]:
        problems = super().invariant_violations()
        for agent_id in self.pop.alive:
            r, c = self.agent_pos[agent_id - 1]
            if self.grid[r, c] != agent_id:
                problems.append(f"agent {agent_id} not found at ({r}, {c})")
            if self.level(agent_id) < 1:
                problems.append(f"agent {agent_id} has level {self.level(agent_id)}")
        occupied = int(np.count_nonzero(self.grid))
        if occupied != self.pop.size + int(self.food_alive.sum()):
            problems.append(f"{occupied} occupied cells for {self.pop.size} agents and "
                            f"{int(self.food_alive.sum())} foods")
        return problems

    def snapshot(self) -> Hashable:
        levels = tuple(self.pop.attributes[i].get("level", 0) for i in range(1, self.n_max + 1))
        return (
            self.step_count,
            tuple(map(tuple, self.agent_pos.tolist())),
            tuple(self.food_alive.tolist()),
            tuple(map(tuple, self.food_pos.tolist())),
            levels,
            self.pop.key(),
            tuple(self.prev_actions.tolist()),
        )
