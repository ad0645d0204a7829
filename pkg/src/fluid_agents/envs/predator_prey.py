"""
Fluid Predator-Prey
===================

Square grid, one entity per cell. Predators cooperate to capture preys: a
prey is captured once at least two different predators sit in its four
orthogonal neighbour cells. Predators may spawn new predators up to the
episode's population ceiling.

Step order: predator moves (ascending id), spawns, captures, prey moves
(prey index order), rewards. The episode ends when every prey is captured or
the horizon is reached.
"""

from dataclasses import dataclass
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError
from ..pofsg import DUMMY_ACTION, AgentId, FluidEnv, PopulationSample, PopulationState, StepResult, resolve_spawns

# Actions
NORTH = 0
SOUTH = 1
EAST = 2
WEST = 3
NOOP = 4
SPAWN = 5
N_ACTIONS = 6
ACTION_NAMES = ["north", "south", "east", "west", "noop", "spawn"]
# One-hot of the previous joint action keeps an extra slot for the dummy action.
PREV_ACTION_SLOTS = N_ACTIONS + 1

MOVES = {
    NORTH: (-1, 0),
    SOUTH: (1, 0),
    EAST: (0, 1),
    WEST: (0, -1),
}
NEIGHBOURS = list(MOVES.values())

# Prey move distribution: stay, then the four directions in MOVES order.
PREY_STAY = NOOP
PREY_CHOICES = [NOOP, NORTH, SOUTH, EAST, WEST]
PREY_PROBS = [0.3, 0.175, 0.175, 0.175, 0.175]

WINDOW_CHANNELS = 3  # predators, preys, out-of-bounds


@dataclass
class RewardConfig:
    prey_capture_reward: float = 5.0
    c_spawn: float = 10.0
    c_step: float = 0.01
    mode: str = "SIP"

    def __post_init__(self):
        self.mode = self.mode.upper()
        if self.mode not in ("SCP", "SIP"):
            raise ConfigError(f"payoff mode must be SCP or SIP, got {self.mode!r}")
        if self.prey_capture_reward <= 0:
            raise ConfigError("prey_capture_reward must be positive")
        if self.c_spawn < 0 or self.c_step < 0:
            raise ConfigError("c_spawn and c_step must be non-negative")


@dataclass
class PredatorPreyConfig:
    grid_size: int = 9
    n_prey: int = 4
    prey_counts: Optional[Tuple[int, ...]] = None
    n_max: int = 10
    initial_agents: int = 2
    prey_capture_reward: float = 5.0
    c_spawn: float = 10.0
    c_step: float = 0.01
    payoff: str = "SIP"
    horizon: int = 100
    view_size: int = 11
    allow_spawn: bool = True

    def reward_config(self) -> RewardConfig:
        return RewardConfig(self.prey_capture_reward, self.c_spawn, self.c_step, self.payoff)


def compute_rewards(pre_pop: PopulationState, n_cap: int, n_sp: int, cfg: RewardConfig) -> np.ndarray:
    """Per-agent reward with the population measured before the transition.

    Every alive agent gets Payoff - (c_spawn * n_sp / |L| + c_step) where
    Payoff is P * n_cap (SCP) or P * n_cap / |L| (SIP). Dead agents get 0.
    """
    if n_cap < 0 or n_sp < 0:
        raise ValueError("capture and spawn counts must be non-negative")
    size = pre_pop.size
    if size < 1:
        raise ValueError("reward needs at least one alive agent")
    payoff = cfg.prey_capture_reward * n_cap
    if cfg.mode == "SIP":
        payoff = payoff / size
    per_agent = payoff - (cfg.c_spawn * n_sp / size + cfg.c_step)
    rewards = np.zeros(pre_pop.n_max, dtype=np.float64)
    for i in pre_pop.alive:
        rewards[i - 1] = per_agent
    return rewards


def sample_prey_move(rng: np.random.Generator) -> int:
    return PREY_CHOICES[rng.choice(len(PREY_CHOICES), p=PREY_PROBS)]


def observation_size(view_size: int, n_max: int) -> int:
    return WINDOW_CHANNELS * view_size * view_size + 2 + 1 + PREV_ACTION_SLOTS * n_max + 4


class PredatorPreyEnv(FluidEnv):
    kind = "predator_prey"
    n_actions = N_ACTIONS
    noop_action = NOOP
    spawn_action = SPAWN

    def __init__(self, config: Optional[PredatorPreyConfig] = None, seed: Optional[int] = None):
        self.config = config or PredatorPreyConfig()
        super().__init__(self.config.n_max, self.config.horizon, seed)
        self.reward_config = self.config.reward_config()
        self.grid_size = self.config.grid_size
        self.view_size = self.config.view_size
        if self.view_size % 2 != 1:
            raise ConfigError(f"view_size must be odd, got {self.view_size}")
        self.max_prey = max(self.config.prey_counts) if self.config.prey_counts else self.config.n_prey
        if self.max_prey + self.n_max > self.grid_size ** 2:
            raise ConfigError(
                f"{self.max_prey} preys and {self.n_max} predators do not fit on a "
                f"{self.grid_size}x{self.grid_size} grid"
            )
        if not 1 <= self.config.initial_agents <= self.n_max:
            raise ConfigError(f"initial_agents must be in 1..{self.n_max}")

        self.grid = np.zeros((self.grid_size, self.grid_size), dtype=np.int64)
        self.pred_pos = np.full((self.n_max, 2), -1, dtype=np.int64)
        self.prey_pos = np.zeros((0, 2), dtype=np.int64)
        self.prey_alive = np.zeros(0, dtype=bool)

    @property
    def obs_dim(self) -> int:
        return observation_size(self.view_size, self.n_max)

    @property
    def global_state_dim(self) -> int:
        return 2 * self.grid_size ** 2 + 3 + self.n_max

    @property
    def grid_shape(self) -> Tuple[int, int, int]:
        return WINDOW_CHANNELS, self.view_size, self.view_size

    @property
    def state_grid_shape(self) -> Tuple[int, int, int]:
        return 2, self.grid_size, self.grid_size

    @property
    def n_prey(self) -> int:
        return len(self.prey_alive)

    def default_population(self) -> PopulationSample:
        return PopulationSample(n_agents=self.config.initial_agents, ceiling=self.n_max)

    # ------------------------------------------------------------------ board

    def _in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.grid_size and 0 <= c < self.grid_size

    def _empty_cells(self) -> np.ndarray:
        return np.argwhere(self.grid == 0)

    def _random_empty_cell(self) -> Optional[Tuple[int, int]]:
        empties = self._empty_cells()
        if len(empties) == 0:
            return None
        r, c = empties[self.rng.integers(len(empties))]
        return int(r), int(c)

    def _put_predator(self, agent_id: AgentId, r: int, c: int) -> None:
        self.grid[r, c] = agent_id
        self.pred_pos[agent_id - 1] = (r, c)

    def _place_predator(self, parent: AgentId, child: AgentId) -> bool:
        cell = self._random_empty_cell()
        if cell is None:
            return False
        self._put_predator(child, *cell)
        return True

    def _predators_adjacent(self, r: int, c: int, eligible: Optional[Sequence[AgentId]] = None) -> List[AgentId]:
        found = []
        for dr, dc in NEIGHBOURS:
            nr, nc = r + dr, c + dc
            if self._in_bounds(nr, nc) and self.grid[nr, nc] > 0:
                agent_id = int(self.grid[nr, nc])
                if eligible is None or agent_id in eligible:
                    found.append(agent_id)
        return found

    def load_state(self, predators: Dict[AgentId, Tuple[int, int]], preys: Sequence[Tuple[int, int]],
                   ceiling: Optional[int] = None, children: Optional[Dict[AgentId, int]] = None) -> None:
        """Put entities on explicit cells; predator ids must be 1..k."""
        ids = sorted(predators)
        if ids != list(range(1, len(ids) + 1)):
            raise ConfigError(f"predator ids must be 1..k, got {ids}")
        self.pop = PopulationState.initial(self.n_max, ceiling or self.n_max, len(ids))
        for agent_id, count in (children or {}).items():
            self.pop.children_count[agent_id] = count
        self.grid[:] = 0
        self.pred_pos[:] = -1
        self.prey_pos = np.array(list(preys), dtype=np.int64).reshape(-1, 2)
        self.prey_alive = np.ones(len(self.prey_pos), dtype=bool)
        for k, (r, c) in enumerate(self.prey_pos):
            self.grid[r, c] = -(k + 1)
        for agent_id in ids:
            r, c = predators[agent_id]
            if self.grid[r, c] != 0:
                raise ConfigError(f"cell ({r}, {c}) is already occupied")
            self._put_predator(agent_id, r, c)
        self.step_count = 0
        self.prev_actions[:] = DUMMY_ACTION

    # -------------------------------------------------------------- dynamics

    def _reset(self, population: PopulationSample) -> None:
        n_prey = int(self.rng.choice(self.config.prey_counts)) if self.config.prey_counts else self.config.n_prey
        self.pop = PopulationState.initial(self.n_max, population.ceiling, population.n_agents)
        self.grid[:] = 0
        self.pred_pos[:] = -1

        cells = self.rng.choice(self.grid_size ** 2, size=n_prey + population.n_agents, replace=False)
        coords = np.stack(np.unravel_index(cells, (self.grid_size, self.grid_size)), axis=1)
        self.prey_pos = coords[:n_prey].astype(np.int64)
        self.prey_alive = np.ones(n_prey, dtype=bool)
        for k, (r, c) in enumerate(self.prey_pos):
            self.grid[r, c] = -(k + 1)
        for agent_id, (r, c) in zip(self.pop.alive, coords[n_prey:]):
            self._put_predator(agent_id, int(r), int(c))

    def prey_policy(self, prey_index: int) -> int:
        """Sampled prey move after the stay fallbacks (blocked, out of bounds, into capture range)."""
        move = sample_prey_move(self.rng)
        if move == PREY_STAY:
            return PREY_STAY
        r, c = self.prey_pos[prey_index]
        dr, dc = MOVES[move]
        nr, nc = r + dr, c + dc
        if not self._in_bounds(nr, nc) or self.grid[nr, nc] != 0:
            return PREY_STAY
        if self._predators_adjacent(nr, nc):
            return PREY_STAY
        return move

    def _transition(self, actions: Dict[AgentId, int]) -> StepResult:
        pre_pop = self.pop
        alive_pre = pre_pop.alive

        for agent_id in alive_pre:
            move = MOVES.get(actions[agent_id])
            if move is None:
                continue
            r, c = self.pred_pos[agent_id - 1]
            nr, nc = r + move[0], c + move[1]
            if self._in_bounds(nr, nc) and self.grid[nr, nc] == 0:
                self.grid[r, c] = 0
                self._put_predator(agent_id, nr, nc)

        spawners = [i for i in alive_pre if actions[i] == SPAWN] if self.config.allow_spawn else []
        self.pop, n_sp = resolve_spawns(self.pop, spawners, place=self._place_predator)

        captured = [
            k for k in np.flatnonzero(self.prey_alive)
            if len(set(self._predators_adjacent(*self.prey_pos[k], eligible=alive_pre))) >= 2
        ]
        for k in captured:
            r, c = self.prey_pos[k]
            self.grid[r, c] = 0
            self.prey_alive[k] = False

        for k in np.flatnonzero(self.prey_alive):
            move = self.prey_policy(k)
            if move == PREY_STAY:
                continue
            r, c = self.prey_pos[k]
            nr, nc = r + MOVES[move][0], c + MOVES[move][1]
            self.grid[r, c] = 0
            self.grid[nr, nc] = -(k + 1)
            self.prey_pos[k] = (nr, nc)

        rewards = compute_rewards(pre_pop, len(captured), n_sp, self.reward_config)
        self.step_count += 1
        done = not self.prey_alive.any() or self.step_count >= self.horizon
        info = {
            "captures": len(captured),
            "spawns": n_sp,
            "preys_alive": int(self.prey_alive.sum()),
            "n_prey": self.n_prey,
        }
        return StepResult(rewards=rewards, observations=None, done=done, info=info)

    # ---------------------------------------------------------- observations

    def _window(self, agent_id: AgentId) -> np.ndarray:
        half = self.view_size // 2
        channels = np.stack([self.grid > 0, self.grid < 0, np.zeros_like(self.grid, dtype=bool)]).astype(np.float32)
        padded = np.pad(channels, ((0, 0), (half, half), (half, half)))
        padded[2] = 1.0
        padded[2, half:half + self.grid_size, half:half + self.grid_size] = 0.0
        r, c = self.pred_pos[agent_id - 1]
        window = padded[:, r:r + self.view_size, c:c + self.view_size].copy()
        window[0, half, half] = 0.0
        return window

    def observe(self, agent_id: AgentId, sampled_ceiling: Optional[int] = None) -> np.ndarray:
        ceiling = sampled_ceiling if sampled_ceiling is not None else self.pop.ceiling
        scale = max(1, self.grid_size - 1)
        r, c = self.pred_pos[agent_id - 1]
        prev = np.zeros((self.n_max, PREV_ACTION_SLOTS), dtype=np.float32)
        for j, action in enumerate(self.prev_actions):
            prev[j, action if action != DUMMY_ACTION else N_ACTIONS] = 1.0
        tail = [
            np.array([r / scale, c / scale, agent_id / self.n_max], dtype=np.float32),
            prev.ravel(),
            np.array([
                self.pop.children_count[agent_id] / max(1, self.n_max - 1),
                self.prey_alive.sum() / max(1, self.max_prey),
                self.pop.size / self.n_max,
                ceiling / self.n_max,
            ], dtype=np.float32),
        ]
        return np.concatenate([self._window(agent_id).ravel()] + tail)

    def global_state(self) -> np.ndarray:
        board = np.stack([self.grid > 0, self.grid < 0]).astype(np.float32).ravel()
        scalars = np.array([
            self.pop.size / self.n_max,
            self.prey_alive.sum() / max(1, self.max_prey),
            self.pop.ceiling / self.n_max,
        ], dtype=np.float32)
        parents = np.array(
            [self.pop.children_count[i] / max(1, self.n_max - 1) for i in range(1, self.n_max + 1)],
            dtype=np.float32,
        )
        return np.concatenate([board, scalars, parents])

    def invariant_violations(self) -> List[str]:
        problems = super().invariant_violations()
        for agent_id in self.pop.alive:
            r, c = self.pred_pos[agent_id - 1]
            if not self._in_bounds(r, c) or self.grid[r, c] != agent_id:
                problems.append(f"predator {agent_id} not found at ({r}, {c})")
        for k in np.flatnonzero(self.prey_alive):
            r, c = self.prey_pos[k]
            if self.grid[r, c] != -(k + 1):
                problems.append(f"prey {k} not found at ({r}, {c})")
        occupied = int(np.count_nonzero(self.grid))
        if occupied != self.pop.size + int(self.prey_alive.sum()):
            problems.append(f"{occupied} occupied cells for {self.pop.size} predators and "
                            f"{int(self.prey_alive.sum())} preys")
        return problems

    def snapshot(self) -> Hashable:
        return (
            self.step_count,
            tuple(map(tuple, self.pred_pos.tolist())),
            tuple(map(tuple, self.prey_pos.tolist())),
            tuple(self.prey_alive.tolist()),
            self.pop.key(),
            tuple(self.prev_actions.tolist()),
        )
