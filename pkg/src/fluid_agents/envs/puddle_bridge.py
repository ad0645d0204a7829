"""
PuddleBridge
============

Gridworld split by a wall barrier. Agents start on the spawn cell and must get
one of them onto the goal on the far side. A gate in the barrier is open in
about half of the episodes; otherwise the only route runs through a puddle
corridor that a lone agent cannot cross.

Puddle rules:
- a puddle holds at most two agents; an agent entering an occupied puddle
  becomes the top of a 2-stack
- the bottom of a 2-stack at step start cannot move that step (it may spawn)
- only the top of a 2-stack may move puddle to puddle
- when the bottom leaves a cell whose top is still there, the top drops down

Map files use one character per cell: ``.`` land, ``#`` wall, ``G`` gate,
``~`` puddle, ``S`` spawn cell, ``F`` goal.
"""

import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Optional, Tuple, Union

import numpy as np

from ..errors import ConfigError
from ..pofsg import DUMMY_ACTION, AgentId, FluidEnv, PopulationSample, PopulationState, StepResult, resolve_spawns
from ..settings import MAPS_DIR

logger = logging.getLogger(__name__)

# Actions
NONE = 0
NORTH = 1
SOUTH = 2
WEST = 3
EAST = 4
SPAWN = 5
N_ACTIONS = 6
ACTION_NAMES = ["none", "north", "south", "west", "east", "spawn"]

MOVES = {
    NORTH: (-1, 0),
    SOUTH: (1, 0),
    WEST: (0, -1),
    EAST: (0, 1),
}

# Tile types, in one-hot order.
LAND = 0
WALL = 1
GATE = 2
PUDDLE = 3
SPAWN_CELL = 4
GOAL = 5
N_TILE_TYPES = 6
TILE_CHARS = {".": LAND, "#": WALL, "G": GATE, "~": PUDDLE, "S": SPAWN_CELL, "F": GOAL}

GRID_CHANNELS = N_TILE_TYPES + 1  # tile one-hot + base occupant id
GOAL_REWARD = 10.0

DEFAULT_MAP = MAPS_DIR / "puddle_bridge.txt"

Cell = Tuple[int, int]


@dataclass(frozen=True)
class PuddleMap:
    tiles: Tuple[Tuple[int, ...], ...]
    name: str = "puddle_bridge"

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.tiles), len(self.tiles[0])

    def cells(self, tile: int) -> List[Cell]:
        return [(r, c) for r, row in enumerate(self.tiles) for c, t in enumerate(row) if t == tile]

    @property
    def spawn(self) -> Cell:
        return self.cells(SPAWN_CELL)[0]

    @property
    def goal(self) -> Cell:
        return self.cells(GOAL)[0]

    @property
    def puddles(self) -> List[Cell]:
        return self.cells(PUDDLE)

    def tile(self, r: int, c: int) -> int:
        return self.tiles[r][c]

    def in_bounds(self, r: int, c: int) -> bool:
        rows, cols = self.shape
        return 0 <= r < rows and 0 <= c < cols

    def passable(self, r: int, c: int, gate_open: bool) -> bool:
        if not self.in_bounds(r, c):
            return False
        tile = self.tiles[r][c]
        return tile != WALL and (tile != GATE or gate_open)


def parse_map(text: str, name: str = "puddle_bridge") -> PuddleMap:
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if not rows:
        raise ConfigError(f"map {name!r} is empty")
    width = len(rows[0])
    tiles = []
    for r, line in enumerate(rows):
        if len(line) != width:
            raise ConfigError(f"map {name!r}: row {r} has {len(line)} cells, expected {width}")
        unknown = set(line) - set(TILE_CHARS)
        if unknown:
            raise ConfigError(f"map {name!r}: unknown tile characters {sorted(unknown)} in row {r}")
        tiles.append(tuple(TILE_CHARS[ch] for ch in line))
    flat = [t for row in tiles for t in row]
    if flat.count(SPAWN_CELL) != 1 or flat.count(GOAL) != 1:
        raise ConfigError(f"map {name!r} needs exactly one spawn cell (S) and one goal (F)")
    return PuddleMap(tuple(tiles), name)


def load_map(path: Union[str, Path, None] = None) -> PuddleMap:
    path = Path(path) if path is not None else DEFAULT_MAP
    if not path.exists():
        raise ConfigError(f"map file not found: {path}")
    return parse_map(path.read_text(encoding="utf-8"), name=path.stem)


def shortest_path_length(puddle_map: PuddleMap, gate_open: bool) -> Optional[int]:
    """Fewest moves for a lone agent from the spawn cell to the goal, None if unreachable.

    A lone agent may enter and leave puddles but never move puddle to puddle.
    """
    start, goal = puddle_map.spawn, puddle_map.goal
    dist = {start: 0}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        if (r, c) == goal:
            return dist[(r, c)]
        for dr, dc in MOVES.values():
            nr, nc = r + dr, c + dc
            if (nr, nc) in dist or not puddle_map.passable(nr, nc, gate_open):
                continue
            if puddle_map.tile(r, c) == PUDDLE and puddle_map.tile(nr, nc) == PUDDLE:
                continue
            dist[(nr, nc)] = dist[(r, c)] + 1
            queue.append((nr, nc))
    return None


def observation_size(puddle_map: PuddleMap, n_max: int) -> int:
    rows, cols = puddle_map.shape
    return rows * cols * GRID_CHANNELS + len(puddle_map.puddles) + 2 + 1 + n_max * N_ACTIONS + 1


@dataclass
class PuddleBridgeConfig:
    map_path: Optional[str] = None
    n_max: int = 4
    initial_agents: int = 1
    c_spawn: float = 1.0
    c_step: float = 0.1
    gate_prob: float = 0.5
    horizon: int = 100


class PuddleBridgeEnv(FluidEnv):
    kind = "puddle_bridge"
    n_actions = N_ACTIONS
    noop_action = NONE
    spawn_action = SPAWN

    def __init__(self, config: Optional[PuddleBridgeConfig] = None, seed: Optional[int] = None):
        self.config = config or PuddleBridgeConfig()
        super().__init__(self.config.n_max, self.config.horizon, seed)
        if not 0.0 <= self.config.gate_prob <= 1.0:
            raise ConfigError(f"gate_prob must be in [0, 1], got {self.config.gate_prob}")
        if self.config.c_spawn < 0 or self.config.c_step < 0:
            raise ConfigError("c_spawn and c_step must be non-negative")
        self.map = load_map(self.config.map_path)
        self.rows, self.cols = self.map.shape
        self.puddle_cells = self.map.puddles
        self.gate_open = False
        self.base = np.zeros(self.map.shape, dtype=np.int64)
        self.top = np.zeros(self.map.shape, dtype=np.int64)
        self.pos = np.full((self.n_max, 2), -1, dtype=np.int64)

    @property
    def obs_dim(self) -> int:
        return observation_size(self.map, self.n_max)

    @property
    def grid_shape(self) -> Tuple[int, int, int]:
        return GRID_CHANNELS, self.rows, self.cols

    def spawn_neighbours(self) -> List[Cell]:
        r, c = self.map.spawn
        cells = []
        for dr, dc in MOVES.values():
            nr, nc = r + dr, c + dc
            if self.map.in_bounds(nr, nc) and self.map.tile(nr, nc) in (LAND, GOAL):
                cells.append((nr, nc))
        return cells

    def max_initial_agents(self) -> int:
        return 1 + len(self.spawn_neighbours())

    def default_population(self) -> PopulationSample:
        return PopulationSample(n_agents=self.config.initial_agents, ceiling=self.n_max)

    # ------------------------------------------------------------------ board

    def occupancy(self, r: int, c: int) -> int:
        return int(self.base[r, c] > 0) + int(self.top[r, c] > 0)

    def is_top(self, agent_id: AgentId) -> bool:
        r, c = self.pos[agent_id - 1]
        return self.top[r, c] == agent_id

    def stacks(self) -> List[Tuple[AgentId, AgentId]]:
        """(bottom, top) pairs of every 2-stack."""
        return [(int(self.base[r, c]), int(self.top[r, c])) for r, c in self.puddle_cells if self.top[r, c] > 0]

    def _enter(self, agent_id: AgentId, r: int, c: int) -> None:
        if self.base[r, c] == 0:
            self.base[r, c] = agent_id
        else:
            self.top[r, c] = agent_id
        self.pos[agent_id - 1] = (r, c)

    def _leave(self, agent_id: AgentId) -> None:
        r, c = self.pos[agent_id - 1]
        if self.top[r, c] == agent_id:
            self.top[r, c] = 0
        elif self.top[r, c] > 0:
            self.base[r, c] = self.top[r, c]
            self.top[r, c] = 0
        else:
            self.base[r, c] = 0

    def _can_move(self, agent_id: AgentId, r: int, c: int, nr: int, nc: int) -> bool:
        if not self.map.passable(nr, nc, self.gate_open):
            return False
        target_puddle = self.map.tile(nr, nc) == PUDDLE
        if not target_puddle:
            return self.occupancy(nr, nc) == 0
        if self.map.tile(r, c) == PUDDLE and not self.is_top(agent_id):
            return False
        return self.occupancy(nr, nc) < 2

    def _place_child(self, parent: AgentId, child: AgentId) -> bool:
        r, c = self.map.spawn
        if self.occupancy(r, c) > 0:
            return False
        self._enter(child, r, c)
        return True

    def load_state(self, agents: Dict[AgentId, Cell], gate_open: bool = True, ceiling: Optional[int] = None,
                   tops: Iterable[AgentId] = ()) -> None:
        """Place agents explicitly; ids in ``tops`` sit on top of a puddle stack."""
        ids = sorted(agents)
        if ids != list(range(1, len(ids) + 1)):
            raise ConfigError(f"agent ids must be 1..k, got {ids}")
        tops = set(tops)
        self.pop = PopulationState.initial(self.n_max, ceiling or self.n_max, len(ids))
        self.gate_open = gate_open
        self.base[:] = 0
        self.top[:] = 0
        self.pos[:] = -1
        for agent_id in sorted(ids, key=lambda i: i in tops):
            r, c = agents[agent_id]
            if not self.map.passable(r, c, gate_open):
                raise ConfigError(f"cell ({r}, {c}) is not passable")
            limit = 2 if self.map.tile(r, c) == PUDDLE else 1
            if self.occupancy(r, c) >= limit:
                raise ConfigError(f"cell ({r}, {c}) is full")
            self._enter(agent_id, r, c)
        self.step_count = 0
        self.prev_actions[:] = DUMMY_ACTION

    # -------------------------------------------------------------- dynamics

    def _reset(self, population: PopulationSample) -> None:
        self.gate_open = bool(self.rng.random() < self.config.gate_prob)
        logger.debug("puddle bridge reset, gate %s", "open" if self.gate_open else "closed")
        self.pop = PopulationState.initial(self.n_max, population.ceiling, population.n_agents)
        self.base[:] = 0
        self.top[:] = 0
        self.pos[:] = -1
        self._enter(1, *self.map.spawn)
        extras = population.n_agents - 1
        if extras:
            neighbours = self.spawn_neighbours()
            picks = self.rng.choice(len(neighbours), size=extras, replace=False)
            for agent_id, k in zip(range(2, population.n_agents + 1), sorted(picks)):
                self._enter(agent_id, *neighbours[k])

    def _transition(self, actions: Dict[AgentId, int]) -> StepResult:
        pre_pop = self.pop
        alive_pre = pre_pop.alive
        locked = {bottom for bottom, _ in self.stacks()}

        for agent_id in alive_pre:
            move = MOVES.get(actions[agent_id])
            if move is None or agent_id in locked:
                continue
            r, c = self.pos[agent_id - 1]
            nr, nc = r + move[0], c + move[1]
            if self._can_move(agent_id, r, c, nr, nc):
                self._leave(agent_id)
                self._enter(agent_id, nr, nc)

        spawners = [i for i in alive_pre if actions[i] == SPAWN]
        self.pop, n_sp = resolve_spawns(self.pop, spawners, place=self._place_child)

        gr, gc = self.map.goal
        goal_reached = bool(self.base[gr, gc] > 0)
        size = pre_pop.size
        per_agent = (GOAL_REWARD / size if goal_reached else 0.0) - self.config.c_step - self.config.c_spawn * n_sp / size
        rewards = self._rewards(alive_pre, {i: per_agent for i in alive_pre})

        self.step_count += 1
        done = goal_reached or self.step_count >= self.horizon
        info = {
            "spawns": n_sp,
            "gate_open": self.gate_open,
            "goal_reached": goal_reached,
            "stacks": len(self.stacks()),
        }
        return StepResult(rewards=rewards, observations=None, done=done, info=info)

    # ---------------------------------------------------------- observations

    def _grid_features(self) -> np.ndarray:
        grid = np.zeros(self.grid_shape, dtype=np.float32)
        for r in range(self.rows):
            for c in range(self.cols):
                tile = self.map.tile(r, c)
                # Gate cells show as wall or land.
                if tile == GATE:
                    tile = LAND if self.gate_open else WALL
                grid[tile, r, c] = 1.0
        grid[N_TILE_TYPES] = self.base / self.n_max
        return grid

    def observe(self, agent_id: AgentId, sampled_ceiling: Optional[int] = None) -> np.ndarray:
        ceiling = sampled_ceiling if sampled_ceiling is not None else self.pop.ceiling
        tops = np.array([self.top[r, c] / self.n_max for r, c in self.puddle_cells], dtype=np.float32)
        r, c = self.pos[agent_id - 1]
        prev = np.zeros((self.n_max, N_ACTIONS), dtype=np.float32)
        for j, action in enumerate(self.prev_actions):
            if action != DUMMY_ACTION:
                prev[j, action] = 1.0
        return np.concatenate([
            self._grid_features().ravel(),
            tops,
            np.array([r / max(1, self.rows - 1), c / max(1, self.cols - 1), agent_id / self.n_max],
                     dtype=np.float32),
            prev.ravel(),
            np.array([ceiling / self.n_max], dtype=np.float32),
        ])

    def invariant_violations(self) -> List[str]:
        problems = super().invariant_violations()
        for r in range(self.rows):
            for c in range(self.cols):
                if self.top[r, c] and not self.base[r, c]:
                    problems.append(f"({r}, {c}) has a top agent but no base")
                if self.top[r, c] and self.map.tile(r, c) != PUDDLE:
                    problems.append(f"({r}, {c}) stacks two agents off a puddle")
        for agent_id in self.pop.alive:
            r, c = self.pos[agent_id - 1]
            if agent_id not in (self.base[r, c], self.top[r, c]):
                problems.append(f"agent {agent_id} not found at ({r}, {c})")
        if int(np.count_nonzero(self.base) + np.count_nonzero(self.top)) != self.pop.size:
            problems.append("occupied slots do not match the alive count")
        return problems

    def snapshot(self) -> Hashable:
        return (
            self.step_count,
            self.gate_open,
            tuple(self.base.ravel().tolist()),
            tuple(self.top.ravel().tolist()),
            self.pop.key(),
            tuple(self.prev_actions.tolist()),
        )
