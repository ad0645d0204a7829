"""
Fluid stochastic game core
==========================

Agent identity, alive-set bookkeeping, spawn resolution, the fixed-population
embedding and the generic episode loop every environment plugs into.

Agents are identified by integers 1..n_max. Arrays indexed by agent use slot
``agent_id - 1``. Dead agents carry ``DUMMY_ACTION`` in joint actions, receive
zero reward and a zero observation.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, PolicyActionError

logger = logging.getLogger(__name__)

AgentId = int
DUMMY_ACTION = -1

Policy = Callable[[AgentId, np.ndarray, np.random.Generator], int]


@dataclass
class PopulationSample:
    """Initial population handed to ``FluidEnv.reset`` by the curriculum."""
    n_agents: int
    ceiling: int
    levels: Optional[Tuple[int, ...]] = None


@dataclass
class PopulationState:
    n_max: int
    ceiling: int
    alive: Tuple[AgentId, ...]
    children_count: Dict[AgentId, int]
    attributes: Dict[AgentId, Dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def initial(cls, n_max: int, ceiling: int, n_initial: int,
                attributes: Optional[Dict[AgentId, Dict[str, Any]]] = None) -> "PopulationState":
        if not 1 <= ceiling <= n_max:
            raise ConfigError(f"ceiling must be in 1..{n_max}, got {ceiling}")
        if not 1 <= n_initial <= ceiling:
            raise ConfigError(f"initial population must be in 1..{ceiling}, got {n_initial}")
        return cls(
            n_max=n_max,
            ceiling=ceiling,
            alive=tuple(range(1, n_initial + 1)),
            children_count={i: 0 for i in range(1, n_max + 1)},
            attributes={i: dict((attributes or {}).get(i, {})) for i in range(1, n_max + 1)},
        )

    @property
    def size(self) -> int:
        return len(self.alive)

    def is_alive(self, agent_id: AgentId) -> bool:
        return agent_id in self.alive

    def dead_ids(self) -> List[AgentId]:
        alive = set(self.alive)
        return [i for i in range(1, self.n_max + 1) if i not in alive]

    def alive_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_max, dtype=bool)
        for i in self.alive:
            mask[i - 1] = True
        return mask

    def copy(self) -> "PopulationState":
        return PopulationState(
            n_max=self.n_max,
            ceiling=self.ceiling,
            alive=self.alive,
            children_count=dict(self.children_count),
            attributes={i: dict(attrs) for i, attrs in self.attributes.items()},
        )

    def key(self) -> Hashable:
        return (self.ceiling, self.alive, tuple(self.children_count[i] for i in range(1, self.n_max + 1)))


def resolve_spawns(pop: PopulationState, spawners: Iterable[AgentId],
                   place: Optional[Callable[[AgentId, AgentId], bool]] = None) -> Tuple[PopulationState, int]:
    """Add one agent per spawner, smallest dead id first, until the ceiling is hit.

    ``place(parent, child)`` lets an environment put the child on its board; a
    False return makes that spawn fail. Requests beyond the ceiling are no-ops.
    """
    spawners = sorted(set(spawners))
    stray = [i for i in spawners if i not in pop.alive]
    if stray:
        raise ValueError(f"spawners {stray} are not alive")

    new = pop.copy()
    successful = 0
    for parent in spawners:
        if new.size >= new.ceiling:
            continue
        child = new.dead_ids()[0]
        if place is not None and not place(parent, child):
            logger.debug("spawn by agent %d failed: no room for agent %d", parent, child)
            continue
        new.alive = tuple(sorted(new.alive + (child,)))
        new.children_count[parent] += 1
        new.children_count[child] = 0
        new.attributes[child]["parent"] = parent
        successful += 1
    return new, successful


@dataclass
class StepResult:
    rewards: np.ndarray
    observations: np.ndarray
    done: bool
    info: Dict[str, Any] = field(default_factory=dict)


class FluidEnv(ABC):
    """Base class for environments whose alive set grows through spawning.

    Subclasses implement ``_reset``, ``_transition``, ``observe`` and
    ``snapshot``; this class owns the RNG, the population and action checks.
    """

    kind = ""
    n_actions = 0
    noop_action = 0
    spawn_action = 0

    def __init__(self, n_max: int, horizon: int = 100, seed: Optional[int] = None):
        if n_max < 1:
            raise ConfigError(f"n_max must be >= 1, got {n_max}")
        if horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {horizon}")
        self.n_max = n_max
        self.horizon = horizon
        self.rng = np.random.default_rng(seed)
        self.pop: Optional[PopulationState] = None
        self.step_count = 0
        self.prev_actions = np.full(n_max, DUMMY_ACTION, dtype=np.int64)

    @property
    def alive(self) -> Tuple[AgentId, ...]:
        return self.pop.alive

    @property
    @abstractmethod
    def obs_dim(self) -> int:
        ...

    def max_initial_agents(self) -> int:
        return self.n_max

    def default_population(self) -> PopulationSample:
        return PopulationSample(n_agents=1, ceiling=self.n_max)

    def reset(self, seed: Optional[int] = None, population: Optional[PopulationSample] = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        population = population or self.default_population()
        if population.n_agents > self.max_initial_agents():
            raise ConfigError(
                f"{self.kind}: {population.n_agents} initial agents but only "
                f"{self.max_initial_agents()} starting cells"
            )
        self.step_count = 0
        self.prev_actions = np.full(self.n_max, DUMMY_ACTION, dtype=np.int64)
        self._reset(population)
        return self.observations()

    def step(self, actions: Mapping[AgentId, int]) -> StepResult:
        if set(actions) != set(self.alive):
            raise ValueError(f"actions given for {sorted(actions)}, alive agents are {list(self.alive)}")
        for agent_id, action in actions.items():
            if not 0 <= int(action) < self.n_actions:
                raise ValueError(f"agent {agent_id}: action {action} out of range 0..{self.n_actions - 1}")
        actions = {i: int(a) for i, a in actions.items()}
        result = self._transition(actions)
        for i in range(1, self.n_max + 1):
            self.prev_actions[i - 1] = actions.get(i, DUMMY_ACTION)
        result.observations = self.observations()
        return result

    def observations(self) -> np.ndarray:
        obs = np.zeros((self.n_max, self.obs_dim), dtype=np.float32)
        for i in self.alive:
            obs[i - 1] = self.observe(i)
        return obs

    def alive_mask(self) -> np.ndarray:
        return self.pop.alive_mask()

    def global_state(self) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} has no global state encoding")

    def invariant_violations(self) -> List[str]:
        """Broken state invariants, empty when the state is consistent."""
        problems = []
        if self.pop.size > self.pop.ceiling:
            problems.append(f"{self.pop.size} agents alive above ceiling {self.pop.ceiling}")
        if self.pop.ceiling > self.n_max:
            problems.append(f"ceiling {self.pop.ceiling} above n_max {self.n_max}")
        return problems

    def _rewards(self, alive_pre: Sequence[AgentId], per_agent: Mapping[AgentId, float]) -> np.ndarray:
        rewards = np.zeros(self.n_max, dtype=np.float64)
        for i in alive_pre:
            rewards[i - 1] = per_agent.get(i, 0.0)
        return rewards

    @abstractmethod
    def _reset(self, population: PopulationSample) -> None:
        ...

    @abstractmethod
    def _transition(self, actions: Dict[AgentId, int]) -> StepResult:
        ...

    @abstractmethod
    def observe(self, agent_id: AgentId) -> np.ndarray:
        ...

    @abstractmethod
    def snapshot(self) -> Hashable:
        """Full hashable state, used to compare trajectories exactly."""


class FixedPopulationView:
    """Every one of the n_max agents acts each step; dead agents hold one dummy action."""

    def __init__(self, env: FluidEnv):
        self.env = env
        self.n_agents = env.n_max

    def action_count(self, agent_id: AgentId) -> int:
        return self.env.n_actions if agent_id in self.env.alive else 1

    def legal_actions(self, agent_id: AgentId) -> Tuple[int, ...]:
        if agent_id in self.env.alive:
            return tuple(range(self.env.n_actions))
        return (DUMMY_ACTION,)

    def reset(self, seed: Optional[int] = None, population: Optional[PopulationSample] = None) -> np.ndarray:
        return self.env.reset(seed=seed, population=population)

    def step(self, joint_action: Sequence[int]) -> StepResult:
        joint_action = [int(a) for a in joint_action]
        if len(joint_action) != self.n_agents:
            raise ValueError(f"joint action has {len(joint_action)} entries, expected {self.n_agents}")
        alive = set(self.env.alive)
        for agent_id, action in enumerate(joint_action, start=1):
            if agent_id not in alive and action != DUMMY_ACTION:
                raise ValueError(f"dead agent {agent_id} must play the dummy action, got {action}")
        return self.env.step({i: joint_action[i - 1] for i in sorted(alive)})

    def observations(self) -> np.ndarray:
        return self.env.observations()

    def snapshot(self) -> Hashable:
        return self.env.snapshot()

    @property
    def alive(self) -> Tuple[AgentId, ...]:
        return self.env.alive


def embed_fixed_population(env: FluidEnv) -> FixedPopulationView:
    return FixedPopulationView(env)


@dataclass
class Transition:
    state: Hashable
    alive: Tuple[AgentId, ...]
    joint_action: np.ndarray
    result: StepResult


@dataclass
class Trajectory:
    transitions: List[Transition] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    def joint_returns(self) -> List[float]:
        return [float(t.result.rewards.sum()) for t in self.transitions]

    def total_return(self) -> float:
        return float(sum(self.joint_returns()))

    def alive_sequence(self) -> List[Tuple[AgentId, ...]]:
        return [t.alive for t in self.transitions]


def random_policy(n_actions: int) -> Policy:
    def policy(agent_id: AgentId, observation: np.ndarray, rng: np.random.Generator) -> int:
        return int(rng.integers(n_actions))
    return policy


def run_episode(env: Union[FluidEnv, FixedPopulationView],
                policies: Union[Policy, Mapping[AgentId, Policy]],
                rng: np.random.Generator,
                horizon: Optional[int] = None,
                seed: Optional[int] = None,
                population: Optional[PopulationSample] = None) -> Trajectory:
    """Reset ``env`` and roll policies out until done or ``horizon`` steps."""
    base = env.env if isinstance(env, FixedPopulationView) else env
    limit = horizon if horizon is not None else base.horizon
    if limit < 1:
        raise ConfigError(f"horizon must be >= 1, got {limit}")

    observations = env.reset(seed=seed, population=population)
    trajectory = Trajectory()
    for t in range(limit):
        alive = base.alive
        joint = np.full(base.n_max, DUMMY_ACTION, dtype=np.int64)
        for agent_id in alive:
            policy = policies[agent_id] if isinstance(policies, Mapping) else policies
            action = int(policy(agent_id, observations[agent_id - 1], rng))
            if not 0 <= action < base.n_actions:
                raise PolicyActionError(t, agent_id, action, base.n_actions)
            joint[agent_id - 1] = action

        state = base.snapshot()
        if isinstance(env, FixedPopulationView):
            result = env.step(joint)
        else:
            result = env.step({i: int(joint[i - 1]) for i in alive})
        trajectory.transitions.append(Transition(state, alive, joint, result))
        observations = result.observations
        if result.done:
            break
    return trajectory
