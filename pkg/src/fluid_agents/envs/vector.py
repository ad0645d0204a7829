"""
Batch of independent environment instances stepped together.

Each instance owns its RNG streams (environment and curriculum), so results do
not depend on whether the batch is stepped sequentially or on a thread pool.
Finished episodes are reset immediately with a fresh population draw.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..curriculum import Curriculum
from ..errors import ConfigError
from ..pofsg import DUMMY_ACTION, FluidEnv, StepResult

logger = logging.getLogger(__name__)


@dataclass
class EpisodeStats:
    env_index: int
    joint_return: float
    alive_end: int
    length: int
    spawns: int
    spawn_levels: List[int] = field(default_factory=list)
    final_info: Dict[str, Any] = field(default_factory=dict)
    start_info: Dict[str, Any] = field(default_factory=dict)


@dataclass
class VectorStep:
    observations: np.ndarray       # (B, n_max, obs_dim), after auto-reset
    next_observations: np.ndarray  # (B, n_max, obs_dim), before auto-reset
    rewards: np.ndarray            # (B, n_max)
    dones: np.ndarray              # (B,)
    alive_pre: np.ndarray          # (B, n_max)
    alive_post: np.ndarray         # (B, n_max), before auto-reset
    infos: List[Dict[str, Any]]
    finished: List[EpisodeStats]


class VectorEnv:
    def __init__(self, envs: Sequence[FluidEnv], seed: int = 0, curriculum: bool = True, workers: int = 0):
        if not envs:
            raise ConfigError("VectorEnv needs at least one environment")
        first = envs[0]
        for env in envs[1:]:
            if (env.kind, env.n_max, env.obs_dim) != (first.kind, first.n_max, first.obs_dim):
                raise ConfigError("all environments in a batch must share kind, n_max and obs_dim")
        self.envs = list(envs)
        self.curricula = [Curriculum(env, enabled=curriculum) for env in self.envs]
        children = np.random.SeedSequence(seed).spawn(2 * len(self.envs))
        self.env_seeds = [int(s.generate_state(1)[0]) for s in children[:len(self.envs)]]
        self.rngs = [np.random.default_rng(s) for s in children[len(self.envs):]]
        self.workers = workers
        self._pool = ThreadPoolExecutor(max_workers=workers) if workers > 0 else None

        self.n_max = first.n_max
        self.obs_dim = first.obs_dim
        self.n_actions = first.n_actions
        self._returns = np.zeros(len(self.envs))
        self._lengths = np.zeros(len(self.envs), dtype=np.int64)
        self._spawns = np.zeros(len(self.envs), dtype=np.int64)
        self._spawn_levels: List[List[int]] = [[] for _ in self.envs]
        self._start_info: List[Dict[str, Any]] = [{} for _ in self.envs]
        self._obs = np.zeros((len(self.envs), self.n_max, self.obs_dim), dtype=np.float32)

    def __len__(self) -> int:
        return len(self.envs)

    @property
    def kind(self) -> str:
        return self.envs[0].kind

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(item) for item in items]
        return list(self._pool.map(fn, items))

    def _reset_one(self, k: int, seed: Optional[int] = None) -> np.ndarray:
        env = self.envs[k]
        population = self.curricula[k].sample(self.rngs[k])
        obs = env.reset(seed=seed, population=population)
        self._returns[k] = 0.0
        self._lengths[k] = 0
        self._spawns[k] = 0
        self._spawn_levels[k] = []
        self._start_info[k] = _start_info(env)
        return obs

    def reset(self) -> np.ndarray:
        obs = self._map(lambda k: self._reset_one(k, seed=self.env_seeds[k]), range(len(self.envs)))
        self._obs = np.stack(obs)
        return self._obs.copy()

    def alive_masks(self) -> np.ndarray:
        return np.stack([env.alive_mask() for env in self.envs])

    def global_states(self) -> np.ndarray:
        return np.stack([env.global_state() for env in self.envs])

    def _step_one(self, args):
        k, row = args
        env = self.envs[k]
        alive_pre = env.alive_mask()
        actions = {i: int(row[i - 1]) for i in env.alive}
        for i in range(1, self.n_max + 1):
            if not alive_pre[i - 1] and row[i - 1] != DUMMY_ACTION:
                raise ValueError(f"env {k}: dead agent {i} must play the dummy action")
        result: StepResult = env.step(actions)
        alive_post = env.alive_mask()
        self._returns[k] += result.rewards.sum()
        self._lengths[k] += 1
        self._spawns[k] += result.info.get("spawns", 0)
        self._spawn_levels[k].extend(result.info.get("spawn_levels", []))

        finished = None
        next_obs = result.observations
        obs = next_obs
        if result.done:
            finished = EpisodeStats(
                env_index=k,
                joint_return=float(self._returns[k]),
                alive_end=env.pop.size,
                length=int(self._lengths[k]),
                spawns=int(self._spawns[k]),
                spawn_levels=list(self._spawn_levels[k]),
                final_info=dict(result.info),
                start_info=dict(self._start_info[k]),
            )
            obs = self._reset_one(k)
        return obs, next_obs, result, alive_pre, alive_post, finished

    def step(self, joint_actions: np.ndarray) -> VectorStep:
        joint_actions = np.asarray(joint_actions, dtype=np.int64)
        if joint_actions.shape != (len(self.envs), self.n_max):
            raise ValueError(f"joint actions have shape {joint_actions.shape}, "
                             f"expected {(len(self.envs), self.n_max)}")
        outputs = self._map(self._step_one, list(enumerate(joint_actions)))
        obs, next_obs, results, alive_pre, alive_post, finished = zip(*outputs)
        self._obs = np.stack(obs)
        return VectorStep(
            observations=self._obs.copy(),
            next_observations=np.stack(next_obs),
            rewards=np.stack([r.rewards for r in results]),
            dones=np.array([r.done for r in results]),
            alive_pre=np.stack(alive_pre),
            alive_post=np.stack(alive_post),
            infos=[r.info for r in results],
            finished=[f for f in finished if f is not None],
        )


def _start_info(env: FluidEnv) -> Dict[str, Any]:
    info: Dict[str, Any] = {"initial_agents": env.pop.size, "ceiling": env.pop.ceiling}
    if env.kind == "puddle_bridge":
        info["gate_open"] = env.gate_open
    elif env.kind == "predator_prey":
        info["n_prey"] = env.n_prey
    return info
