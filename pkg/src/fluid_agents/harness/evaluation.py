"""
Checkpoint evaluation
=====================

Greedy policies (epsilon 0 for the value-based learners, argmax for the
policy-gradient ones), curriculum off, true population ceiling. Every
environment instance of the batch plays a fixed quota of episodes so the
result does not favour short episodes.
"""

import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd

from ..envs import make_env
from ..envs.vector import VectorEnv
from ..errors import ShapeMismatchError
from ..learners import Learner, PolicyGradientLearner, make_learner
from ..learners.presets import TrainConfig, apply_overrides, config_from_dict
from ..nn import load_checkpoint
from ..pofsg import FluidEnv

logger = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1_000_003

EPISODE_COLUMNS = ["episode", "joint_return", "alive_end", "length", "spawns", "initial_agents", "ceiling",
                   "spawn_levels", "gate_open", "n_prey", "goal_reached"]


@dataclass
class EpisodeRecord:
    episode: int
    joint_return: float
    alive_end: int
    length: int
    spawns: int
    initial_agents: int
    ceiling: int
    spawn_levels: List[int] = field(default_factory=list)
    gate_open: Optional[bool] = None
    n_prey: Optional[int] = None
    goal_reached: Optional[bool] = None


@dataclass
class EvalReport:
    checkpoint: int = 0
    env_steps: int = 0
    episodes: List[EpisodeRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def returns(self) -> np.ndarray:
        return np.array([e.joint_return for e in self.episodes], dtype=np.float64)

    @property
    def joint_return_mean(self) -> float:
        return float(self.returns.mean()) if self.episodes else float("nan")

    @property
    def joint_return_std(self) -> float:
        return float(self.returns.std()) if self.episodes else float("nan")

    @property
    def alive_mean(self) -> float:
        return float(np.mean([e.alive_end for e in self.episodes])) if self.episodes else float("nan")

    def spawns_by_level(self) -> Dict[int, float]:
        """Mean number of agents spawned per episode, by level."""
        counts: Counter = Counter()
        for e in self.episodes:
            counts.update(e.spawn_levels)
        return {int(level): counts[level] / len(self.episodes) for level in sorted(counts)}

    def by_gate(self) -> Dict[str, Dict[str, float]]:
        groups: Dict[str, List[EpisodeRecord]] = defaultdict(list)
        for e in self.episodes:
            if e.gate_open is not None:
                groups["open" if e.gate_open else "closed"].append(e)
        return {gate: _summary(records) for gate, records in sorted(groups.items())}

    def by_prey_count(self) -> Dict[int, Dict[str, float]]:
        groups: Dict[int, List[EpisodeRecord]] = defaultdict(list)
        for e in self.episodes:
            if e.n_prey is not None:
                groups[e.n_prey].append(e)
        return {n: _summary(records) for n, records in sorted(groups.items())}

    def extra(self) -> Dict[str, Any]:
        """Environment-specific summaries for the metrics ``extra`` column."""
        if not self.episodes:
            return {}
        extra: Dict[str, Any] = {"spawns_mean": float(np.mean([e.spawns for e in self.episodes]))}
        levels = self.spawns_by_level()
        if levels:
            extra["spawns_by_level"] = {str(k): v for k, v in levels.items()}
            # Share of episodes that spawned exactly one agent, by that agent's level.
            single = Counter(e.spawn_levels[0] for e in self.episodes if len(e.spawn_levels) == 1)
            extra["single_spawn_share"] = {str(k): v / len(self.episodes) for k, v in sorted(single.items())}
        gates = self.by_gate()
        if gates:
            extra["by_gate"] = gates
        prey = self.by_prey_count()
        if prey:
            extra["by_prey_count"] = {str(k): v for k, v in prey.items()}
        return extra

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for e in self.episodes:
            row = asdict(e)
            row["spawn_levels"] = json.dumps(row["spawn_levels"])
            rows.append(row)
        return pd.DataFrame(rows, columns=EPISODE_COLUMNS)

    def save_episodes(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def _summary(records: List[EpisodeRecord]) -> Dict[str, float]:
    returns = np.array([r.joint_return for r in records])
    return {
        "episodes": len(records),
        "return_mean": float(returns.mean()),
        "return_std": float(returns.std()),
        "alive_mean": float(np.mean([r.alive_end for r in records])),
    }


def greedy_joint_actions(learner: Learner, vec: VectorEnv, obs: np.ndarray) -> np.ndarray:
    alive = vec.alive_masks()
    if isinstance(learner, PolicyGradientLearner):
        states = vec.global_states() if learner.variant == "global_state" else None
        return learner.greedy(obs, alive, states=states)
    return learner.greedy(obs, alive)


def evaluate_learner(learner: Learner, config: TrainConfig, episodes: int, seed: int,
                     checkpoint: int = 0, env_steps: int = 0) -> EvalReport:
    """Roll out ``episodes`` greedy episodes on fresh environments built from ``config``."""
    report = EvalReport(checkpoint=checkpoint, env_steps=env_steps)
    if episodes <= 0:
        return report
    n_envs = min(episodes, config.learner.num_envs)
    quota = [episodes // n_envs + (1 if k < episodes % n_envs else 0) for k in range(n_envs)]
    envs = [make_env(config.env, config.env_config) for _ in range(n_envs)]
    vec = VectorEnv(envs, seed=seed, curriculum=False, workers=config.workers)
    done_counts = [0] * n_envs
    try:
        obs = vec.reset()
        while sum(done_counts) < episodes:
            out = vec.step(greedy_joint_actions(learner, vec, obs))
            obs = out.observations
            for stats in out.finished:
                k = stats.env_index
                if done_counts[k] >= quota[k]:
                    continue
                done_counts[k] += 1
                start, final = stats.start_info, stats.final_info
                report.episodes.append(EpisodeRecord(
                    episode=0,
                    joint_return=stats.joint_return,
                    alive_end=stats.alive_end,
                    length=stats.length,
                    spawns=stats.spawns,
                    initial_agents=start["initial_agents"],
                    ceiling=start["ceiling"],
                    spawn_levels=list(stats.spawn_levels),
                    gate_open=start.get("gate_open"),
                    n_prey=start.get("n_prey"),
                    goal_reached=final.get("goal_reached"),
                ))
    finally:
        vec.close()
    for index, record in enumerate(report.episodes):
        record.episode = index
    return report


def env_signature(env: FluidEnv) -> Dict[str, int]:
    """Constants a trained network depends on."""
    signature = {"n_max": env.n_max, "obs_dim": env.obs_dim, "n_actions": env.n_actions}
    if hasattr(env, "global_state_dim"):
        signature["global_state_dim"] = env.global_state_dim
    return signature


def check_signature(saved: Mapping[str, int], env: FluidEnv) -> None:
    current = env_signature(env)
    for name, value in saved.items():
        if current.get(name) != value:
            raise ShapeMismatchError(f"{name}: checkpoint was trained with {value}, "
                                     f"environment has {current.get(name)}")


def load_learner(checkpoint: Union[str, Path], overrides: Optional[Mapping[str, Any]] = None):
    """Rebuild the learner stored in a checkpoint; returns (learner, config, archive)."""
    archive = load_checkpoint(checkpoint)
    config = config_from_dict(archive["meta"]["config"])
    if overrides:
        config = apply_overrides(config, overrides)
    env = make_env(config.env, config.env_config)
    check_signature(archive["meta"]["env"], env)
    learner = make_learner(config, env)
    learner.load_networks(archive["networks"])
    return learner, config, archive


def evaluate(checkpoint: Union[str, Path], episodes: int, seed: Optional[int] = None,
             overrides: Optional[Mapping[str, Any]] = None) -> EvalReport:
    """Evaluate a saved checkpoint; the file itself is only read."""
    learner, config, archive = load_learner(checkpoint, overrides)
    meta = archive["meta"]
    seed = config.seed + EVAL_SEED_OFFSET if seed is None else seed
    logger.info("evaluating %s for %d episodes (seed %d)", checkpoint, episodes, seed)
    return evaluate_learner(learner, config, episodes, seed,
                            checkpoint=meta.get("checkpoint", 0), env_steps=meta.get("env_steps", 0))

