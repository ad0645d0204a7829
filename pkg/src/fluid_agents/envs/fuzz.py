"""Random-action fuzzing of the population and occupancy invariants."""

import logging
from dataclasses import dataclass, field
from typing import Any, List, Mapping, Optional

import numpy as np

from ..curriculum import Curriculum
from ..pofsg import FluidEnv
from . import make_env

logger = logging.getLogger(__name__)


@dataclass
class FuzzReport:
    env: str
    steps: int = 0
    episodes: int = 0
    max_alive: int = 0
    spawns_at_cap: int = 0
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def fuzz_env(env: FluidEnv, steps: int, seed: int = 0, curriculum: bool = True,
             max_violations: int = 20) -> FuzzReport:
    """Step ``env`` with uniform random actions, checking invariants after every step.

    A spawn chosen while the population sits at its ceiling must leave the
    alive set unchanged.
    """
    rng = np.random.default_rng(seed)
    source = Curriculum(env, enabled=curriculum)
    report = FuzzReport(env=env.kind)
    env.reset(seed=seed, population=source.sample(rng))
    report.episodes = 1
    while report.steps < steps and len(report.violations) < max_violations:
        before = env.alive
        at_cap = env.pop.size == env.pop.ceiling
        actions = {i: int(rng.integers(env.n_actions)) for i in before}
        result = env.step(actions)
        report.steps += 1
        report.max_alive = max(report.max_alive, env.pop.size)
        problems = env.invariant_violations()
        if at_cap and env.spawn_action in actions.values():
            report.spawns_at_cap += 1
            if env.alive != before:
                problems.append(f"spawn at ceiling {env.pop.ceiling} changed alive set {before} -> {env.alive}")
        report.violations.extend(f"step {report.steps}: {p}" for p in problems)
        if result.done:
            env.reset(population=source.sample(rng))
            report.episodes += 1
    if report.violations:
        logger.warning("%s fuzzing found %d violations", env.kind, len(report.violations))
    return report


def fuzz(kind: str, steps: int, seed: int = 0, config: Optional[Mapping[str, Any]] = None) -> FuzzReport:
    return fuzz_env(make_env(kind, config, seed=seed), steps, seed=seed)
