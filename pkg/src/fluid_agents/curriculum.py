"""
Population curriculum: at the start of each training episode draw a population
ceiling uniformly from 1..true ceiling, then an initial group size uniformly
from 1..that ceiling. LBF draws the initial levels too, never above the highest
configured initial level. Evaluation always uses the configured population with
the true ceiling.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CurriculumError
from .pofsg import FluidEnv, PopulationSample

logger = logging.getLogger(__name__)

MAX_RETRIES = 32


def sample_population(env_kind: str, true_ceiling: int, rng: np.random.Generator,
                      max_level: Optional[int] = None, max_initial: Optional[int] = None,
                      retries: int = MAX_RETRIES) -> PopulationSample:
    """Draw (initial population, episode ceiling) for one training episode.

    ``max_initial`` bounds how many agents the environment can place at reset
    (PuddleBridge only has the spawn cell and its neighbours); draws above it
    are redrawn up to ``retries`` times.
    """
    if true_ceiling < 1:
        raise CurriculumError(f"true ceiling must be >= 1, got {true_ceiling}")
    if env_kind == "lbf" and (max_level is None or max_level < 1):
        raise CurriculumError("lbf curriculum needs the maximum initial level")

    for attempt in range(retries):
        ceiling = int(rng.integers(1, true_ceiling + 1))
        n_agents = int(rng.integers(1, ceiling + 1))
        if max_initial is not None and n_agents > max_initial:
            logger.debug("curriculum draw of %d agents does not fit, retry %d", n_agents, attempt + 1)
            continue
        levels = None
        if env_kind == "lbf":
            levels = tuple(int(x) for x in rng.integers(1, max_level + 1, size=n_agents))
        return PopulationSample(n_agents=n_agents, ceiling=ceiling, levels=levels)
    raise CurriculumError(f"{env_kind}: no placeable population after {retries} draws")


def evaluation_population(env: FluidEnv) -> PopulationSample:
    population = env.default_population()
    return PopulationSample(n_agents=population.n_agents, ceiling=env.n_max, levels=population.levels)


@dataclass
class Curriculum:
    """Per-episode population source for one environment; ``enabled=False`` means evaluation."""
    env: FluidEnv
    enabled: bool = True

    def sample(self, rng: np.random.Generator) -> PopulationSample:
        if not self.enabled:
            return evaluation_population(self.env)
        max_level = None
        if self.env.kind == "lbf":
            max_level = max(self.env.default_population().levels)
        return sample_population(self.env.kind, self.env.n_max, rng,
                                 max_level=max_level, max_initial=self.env.max_initial_agents())
