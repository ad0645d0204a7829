"""Population curriculum draws and the evaluation population."""

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluid_agents.curriculum import Curriculum, evaluation_population, sample_population
from fluid_agents.errors import CurriculumError


class TestSamplePopulation:
    def test_ceiling_uniform(self):
        rng = np.random.default_rng(0)
        counts = Counter(sample_population("predator_prey", 10, rng).ceiling for _ in range(20_000))
        assert set(counts) == set(range(1, 11))
        for ceiling in range(1, 11):
            assert counts[ceiling] / 20_000 == pytest.approx(0.1, abs=0.01)

    def test_initial_uniform_given_ceiling(self):
        rng = np.random.default_rng(1)
        draws = [sample_population("predator_prey", 4, rng) for _ in range(20_000)]
        at_four = [d.n_agents for d in draws if d.ceiling == 4]
        counts = Counter(at_four)
        for n in range(1, 5):
            assert counts[n] / len(at_four) == pytest.approx(0.25, abs=0.03)

    def test_single_agent_ceiling(self):
        sample = sample_population("predator_prey", 1, np.random.default_rng(0))
        assert (sample.n_agents, sample.ceiling) == (1, 1)

    @given(true_ceiling=st.integers(1, 12), max_level=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_lbf_draw_bounds(self, true_ceiling, max_level, seed):
        sample = sample_population("lbf", true_ceiling, np.random.default_rng(seed), max_level=max_level)
        assert 1 <= sample.n_agents <= sample.ceiling <= true_ceiling
        assert len(sample.levels) == sample.n_agents
        assert all(1 <= level <= max_level for level in sample.levels)

    def test_lbf_needs_max_level(self):
        with pytest.raises(CurriculumError):
            sample_population("lbf", 4, np.random.default_rng(0))

    def test_bad_ceiling(self):
        with pytest.raises(CurriculumError):
            sample_population("predator_prey", 0, np.random.default_rng(0))

    def test_redraws_above_placeable_count(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            assert sample_population("puddle_bridge", 8, rng, max_initial=5).n_agents <= 5

    def test_gives_up_after_retries(self):
        # max_initial=0 can never be met.
        with pytest.raises(CurriculumError):
            sample_population("puddle_bridge", 4, np.random.default_rng(0), max_initial=0, retries=4)


class TestCurriculum:
    def test_evaluation_uses_true_ceiling(self, predprey):
        population = evaluation_population(predprey)
        assert population.ceiling == 4
        assert population.n_agents == 2
        assert Curriculum(predprey, enabled=False).sample(np.random.default_rng(0)) == population

    def test_lbf_evaluation_keeps_configured_levels(self, lbf):
        assert Curriculum(lbf, enabled=False).sample(np.random.default_rng(0)).levels == (1, 2)

    def test_lbf_training_levels_capped_by_initial_max(self, lbf):
        rng = np.random.default_rng(3)
        curriculum = Curriculum(lbf)
        for _ in range(200):
            sample = curriculum.sample(rng)
            assert sample.ceiling <= 3
            assert max(sample.levels) <= 2
            lbf.reset(population=sample)
            assert lbf.pop.ceiling == sample.ceiling

    def test_puddle_draws_always_placeable(self, puddle):
        rng = np.random.default_rng(4)
        curriculum = Curriculum(puddle)
        for _ in range(200):
            puddle.reset(population=curriculum.sample(rng))
            assert puddle.invariant_violations() == []
