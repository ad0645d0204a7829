"""Learner factory: picks the network architectures for an environment and builds the learner."""

from typing import Dict, Union

from ..errors import ConfigError
from ..nn import (
    NetworkSpec,
    lbf_actor_critic_spec,
    lbf_central_critic_spec,
    lbf_policy_spec,
    lbf_q_spec,
    predprey_actor_critic_spec,
    predprey_central_critic_spec,
    predprey_policy_spec,
    predprey_q_spec,
    puddle_q_spec,
)
from ..pofsg import FluidEnv
from .policy_gradient import PolicyGradientLearner
from .presets import ALGORITHMS, VALUE_BASED, LearnerConfig, TrainConfig, get_preset
from .value_based import ValueLearner

Learner = Union[ValueLearner, PolicyGradientLearner]


def network_specs(env: FluidEnv, algorithm: str) -> Dict[str, NetworkSpec]:
    """Architectures keyed by role: ``q``, ``actor_critic``, or ``actor`` plus ``critic``."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    kind, obs_dim, n_actions = env.kind, env.obs_dim, env.n_actions

    if kind == "predator_prey":
        grid = env.grid_shape
        if algorithm in VALUE_BASED:
            return {"q": predprey_q_spec(obs_dim, grid, n_actions)}
        if algorithm == "ppo":
            return {"actor_critic": predprey_actor_critic_spec(obs_dim, grid, n_actions)}
        if algorithm == "mappo":
            c, h, w = grid
            critic_grid = (c * env.n_max, h, w)
            critic = predprey_central_critic_spec(obs_dim * env.n_max, critic_grid, "predprey_concat_critic")
        else:
            critic = predprey_central_critic_spec(env.global_state_dim, env.state_grid_shape,
                                                  "predprey_state_critic")
        return {"actor": predprey_policy_spec(obs_dim, grid, n_actions), "critic": critic}

    if kind == "lbf":
        if algorithm in VALUE_BASED:
            return {"q": lbf_q_spec(obs_dim, n_actions)}
        if algorithm == "ppo":
            return {"actor_critic": lbf_actor_critic_spec(obs_dim, n_actions)}
        critic_dim = obs_dim * env.n_max if algorithm == "mappo" else env.global_state_dim
        return {"actor": lbf_policy_spec(obs_dim, n_actions), "critic": lbf_central_critic_spec(critic_dim)}

    if kind == "puddle_bridge":
        if algorithm not in VALUE_BASED:
            raise ConfigError(f"puddle_bridge only runs value-based learners, got {algorithm!r}")
        return {"q": puddle_q_spec(obs_dim, env.grid_shape, n_actions)}

    raise ConfigError(f"no architectures for environment {kind!r}")


def make_learner(config: TrainConfig, env: FluidEnv, total_updates: int = 0) -> Learner:
    learner_config = config.learner
    specs = network_specs(env, learner_config.algorithm)
    if learner_config.value_based:
        return ValueLearner(specs["q"], env.n_max, env.spawn_action, learner_config,
                            total_updates=total_updates, device=config.device)
    if "actor_critic" in specs:
        return PolicyGradientLearner(specs["actor_critic"], env.n_max, learner_config,
                                     total_updates=total_updates, device=config.device)
    return PolicyGradientLearner(specs["actor"], env.n_max, learner_config, critic_spec=specs["critic"],
                                 obs_grid_shape=getattr(env, "grid_shape", None),
                                 total_updates=total_updates, device=config.device)


__all__ = [
    "LearnerConfig",
    "Learner",
    "PolicyGradientLearner",
    "TrainConfig",
    "ValueLearner",
    "get_preset",
    "make_learner",
    "network_specs",
]
