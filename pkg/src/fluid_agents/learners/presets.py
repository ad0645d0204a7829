"""
Training configuration and named presets
========================================

``TrainConfig`` is the whole experiment description persisted as
``config.json`` in every run directory. Presets hold the selected
hyperparameters per environment and algorithm, scaled to desk budgets (64
parallel environments instead of thousands, shorter runs, smaller replay
batches). Any field can be overridden with ``section.key=value`` strings.
"""

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from ..envs import env_config
from ..errors import ConfigError
from ..settings import DEVICE

ALGORITHMS = ("iql", "vdn", "ppo", "mappo", "mappo_state")
VALUE_BASED = ("iql", "vdn")


@dataclass
class LearnerConfig:
    algorithm: str = "vdn"
    lr_init: float = 1e-3
    lr_min: Optional[float] = 1e-4
    gamma: float = 0.99
    max_grad_norm: float = 1.0
    rollout_steps: int = 1
    num_envs: int = 64
    parameter_sharing: bool = True
    # value-based
    replay_ratio: int = 16
    batch_size: int = 256
    buffer_size: int = 100_000
    eps_greedy: float = 0.1
    max_eps_spawn: float = 0.05
    target_period: int = 100
    # policy-gradient
    gae_lambda: float = 0.9
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.05
    update_epochs: int = 5
    minibatches: int = 20

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.num_envs < 1 or self.rollout_steps < 1:
            raise ConfigError("num_envs and rollout_steps must be >= 1")
        if self.lr_init <= 0 or (self.lr_min is not None and self.lr_min <= 0):
            raise ConfigError("learning rates must be positive")

    @property
    def value_based(self) -> bool:
        return self.algorithm in VALUE_BASED


@dataclass
class TrainConfig:
    preset: str = ""
    env: str = "predator_prey"
    env_config: Dict[str, Any] = field(default_factory=dict)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    steps: int = 5_000
    seed: int = 0
    n_checkpoints: int = 100
    eval_episodes: int = 100
    curriculum: bool = True
    workers: int = 0
    device: str = DEVICE

    def __post_init__(self):
        # Validates env kind and keys.
        env_config(self.env, self.env_config)
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.n_checkpoints < 1:
            raise ConfigError(f"n_checkpoints must be >= 1, got {self.n_checkpoints}")
        if self.eval_episodes < 0:
            raise ConfigError(f"eval_episodes must be >= 0, got {self.eval_episodes}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


def config_from_dict(data: Mapping[str, Any]) -> TrainConfig:
    data = dict(data)
    _reject_unknown(data, TrainConfig, "config")
    learner = dict(data.pop("learner", {}))
    _reject_unknown(learner, LearnerConfig, "learner")
    return TrainConfig(learner=LearnerConfig(**learner), **data)


def load_config(path: Union[str, Path]) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return config_from_dict(data)


def _reject_unknown(data: Mapping[str, Any], cls, where: str) -> None:
    unknown = sorted(set(data) - {f.name for f in fields(cls)})
    if unknown:
        raise ConfigError(f"unknown {where} keys: {unknown}")


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: TrainConfig, overrides: Mapping[str, Any]) -> TrainConfig:
    """Return a copy with ``key=value`` overrides applied.

    Keys are top-level fields (``steps``), ``learner.<field>`` or ``env.<field>``;
    string values are parsed as JSON when possible.
    """
    data = config.to_dict()
    for key, value in overrides.items():
        if isinstance(value, str):
            value = _parse_value(value)
        section, _, name = key.partition(".")
        if not name:
            data[section] = value
        elif section == "learner":
            data["learner"][name] = value
        elif section in ("env", "env_config"):
            data["env_config"][name] = value
        else:
            raise ConfigError(f"unknown config section {section!r} in {key!r}")
    return config_from_dict(data)


def parse_overrides(items, parse_values: bool = False) -> Dict[str, Any]:
    overrides = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        value = value.strip()
        overrides[key.strip()] = _parse_value(value) if parse_values else value
    return overrides


# ---------------------------------------------------------------- presets

PREDPREY_ENV = {
    "grid_size": 9,
    "n_prey": 8,
    "n_max": 10,
    "initial_agents": 2,
    "prey_capture_reward": 5.0,
    "c_spawn": 10.0,
    "c_step": 0.01,
    "payoff": "SIP",
}

LBF_ENV = {
    "grid_size": 8,
    "food_levels": (2, 3, 4, 5),
    "initial_levels": (1, 2),
    "n_max": 4,
    "c_spawn": 1.0,
    "c_step": 0.025,
}

PUDDLE_ENV = {
    "n_max": 4,
    "initial_agents": 1,
    "c_spawn": 1.0,
    "c_step": 0.1,
}

_PREDPREY_VALUE = dict(lr_init=1e-3, lr_min=1e-4, gamma=0.99, max_grad_norm=1.0, rollout_steps=1, replay_ratio=16,
                       eps_greedy=0.1)
_PREDPREY_PG = dict(lr_init=1e-4, lr_min=None, gamma=0.99, max_grad_norm=0.5, rollout_steps=20, gae_lambda=0.9,
                    clip_eps=0.2, vf_coef=0.5, ent_coef=0.05, update_epochs=5, minibatches=20)
_LBF_PG = dict(lr_init=1e-3, lr_min=None, max_grad_norm=0.5, rollout_steps=20, clip_eps=0.2, vf_coef=0.5,
               ent_coef=0.01, update_epochs=5, minibatches=5)

PRESETS: Dict[str, TrainConfig] = {
    "predprey_iql": TrainConfig(env="predator_prey", env_config=dict(PREDPREY_ENV),
                                learner=LearnerConfig(algorithm="iql", max_eps_spawn=0.1, **_PREDPREY_VALUE)),
    "predprey_vdn": TrainConfig(env="predator_prey", env_config=dict(PREDPREY_ENV),
                                learner=LearnerConfig(algorithm="vdn", max_eps_spawn=0.05, **_PREDPREY_VALUE)),
    "predprey_ppo": TrainConfig(env="predator_prey", env_config=dict(PREDPREY_ENV),
                                learner=LearnerConfig(algorithm="ppo", **_PREDPREY_PG)),
    "predprey_mappo": TrainConfig(env="predator_prey", env_config=dict(PREDPREY_ENV),
                                  learner=LearnerConfig(algorithm="mappo", **_PREDPREY_PG)),
    "predprey_mappo_state": TrainConfig(env="predator_prey", env_config=dict(PREDPREY_ENV),
                                        learner=LearnerConfig(algorithm="mappo_state", **_PREDPREY_PG)),
    "predprey_ablation_vdn": TrainConfig(
        env="predator_prey",
        env_config=dict(PREDPREY_ENV, prey_counts=(4, 12), c_spawn=2.0),
        learner=LearnerConfig(algorithm="vdn", max_eps_spawn=0.05, **_PREDPREY_VALUE),
        steps=20_000,
    ),
    "predprey_fixed_vdn": TrainConfig(
        env="predator_prey",
        env_config=dict(PREDPREY_ENV, prey_counts=(4, 12), c_spawn=2.0, allow_spawn=False),
        learner=LearnerConfig(algorithm="vdn", max_eps_spawn=0.0, **_PREDPREY_VALUE),
        steps=20_000,
        curriculum=False,
    ),
    "lbf_iql": TrainConfig(env="lbf", env_config=dict(LBF_ENV),
                           learner=LearnerConfig(algorithm="iql", lr_init=1e-3, lr_min=1e-4, gamma=0.9,
                                                 eps_greedy=0.1, max_eps_spawn=0.1, batch_size=512)),
    "lbf_vdn": TrainConfig(env="lbf", env_config=dict(LBF_ENV),
                           learner=LearnerConfig(algorithm="vdn", lr_init=5e-4, lr_min=1e-4, gamma=0.9,
                                                 eps_greedy=0.2, max_eps_spawn=0.1, batch_size=512),
                           steps=10_000),
    "lbf_ppo": TrainConfig(env="lbf", env_config=dict(LBF_ENV),
                           learner=LearnerConfig(algorithm="ppo", gamma=0.9, gae_lambda=0.95, **_LBF_PG)),
    "lbf_mappo": TrainConfig(env="lbf", env_config=dict(LBF_ENV),
                             learner=LearnerConfig(algorithm="mappo", gamma=0.99, gae_lambda=0.9, **_LBF_PG)),
    "puddle_vdn_nosharing": TrainConfig(
        env="puddle_bridge",
        env_config=dict(PUDDLE_ENV),
        learner=LearnerConfig(algorithm="vdn", lr_init=1e-3, lr_min=1e-4, gamma=0.95, target_period=100,
                              max_grad_norm=1.0, rollout_steps=1, eps_greedy=0.3, max_eps_spawn=0.05,
                              replay_ratio=16, parameter_sharing=False),
        steps=10_000,
    ),
}

# Documented search spaces; never run automatically.
SEARCH_SPACES: Dict[str, Dict[str, Dict[str, tuple]]] = {
    "predator_prey": {
        "value_based": {
            "gamma": (0.9, 0.99, 0.995),
            "lr_init": (1e-4, 5e-4, 1e-3),
            "eps_greedy": (0.1, 0.2, 0.3),
            "max_eps_spawn": (0.05, 0.1, 0.15, 0.2),
        },
        "policy_gradient": {
            "gamma": (0.9, 0.99),
            "lr_init": (1e-4, 5e-4, 1e-3),
            "gae_lambda": (0.9, 0.95),
            "ent_coef": (0.01, 0.05, 0.1),
            "clip_eps": (0.05, 0.1, 0.15, 0.2),
        },
    },
    "lbf": {
        "value_based": {
            "gamma": (0.9, 0.99, 0.995),
            "lr_init": (1e-4, 5e-4, 1e-3),
            "eps_greedy": (0.1, 0.2, 0.3),
            "max_eps_spawn": (0.05, 0.1, 0.15, 0.2),
        },
        "policy_gradient": {
            "gamma": (0.9, 0.99),
            "lr_init": (1e-4, 5e-4, 1e-3),
            "gae_lambda": (0.9, 0.95),
            "ent_coef": (0.01, 0.05, 0.1),
            "clip_eps": (0.05, 0.1, 0.15, 0.2),
        },
    },
}


def get_preset(name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, choose from {sorted(PRESETS)}")
    config = copy.deepcopy(PRESETS[name])
    config.preset = name
    return config
