"""Environment registry: ``make_env("predator_prey" | "lbf" | "puddle_bridge", config, seed)``."""

from dataclasses import fields, is_dataclass
from typing import Any, Dict, Mapping, Optional, Tuple, Type, Union

from ..errors import ConfigError
from ..pofsg import FluidEnv
from .lbf import LbfConfig, LevelBasedForagingEnv
from .predator_prey import PredatorPreyConfig, PredatorPreyEnv
from .puddle_bridge import PuddleBridgeConfig, PuddleBridgeEnv

ENV_REGISTRY: Dict[str, Tuple[Type[FluidEnv], type]] = {
    "predator_prey": (PredatorPreyEnv, PredatorPreyConfig),
    "lbf": (LevelBasedForagingEnv, LbfConfig),
    "puddle_bridge": (PuddleBridgeEnv, PuddleBridgeConfig),
}


def env_config(kind: str, values: Optional[Mapping[str, Any]] = None):
    """Build the config dataclass for ``kind``; unknown keys are rejected."""
    if kind not in ENV_REGISTRY:
        raise ConfigError(f"unknown environment {kind!r}, choose from {sorted(ENV_REGISTRY)}")
    config_cls = ENV_REGISTRY[kind][1]
    values = dict(values or {})
    known = {f.name for f in fields(config_cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown {kind} config keys: {unknown}")
    for key, value in values.items():
        # JSON gives lists where the dataclasses hold tuples.
        if isinstance(value, list):
            values[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return config_cls(**values)


def make_env(kind: str, config: Union[Mapping[str, Any], Any, None] = None, seed: Optional[int] = None) -> FluidEnv:
    if kind not in ENV_REGISTRY:
        raise ConfigError(f"unknown environment {kind!r}, choose from {sorted(ENV_REGISTRY)}")
    env_cls, config_cls = ENV_REGISTRY[kind]
    if config is None or not is_dataclass(config):
        config = env_config(kind, config)
    elif not isinstance(config, config_cls):
        raise ConfigError(f"{kind} expects {config_cls.__name__}, got {type(config).__name__}")
    return env_cls(config, seed=seed)


__all__ = [
    "ENV_REGISTRY",
    "LbfConfig",
    "LevelBasedForagingEnv",
    "PredatorPreyConfig",
    "PredatorPreyEnv",
    "PuddleBridgeConfig",
    "PuddleBridgeEnv",
    "env_config",
    "make_env",
]
