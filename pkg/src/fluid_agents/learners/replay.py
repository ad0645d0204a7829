"""Uniform circular replay storage for the value-based learners."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass
class ReplayBatch:
    obs: np.ndarray         # (B, N, D)
    actions: np.ndarray     # (B, N), DUMMY_ACTION for dead agents
    rewards: np.ndarray     # (B, N)
    next_obs: np.ndarray    # (B, N, D)
    dones: np.ndarray       # (B,)
    alive_pre: np.ndarray   # (B, N)
    alive_post: np.ndarray  # (B, N)

    def __len__(self) -> int:
        return len(self.dones)


class ReplayBuffer:
    def __init__(self, capacity: int, n_agents: int, obs_dim: int):
        if capacity < 1:
            raise ConfigError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.obs = np.zeros((capacity, n_agents, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, n_agents, obs_dim), dtype=np.float32)
        self.actions = np.zeros((capacity, n_agents), dtype=np.int64)
        self.rewards = np.zeros((capacity, n_agents), dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=bool)
        self.alive_pre = np.zeros((capacity, n_agents), dtype=bool)
        self.alive_post = np.zeros((capacity, n_agents), dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, actions, rewards, next_obs, dones, alive_pre, alive_post) -> None:
        """Append a batch of transitions (leading axis = transitions)."""
        count = len(dones)
        idx = (self.cursor + np.arange(count)) % self.capacity
        self.obs[idx] = obs
        self.actions[idx] = actions
        # Dead agents never carry reward into the buffer.
        self.rewards[idx] = np.where(alive_pre, rewards, 0.0)
        self.next_obs[idx] = next_obs
        self.dones[idx] = dones
        self.alive_pre[idx] = alive_pre
        self.alive_post[idx] = alive_post
        self.cursor = int((self.cursor + count) % self.capacity)
        self.size = min(self.size + count, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> ReplayBatch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return ReplayBatch(
            obs=self.obs[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_obs=self.next_obs[idx],
            dones=self.dones[idx],
            alive_pre=self.alive_pre[idx],
            alive_post=self.alive_post[idx],
        )
