"""
PPO and MAPPO
=============

PPO: one shared actor-critic network, per-agent clipped surrogate, value loss
and entropy bonus. MAPPO: the same actor with a centralised critic fed either
the stacked observations of all agent slots (``concat_obs``) or the
environment's global state (``global_state``); its value is broadcast to every
agent. Steps where an agent is not alive never enter a loss.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ConfigError, NonFiniteLossError
from ..nn import NetworkSpec, ParameterSet
from ..pofsg import DUMMY_ACTION
from .presets import LearnerConfig

logger = logging.getLogger(__name__)

CRITIC_VARIANTS = {"mappo": "concat_obs", "mappo_state": "global_state"}


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, gamma: float, lam: float,
        mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and returns.

    ``rewards`` is (T, ...), ``values`` (T + 1, ...) with the bootstrap value
    last, ``dones`` (T, ...) or (T, B) broadcast over trailing agent axes. The
    recursion is cut at episode ends; masked entries come back as zero.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    while dones.ndim < rewards.ndim:
        dones = dones[..., None]
    steps = rewards.shape[0]
    if values.shape[0] != steps + 1:
        raise ValueError(f"values need {steps + 1} entries along time, got {values.shape[0]}")

    advantages = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in reversed(range(steps)):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * live * values[t + 1] - values[t]
        running = delta + gamma * lam * live * running
        advantages[t] = running
    returns = advantages + values[:-1]
    if mask is not None:
        advantages = np.where(mask, advantages, 0.0)
        returns = np.where(mask, returns, 0.0)
    return advantages, returns


def categorical_entropy(logits: torch.Tensor) -> torch.Tensor:
    log_probs = F.log_softmax(logits, dim=-1)
    return -(log_probs.exp() * log_probs).sum(dim=-1)


def clipped_surrogate(new_log_probs: torch.Tensor, old_log_probs: torch.Tensor, advantages: torch.Tensor,
                      clip_eps: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """Negated clipped objective (a loss) and the probability ratios."""
    ratio = torch.exp(new_log_probs - old_log_probs)
    unclipped = ratio * advantages
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    return -torch.min(unclipped, clipped).mean(), ratio


def build_critic_input_mappo(states: Optional[np.ndarray], obs: np.ndarray, variant: str,
                             grid_shape: Optional[Tuple[int, int, int]] = None) -> np.ndarray:
    """Centralised critic input for a batch.

    ``concat_obs`` stacks the (B, N, D) observations; with a ``grid_shape`` the
    agents' grids are stacked as channels first and their tails follow, so a
    conv critic sees N*C channels. ``global_state`` passes (B, S) states through.
    Dead slots are already zero in ``obs``.
    """
    if variant == "global_state":
        if states is None:
            raise ConfigError("global_state critic needs environment states")
        return np.asarray(states, dtype=np.float32)
    if variant != "concat_obs":
        raise ConfigError(f"unknown critic variant {variant!r}")
    obs = np.asarray(obs, dtype=np.float32)
    batch, n_agents, dim = obs.shape
    if grid_shape is None:
        return obs.reshape(batch, n_agents * dim)
    grid_size = int(np.prod(grid_shape))
    grids = obs[:, :, :grid_size].reshape(batch, n_agents * grid_size)
    tails = obs[:, :, grid_size:].reshape(batch, n_agents * (dim - grid_size))
    return np.concatenate([grids, tails], axis=1)


@dataclass
class Rollout:
    obs: List[np.ndarray] = field(default_factory=list)
    critic_inputs: List[np.ndarray] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)
    log_probs: List[np.ndarray] = field(default_factory=list)
    values: List[np.ndarray] = field(default_factory=list)
    rewards: List[np.ndarray] = field(default_factory=list)
    dones: List[np.ndarray] = field(default_factory=list)
    alive: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass
class ActionOutput:
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    critic_input: Optional[np.ndarray] = None


class PolicyGradientLearner:
    def __init__(self, actor_spec: NetworkSpec, n_agents: int, config: LearnerConfig,
                 critic_spec: Optional[NetworkSpec] = None, obs_grid_shape: Optional[Tuple[int, int, int]] = None,
                 total_updates: int = 0, device: str = "cpu"):
        if config.value_based:
            raise ConfigError(f"PolicyGradientLearner cannot run {config.algorithm!r}")
        self.config = config
        self.n_agents = n_agents
        self.device = device
        self.obs_grid_shape = obs_grid_shape
        self.variant = CRITIC_VARIANTS.get(config.algorithm)
        make = lambda spec: ParameterSet(spec, config.lr_init, config.lr_min, total_updates,
                                            config.max_grad_norm, device)
        if self.variant is None:
            if actor_spec.head != "actor_critic":
                raise ConfigError("ppo needs an actor_critic network")
            self.actor = make(actor_spec)
            self.critic = None
        else:
            if critic_spec is None or actor_spec.head != "policy" or critic_spec.head != "value":
                raise ConfigError(f"{config.algorithm} needs a policy network and a value network")
            self.actor = make(actor_spec)
            self.critic = make(critic_spec)
        self.rollout = Rollout()
        self.updates = 0
        self.skipped_minibatches = 0

    @property
    def networks(self) -> Dict[str, ParameterSet]:
        if self.critic is None:
            return {"actor_critic": self.actor}
        return {"actor": self.actor, "critic": self.critic}

    def load_networks(self, states: Dict[str, dict]) -> None:
        for name, ps in self.networks.items():
            ps.load_state_dict(states[name])

    def critic_input(self, obs: np.ndarray, states: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if self.variant is None:
            return None
        return build_critic_input_mappo(states, obs, self.variant, self.obs_grid_shape)

    def _policy(self, obs: np.ndarray, critic_input: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        batch, n_agents, dim = obs.shape
        flat = obs.reshape(batch * n_agents, dim)
        with torch.no_grad():
            if self.critic is None:
                logits, values = self.actor.forward(flat)
                values = values.reshape(batch, n_agents)
            else:
                logits = self.actor.forward(flat)
                central = self.critic.forward(critic_input)
                values = central[:, None].expand(batch, n_agents)
        return logits.reshape(batch, n_agents, -1).cpu().numpy(), values.cpu().numpy()

    def act(self, obs: np.ndarray, alive: np.ndarray, rng: np.random.Generator,
            states: Optional[np.ndarray] = None, greedy: bool = False) -> ActionOutput:
        obs = np.asarray(obs, dtype=np.float32)
        critic_input = self.critic_input(obs, states)
        logits, values = self._policy(obs, critic_input)
        log_probs_all = logits - np.logaddexp.reduce(logits, axis=-1, keepdims=True)
        if greedy:
            actions = np.argmax(logits, axis=-1)
        else:
            cdf = np.cumsum(np.exp(log_probs_all), axis=-1)
            u = rng.random(cdf.shape[:-1] + (1,))
            actions = np.minimum((cdf < u * cdf[..., -1:]).sum(axis=-1), logits.shape[-1] - 1)
        log_probs = np.take_along_axis(log_probs_all, actions[..., None], axis=-1)[..., 0]
        actions = np.where(alive, actions, DUMMY_ACTION).astype(np.int64)
        log_probs = np.where(alive, log_probs, 0.0)
        return ActionOutput(actions, log_probs, values, critic_input)

    def greedy(self, obs: np.ndarray, alive: np.ndarray, states: Optional[np.ndarray] = None) -> np.ndarray:
        return self.act(obs, alive, np.random.default_rng(0), states=states, greedy=True).actions

    def store(self, obs: np.ndarray, output: ActionOutput, rewards: np.ndarray, dones: np.ndarray,
              alive: np.ndarray) -> None:
        self.rollout.obs.append(np.asarray(obs, dtype=np.float32))
        if output.critic_input is not None:
            self.rollout.critic_inputs.append(output.critic_input)
        self.rollout.actions.append(output.actions)
        self.rollout.log_probs.append(output.log_probs)
        self.rollout.values.append(output.values)
        self.rollout.rewards.append(np.asarray(rewards))
        self.rollout.dones.append(np.asarray(dones))
        self.rollout.alive.append(np.asarray(alive, dtype=bool))

    def ready(self) -> bool:
        return len(self.rollout) >= self.config.rollout_steps

    def update(self, last_obs: np.ndarray, last_states: Optional[np.ndarray] = None) -> Dict[str, float]:
        """One PPO update over the stored rollout, bootstrapping from ``last_obs``."""
        if len(self.rollout) == 0:
            return {}
        last_obs = np.asarray(last_obs, dtype=np.float32)
        _, last_values = self._policy(last_obs, self.critic_input(last_obs, last_states))
        ro = self.rollout
        alive = np.stack(ro.alive)
        values = np.concatenate([np.stack(ro.values), last_values[None]])
        advantages, returns = gae(np.stack(ro.rewards), values, np.stack(ro.dones), self.config.gamma,
                                  self.config.gae_lambda, mask=alive)

        obs = np.stack(ro.obs)
        entries = np.argwhere(alive)  # (K, 3) of (t, b, i)
        t, b, i = entries.T
        adv = advantages[t, b, i]
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        batch = {
            "obs": obs[t, b, i],
            "actions": np.stack(ro.actions)[t, b, i],
            "log_probs": np.stack(ro.log_probs)[t, b, i],
            "advantages": adv,
            "returns": returns[t, b, i],
        }
        stats = self._update_actor(batch)
        if self.critic is not None:
            counts = alive.sum(axis=-1)
            row_returns = returns.sum(axis=-1) / np.maximum(counts, 1)
            rows = np.argwhere(counts > 0)
            stats.update(self._update_critic(np.stack(ro.critic_inputs)[rows[:, 0], rows[:, 1]],
                                             row_returns[rows[:, 0], rows[:, 1]]))
        self.rollout = Rollout()
        self.updates += 1
        return stats

    def _minibatches(self, size: int) -> List[np.ndarray]:
        perm = np.random.default_rng(self.updates).permutation(size)
        return [mb for mb in np.array_split(perm, min(self.config.minibatches, size)) if len(mb)]

    def _update_actor(self, batch: Dict[str, np.ndarray]) -> Dict[str, float]:
        cfg = self.config
        tensors = {k: self.actor.as_tensor(v) for k, v in batch.items()}
        tensors["actions"] = tensors["actions"].long()
        losses, entropies = [], []
        for _ in range(cfg.update_epochs):
            for mb in self._minibatches(len(batch["advantages"])):
                idx = torch.as_tensor(mb)
                out = self.actor.forward(tensors["obs"][idx], training=True)
                logits, values = out if self.critic is None else (out, None)
                log_probs = F.log_softmax(logits, dim=-1).gather(-1, tensors["actions"][idx, None]).squeeze(-1)
                policy_loss, ratio = clipped_surrogate(log_probs, tensors["log_probs"][idx],
                                                       tensors["advantages"][idx], cfg.clip_eps)
                if not torch.isfinite(ratio).all():
                    self.skipped_minibatches += 1
                    logger.warning("skipping minibatch with non-finite probability ratio (update %d)", self.updates)
                    continue
                entropy = categorical_entropy(logits).mean()
                loss = policy_loss - cfg.ent_coef * entropy
                if values is not None:
                    loss = loss + cfg.vf_coef * ((values - tensors["returns"][idx]) ** 2).mean()
                try:
                    self.actor.update(loss)
                except NonFiniteLossError:
                    self.skipped_minibatches += 1
                    logger.warning("skipping minibatch with non-finite loss (update %d)", self.updates)
                    continue
                losses.append(loss.item())
                entropies.append(entropy.item())
        return {"policy_loss": float(np.mean(losses)) if losses else float("nan"),
                "entropy": float(np.mean(entropies)) if entropies else float("nan")}

    def _update_critic(self, inputs: np.ndarray, targets: np.ndarray) -> Dict[str, float]:
        x = self.critic.as_tensor(inputs)
        y = self.critic.as_tensor(targets)
        losses = []
        for _ in range(self.config.update_epochs):
            for mb in self._minibatches(len(targets)):
                idx = torch.as_tensor(mb)
                loss = self.config.vf_coef * ((self.critic.forward(x[idx], training=True) - y[idx]) ** 2).mean()
                self.critic.update(loss)
                losses.append(loss.item())
        return {"value_loss": float(np.mean(losses)) if losses else float("nan")}
