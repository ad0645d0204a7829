"""
Independent Q-learning and value decomposition
==============================================

Both learners use dueling Q-networks, uniform replay and a periodically
refreshed target network. IQL regresses every pre-step-alive agent's Q onto
its own TD target. VDN regresses the sum of Q over pre-step-alive agents onto
the joint reward plus the discounted sum of per-agent maxima over post-step-alive
agents. Dead slots are masked out of both sides with ``torch.where``.
"""

import logging
from typing import Dict, List, Sequence, Union

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, NonFiniteLossError
from ..nn import NetworkSpec, ParameterSet
from ..pofsg import DUMMY_ACTION
from .exploration import eps_greedy_actions
from .presets import LearnerConfig
from .replay import ReplayBatch

logger = logging.getLogger(__name__)

QFunction = Union[nn.Module, Sequence[nn.Module]]


def q_values(networks: QFunction, obs: torch.Tensor) -> torch.Tensor:
    """Q for every agent slot: (B, N, D) -> (B, N, A). A sequence means one network per slot."""
    batch, n_agents, dim = obs.shape
    if isinstance(networks, nn.Module):
        return networks(obs.reshape(batch * n_agents, dim)).reshape(batch, n_agents, -1)
    if len(networks) != n_agents:
        raise ConfigError(f"{len(networks)} networks for {n_agents} agent slots")
    return torch.stack([net(obs[:, i]) for i, net in enumerate(networks)], dim=1)


def _masked_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    err = torch.where(mask, (pred - target) ** 2, torch.zeros_like(pred))
    return err.sum() / mask.sum().clamp(min=1)


def _td_terms(online: QFunction, target: QFunction, batch: Dict[str, torch.Tensor]):
    alive_pre, alive_post = batch["alive_pre"], batch["alive_post"]
    q = q_values(online, batch["obs"])
    taken = q.gather(-1, batch["actions"].clamp(min=0).unsqueeze(-1)).squeeze(-1)
    taken = torch.where(alive_pre, taken, torch.zeros_like(taken))
    with torch.no_grad():
        next_max = q_values(target, batch["next_obs"]).max(dim=-1).values
        next_max = torch.where(alive_post, next_max, torch.zeros_like(next_max))
    rewards = torch.where(alive_pre, batch["rewards"], torch.zeros_like(batch["rewards"]))
    not_done = 1.0 - batch["dones"]
    return taken, rewards, next_max, not_done


def td_loss_iql(online: QFunction, target: QFunction, batch: Dict[str, torch.Tensor], gamma: float) -> torch.Tensor:
    taken, rewards, next_max, not_done = _td_terms(online, target, batch)
    td_target = rewards + gamma * not_done.unsqueeze(-1) * next_max
    return _masked_mse(taken, td_target, batch["alive_pre"])


def td_loss_vdn(online: QFunction, target: QFunction, batch: Dict[str, torch.Tensor], gamma: float) -> torch.Tensor:
    taken, rewards, next_max, not_done = _td_terms(online, target, batch)
    q_tot = taken.sum(dim=1)
    td_target = rewards.sum(dim=1) + gamma * not_done * next_max.sum(dim=1)
    return _masked_mse(q_tot, td_target, torch.ones_like(q_tot, dtype=torch.bool))


TD_LOSSES = {"iql": td_loss_iql, "vdn": td_loss_vdn}


def batch_to_tensors(batch: ReplayBatch, dtype: torch.dtype = torch.float32, device: str = "cpu") -> Dict[str, torch.Tensor]:
    return {
        "obs": torch.as_tensor(batch.obs, dtype=dtype, device=device),
        "actions": torch.as_tensor(batch.actions, dtype=torch.int64, device=device),
        "rewards": torch.as_tensor(batch.rewards, dtype=dtype, device=device),
        "next_obs": torch.as_tensor(batch.next_obs, dtype=dtype, device=device),
        "dones": torch.as_tensor(batch.dones, dtype=dtype, device=device),
        "alive_pre": torch.as_tensor(batch.alive_pre, dtype=torch.bool, device=device),
        "alive_post": torch.as_tensor(batch.alive_post, dtype=torch.bool, device=device),
    }


class ValueLearner:
    """IQL or VDN over a fixed-population batch of ``n_agents`` slots.

    With ``parameter_sharing`` one ParameterSet serves every slot; otherwise
    slot i has its own network, optimiser and target.
    """

    def __init__(self, spec: NetworkSpec, n_agents: int, spawn_action: int, config: LearnerConfig,
                 total_updates: int = 0, device: str = "cpu"):
        if not config.value_based:
            raise ConfigError(f"ValueLearner cannot run {config.algorithm!r}")
        self.spec = spec
        self.n_agents = n_agents
        self.spawn_action = spawn_action
        self.config = config
        self.device = device
        self.loss_fn = TD_LOSSES[config.algorithm]
        n_sets = 1 if config.parameter_sharing else n_agents
        self.params: List[ParameterSet] = [
            ParameterSet(spec, config.lr_init, config.lr_min, total_updates, config.max_grad_norm, device)
            for _ in range(n_sets)
        ]
        self.targets = [ps.snapshot() for ps in self.params]
        self.updates = 0
        self.target_refreshes = 0

    @property
    def networks(self) -> Dict[str, ParameterSet]:
        if self.config.parameter_sharing:
            return {"q": self.params[0]}
        return {f"q_{i + 1}": ps for i, ps in enumerate(self.params)}

    def _online(self) -> QFunction:
        nets = [ps.network for ps in self.params]
        return nets[0] if self.config.parameter_sharing else nets

    def _target(self) -> QFunction:
        return self.targets[0] if self.config.parameter_sharing else self.targets

    def q(self, obs: np.ndarray) -> np.ndarray:
        """Greedy-mode Q values, (B, N, D) -> (B, N, A)."""
        for ps in self.params:
            ps.network.eval()
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(obs), dtype=torch.float32, device=self.device)
            return q_values(self._online(), x).cpu().numpy()

    def act(self, obs: np.ndarray, alive: np.ndarray, eps: float, eps_spawn: float,
            rng: np.random.Generator) -> np.ndarray:
        return eps_greedy_actions(self.q(obs), alive, eps, eps_spawn, self.spawn_action, rng)

    def greedy(self, obs: np.ndarray, alive: np.ndarray) -> np.ndarray:
        actions = np.argmax(self.q(obs), axis=-1)
        return np.where(alive, actions, DUMMY_ACTION).astype(np.int64)

    def loss(self, batch: ReplayBatch) -> torch.Tensor:
        for ps in self.params:
            ps.network.train()
        return self.loss_fn(self._online(), self._target(), batch_to_tensors(batch, device=self.device),
                            self.config.gamma)

    def update(self, batch: ReplayBatch) -> float:
        loss = self.loss(batch)
        if not torch.isfinite(loss):
            raise NonFiniteLossError(f"{self.config.algorithm} loss is {loss.item()} at update {self.updates}")
        for ps in self.params:
            ps.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        for ps in self.params:
            ps.optimize_step()
        self.updates += 1
        if self.updates % self.config.target_period == 0:
            self.refresh_targets()
        return float(loss.item())

    def refresh_targets(self) -> None:
        self.targets = [ps.snapshot() for ps in self.params]
        self.target_refreshes += 1
        logger.debug("target networks refreshed after %d updates", self.updates)

    def load_networks(self, states: Dict[str, dict]) -> None:
        for name, ps in self.networks.items():
            ps.load_state_dict(states[name])
        self.refresh_targets()
