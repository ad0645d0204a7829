"""
Networks, parameter sets and checkpoints
========================================

Every architecture is described by a ``NetworkSpec``: an encoder (optional 3x3
VALID conv stack over the spatial part of the input, then a dense trunk) and
one head type (dueling Q, actor-critic or scalar value). Inputs are flat
vectors; when the spec has a ``grid_shape`` the first C*H*W entries are the
channel-major grid and the rest is a tail of scalar features.

``ParameterSet`` owns one network with its Adam state, the linear learning
rate schedule and the update counter.
"""

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from torch import nn
from torch.optim.lr_scheduler import LambdaLR

from .errors import ConfigError, NonFiniteLossError, ShapeMismatchError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

HEAD_KINDS = ("q", "actor_critic", "policy", "value")


@dataclass
class NetworkSpec:
    name: str
    head: str
    input_dim: int
    n_actions: int = 0
    grid_shape: Optional[Tuple[int, int, int]] = None
    conv_channels: Tuple[int, ...] = ()
    hidden: Tuple[int, ...] = (128,)
    head_hidden: Tuple[int, ...] = ()
    layer_norm: bool = False
    dropout: float = 0.0
    dueling: bool = False
    orthogonal_heads: bool = False

    def __post_init__(self):
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"{self.name}: head must be one of {HEAD_KINDS}, got {self.head!r}")
        if self.head != "value" and self.n_actions < 1:
            raise ConfigError(f"{self.name}: a {self.head} head needs n_actions >= 1")
        if self.grid_shape is not None:
            self.grid_shape = tuple(int(x) for x in self.grid_shape)
            if self.grid_size > self.input_dim:
                raise ShapeMismatchError(
                    f"{self.name}: grid {self.grid_shape} is larger than the input ({self.input_dim})"
                )
        self.conv_channels = tuple(self.conv_channels)
        self.hidden = tuple(self.hidden)
        self.head_hidden = tuple(self.head_hidden)

    @property
    def grid_size(self) -> int:
        if self.grid_shape is None:
            return 0
        c, h, w = self.grid_shape
        return c * h * w

    @property
    def tail_dim(self) -> int:
        return self.input_dim - self.grid_size

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkSpec":
        data = dict(data)
        if data.get("grid_shape") is not None:
            data["grid_shape"] = tuple(data["grid_shape"])
        return cls(**data)


# ---------------------------------------------------------------- builders

def predprey_q_spec(obs_dim: int, grid_shape: Tuple[int, int, int], n_actions: int) -> NetworkSpec:
    return NetworkSpec("predprey_q", "q", obs_dim, n_actions, grid_shape, conv_channels=(8, 16),
                       hidden=(128, 64), dueling=True)


def predprey_actor_critic_spec(obs_dim: int, grid_shape: Tuple[int, int, int], n_actions: int) -> NetworkSpec:
    return NetworkSpec("predprey_actor_critic", "actor_critic", obs_dim, n_actions, grid_shape,
                       conv_channels=(8, 16), hidden=(128,), head_hidden=(64,), orthogonal_heads=True)


def predprey_central_critic_spec(input_dim: int, grid_shape: Tuple[int, int, int], name: str) -> NetworkSpec:
    return NetworkSpec(name, "value", input_dim, 0, grid_shape, conv_channels=(16, 16),
                       hidden=(128, 64), orthogonal_heads=True)


def lbf_q_spec(obs_dim: int, n_actions: int) -> NetworkSpec:
    return NetworkSpec("lbf_q", "q", obs_dim, n_actions, hidden=(128, 256, 256), layer_norm=True,
                       dropout=0.1, dueling=True)


def lbf_actor_critic_spec(obs_dim: int, n_actions: int) -> NetworkSpec:
    return NetworkSpec("lbf_actor_critic", "actor_critic", obs_dim, n_actions, hidden=(64, 128, 256, 128),
                       orthogonal_heads=True)


def predprey_policy_spec(obs_dim: int, grid_shape: Tuple[int, int, int], n_actions: int) -> NetworkSpec:
    return NetworkSpec("predprey_policy", "policy", obs_dim, n_actions, grid_shape, conv_channels=(8, 16),
                       hidden=(128,), head_hidden=(64,), orthogonal_heads=True)


def lbf_policy_spec(obs_dim: int, n_actions: int) -> NetworkSpec:
    return NetworkSpec("lbf_policy", "policy", obs_dim, n_actions, hidden=(64, 128, 256, 128),
                       orthogonal_heads=True)


def lbf_central_critic_spec(input_dim: int) -> NetworkSpec:
    return NetworkSpec("lbf_central_critic", "value", input_dim, hidden=(64, 128, 256, 128),
                       orthogonal_heads=True)


def puddle_q_spec(obs_dim: int, grid_shape: Tuple[int, int, int], n_actions: int) -> NetworkSpec:
    return NetworkSpec("puddle_q", "q", obs_dim, n_actions, grid_shape, conv_channels=(8, 16),
                       hidden=(128, 64), dueling=True)


# ------------------------------------------------------------------ modules

def _he_init(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Conv2d)):
        nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
        nn.init.zeros_(module.bias)


def _orthogonal(layer: nn.Linear, gain: float) -> nn.Linear:
    nn.init.orthogonal_(layer.weight, gain=gain)
    nn.init.zeros_(layer.bias)
    return layer


class Encoder(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        fused = spec.tail_dim
        if spec.grid_shape is not None:
            channels, height, width = spec.grid_shape
            layers: List[nn.Module] = []
            for out_channels in spec.conv_channels:
                layers += [nn.Conv2d(channels, out_channels, kernel_size=3, stride=1, padding=0), nn.ReLU()]
                channels = out_channels
                height, width = height - 2, width - 2
            if height < 1 or width < 1:
                raise ShapeMismatchError(f"{spec.name}: grid {spec.grid_shape} too small for "
                                         f"{len(spec.conv_channels)} 3x3 conv layers")
            self.conv = nn.Sequential(*layers, nn.Flatten())
            fused += channels * height * width
        else:
            self.conv = None

        trunk: List[nn.Module] = []
        width_in = fused
        for width_out in spec.hidden:
            trunk += [nn.Linear(width_in, width_out), nn.ReLU()]
            if spec.layer_norm:
                trunk.append(nn.LayerNorm(width_out))
            width_in = width_out
        if spec.dropout > 0:
            trunk.append(nn.Dropout(spec.dropout))
        self.trunk = nn.Sequential(*trunk)
        self.output_dim = width_in

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeMismatchError(
                f"{self.spec.name}.encoder: expected input (batch, {self.spec.input_dim}), got {tuple(x.shape)}"
            )
        if self.conv is not None:
            grid = x[:, :self.spec.grid_size].reshape(x.shape[0], *self.spec.grid_shape)
            x = torch.cat([self.conv(grid), x[:, self.spec.grid_size:]], dim=1)
        return self.trunk(x)


class DuelingHead(nn.Module):
    """Q(s, a) = V(s) + A(s, a) - mean_a A(s, a)."""

    def __init__(self, in_dim: int, n_actions: int):
        super().__init__()
        self.value = nn.Linear(in_dim, 1)
        self.advantage = nn.Linear(in_dim, n_actions)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        advantage = self.advantage(h)
        return self.value(h) + advantage - advantage.mean(dim=1, keepdim=True)


def _mlp_head(in_dim: int, hidden: Tuple[int, ...], out_dim: int, gain: Optional[float]) -> nn.Sequential:
    layers: List[nn.Module] = []
    for width in hidden:
        layers += [nn.Linear(in_dim, width), nn.ReLU()]
        in_dim = width
    out = nn.Linear(in_dim, out_dim)
    layers.append(_orthogonal(out, gain) if gain is not None else out)
    return nn.Sequential(*layers)


class QNetwork(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        self.encoder = Encoder(spec)
        if spec.dueling:
            self.head = DuelingHead(self.encoder.output_dim, spec.n_actions)
        else:
            self.head = nn.Linear(self.encoder.output_dim, spec.n_actions)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(x))


class ActorCritic(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        self.encoder = Encoder(spec)
        actor_gain, critic_gain = (0.01, 1.0) if spec.orthogonal_heads else (None, None)
        self.actor = _mlp_head(self.encoder.output_dim, spec.head_hidden, spec.n_actions, actor_gain)
        self.critic = _mlp_head(self.encoder.output_dim, spec.head_hidden, 1, critic_gain)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        h = self.encoder(x)
        return self.actor(h), self.critic(h).squeeze(-1)


class PolicyNetwork(nn.Module):
    """Actor only; used with a centralised critic."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        self.encoder = Encoder(spec)
        gain = 0.01 if spec.orthogonal_heads else None
        self.actor = _mlp_head(self.encoder.output_dim, spec.head_hidden, spec.n_actions, gain)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.actor(self.encoder(x))


class ValueNetwork(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        self.encoder = Encoder(spec)
        gain = 1.0 if spec.orthogonal_heads else None
        self.head = _mlp_head(self.encoder.output_dim, spec.head_hidden, 1, gain)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(x)).squeeze(-1)


def build_network(spec: NetworkSpec) -> nn.Module:
    network = {
        "q": QNetwork,
        "actor_critic": ActorCritic,
        "policy": PolicyNetwork,
        "value": ValueNetwork,
    }[spec.head](spec)
    # He init everywhere except the orthogonally initialised output layers.
    orthogonal = set()
    if spec.orthogonal_heads:
        for name in ("actor", "critic", "head"):
            head = getattr(network, name, None)
            if isinstance(head, nn.Sequential):
                orthogonal.add(id(head[-1]))
    for module in network.modules():
        if id(module) not in orthogonal:
            _he_init(module)
    return network


# ------------------------------------------------------------ parameter set

def linear_decay(lr_init: float, lr_min: Optional[float], total_updates: int) -> Callable[[int], float]:
    """LambdaLR factor going linearly from 1 to lr_min/lr_init over ``total_updates``."""
    if lr_min is None or total_updates <= 0:
        return lambda step: 1.0
    floor = lr_min / lr_init
    return lambda step: 1.0 - (1.0 - floor) * min(step / total_updates, 1.0)


class ParameterSet:
    """One network with its Adam moments, learning-rate schedule and update counter."""

    def __init__(self, spec: NetworkSpec, lr_init: float = 1e-3, lr_min: Optional[float] = None,
                 total_updates: int = 0, max_grad_norm: Optional[float] = 1.0, device: str = "cpu"):
        self.spec = spec
        self.device = torch.device(device)
        self.network = build_network(spec).to(self.device)
        self.lr_init = lr_init
        self.lr_min = lr_min
        self.total_updates = total_updates
        self.max_grad_norm = max_grad_norm
        self.optimizer = torch.optim.Adam(self.network.parameters(), lr=lr_init)
        self.scheduler = LambdaLR(self.optimizer, linear_decay(lr_init, lr_min, total_updates))
        self.step = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def named_parameters(self) -> Dict[str, torch.Tensor]:
        return dict(self.network.named_parameters())

    def forward(self, inputs: Union[np.ndarray, torch.Tensor], training: bool = False):
        self.network.train(training)
        return self.network(self.as_tensor(inputs))

    __call__ = forward

    def as_tensor(self, x: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
        dtype = next(self.network.parameters()).dtype
        if isinstance(x, torch.Tensor):
            return x.to(device=self.device, dtype=dtype)
        return torch.as_tensor(np.asarray(x), dtype=dtype, device=self.device)

    def backward(self, loss: torch.Tensor) -> Dict[str, torch.Tensor]:
        """Gradients of ``loss`` for every tensor, zeros where the loss does not depend on it."""
        if not torch.isfinite(loss).all():
            raise NonFiniteLossError(f"{self.spec.name}: loss is {loss.item()} at update {self.step}")
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        return {
            name: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
            for name, p in self.network.named_parameters()
        }

    def optimize_step(self, grads: Optional[Dict[str, torch.Tensor]] = None) -> float:
        """Clip by global norm, apply one Adam step, advance the schedule. Returns the pre-clip norm."""
        params = self.named_parameters()
        if grads is not None:
            for name, p in params.items():
                p.grad = grads[name].to(p.device, p.dtype).clone()
        for p in params.values():
            if p.grad is None:
                p.grad = torch.zeros_like(p)
        if self.max_grad_norm is not None:
            norm = nn.utils.clip_grad_norm_(self.network.parameters(), self.max_grad_norm)
        else:
            norm = torch.sqrt(sum((p.grad ** 2).sum() for p in params.values()))
        self.optimizer.step()
        self.scheduler.step()
        self.step += 1
        return float(norm)

    def update(self, loss: torch.Tensor) -> float:
        self.backward(loss)
        return self.optimize_step()

    def snapshot(self) -> nn.Module:
        """Frozen copy for rollouts and target networks."""
        frozen = copy.deepcopy(self.network).eval()
        for p in frozen.parameters():
            p.requires_grad_(False)
        return frozen

    def state_dict(self) -> Dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "state_dict": self.network.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "scheduler": self.scheduler.state_dict(),
            "step": self.step,
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        spec = NetworkSpec.from_dict(state["spec"])
        if spec != self.spec:
            raise ShapeMismatchError(f"checkpoint network {spec.name} does not match {self.spec.name}")
        self.network.load_state_dict(state["state_dict"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.scheduler.load_state_dict(state["scheduler"])
        self.step = state["step"]


# ------------------------------------------------------- gradient checking

@dataclass
class GradientCheckReport:
    name: str
    checked: int
    max_rel_error: float
    worst: Tuple[str, int] = ("", -1)
    errors: Dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def _scalar_loss(outputs, weights: List[torch.Tensor]) -> torch.Tensor:
    outputs = outputs if isinstance(outputs, tuple) else (outputs,)
    return sum((o * w).sum() for o, w in zip(outputs, weights))


def finite_difference_check(network: nn.Module, inputs: Union[np.ndarray, torch.Tensor],
                            coords_per_tensor: int = 4, eps: float = 1e-6, seed: int = 0) -> GradientCheckReport:
    """Compare autograd against central differences on a random linear functional of the outputs.

    Runs on a float64 copy in eval mode, so dropout is off and the original is untouched.
    """
    rng = np.random.default_rng(seed)
    net = copy.deepcopy(network).double().eval()
    x = torch.as_tensor(np.asarray(inputs), dtype=torch.float64)
    with torch.no_grad():
        probe = net(x)
    probe = probe if isinstance(probe, tuple) else (probe,)
    weights = [torch.as_tensor(rng.standard_normal(tuple(o.shape)), dtype=torch.float64) for o in probe]

    net.zero_grad(set_to_none=True)
    _scalar_loss(net(x), weights).backward()

    report = GradientCheckReport(name=getattr(getattr(network, "spec", None), "name", type(network).__name__),
                                 checked=0, max_rel_error=0.0)
    with torch.no_grad():
        for name, p in net.named_parameters():
            analytic = p.grad.reshape(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=torch.float64)
            flat = p.data.reshape(-1)
            picks = rng.choice(flat.numel(), size=min(coords_per_tensor, flat.numel()), replace=False)
            worst_here = 0.0
            for idx in picks:
                original = flat[idx].item()
                flat[idx] = original + eps
                plus = _scalar_loss(net(x), weights).item()
                flat[idx] = original - eps
                minus = _scalar_loss(net(x), weights).item()
                flat[idx] = original
                numeric = (plus - minus) / (2 * eps)
                a = analytic[idx].item()
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
                worst_here = max(worst_here, rel)
                report.checked += 1
                if rel > report.max_rel_error:
                    report.max_rel_error = rel
                    report.worst = (name, int(idx))
            report.errors[name] = worst_here
    return report


# -------------------------------------------------------------- checkpoints

def save_checkpoint(path: Union[str, Path], networks: Dict[str, ParameterSet], step: int,
                    meta: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "step": step,
        "meta": dict(meta or {}),
        "networks": {name: ps.state_dict() for name, ps in networks.items()},
    }, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    archive = torch.load(path, map_location="cpu", weights_only=False)
    version = archive.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint format {version!r}")
    return archive
