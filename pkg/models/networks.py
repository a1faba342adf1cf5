"""
Network Building Blocks for Iso-Dream Lab
Convolutional encoder/decoders, MLP heads and the recurrent state-space branch
"""

import math
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.distributions import Independent, Normal

logger = logging.getLogger(__name__)

# Encoders always reduce to a 4x4 grid; decoders start from one
BASE_GRID = 4


def downsampling_layers(image_size: int) -> int:
    return max(1, int(math.log2(image_size)) - 2)


@dataclass
class LatentState:
    """Deterministic recurrent vector, stochastic sample and its diagonal Gaussian"""
    deter: torch.Tensor
    stoch: torch.Tensor
    mean: torch.Tensor
    std: torch.Tensor

    @property
    def dist(self) -> Independent:
        # No argument validation: non-finite stats must surface as a non-finite loss
        return Independent(Normal(self.mean, self.std, validate_args=False), 1)

    def features(self) -> torch.Tensor:
        """Attention token / head input: concatenated deterministic and stochastic parts"""
        return torch.cat([self.deter, self.stoch], dim=-1)

    def detach(self) -> "LatentState":
        return LatentState(self.deter.detach(), self.stoch.detach(), self.mean.detach(), self.std.detach())

    def map(self, fn) -> "LatentState":
        return LatentState(fn(self.deter), fn(self.stoch), fn(self.mean), fn(self.std))

    @staticmethod
    def stack(states: List["LatentState"], dim: int = 1) -> "LatentState":
        return LatentState(
            torch.stack([s.deter for s in states], dim),
            torch.stack([s.stoch for s in states], dim),
            torch.stack([s.mean for s in states], dim),
            torch.stack([s.std for s in states], dim),
        )


# (h, s) for the action-conditioned branch, (h', z) for the action-free one
ControllableState = LatentState
NoncontrollableState = LatentState


class MLP(nn.Sequential):
    """Linear/ELU stack with a plain linear output layer"""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, layers: int = 2):
        modules: List[nn.Module] = []
        width = in_dim
        for _ in range(layers):
            modules += [nn.Linear(width, hidden_dim), nn.ELU()]
            width = hidden_dim
        modules.append(nn.Linear(width, out_dim))
        super().__init__(*modules)


class MultiBranchEncoder(nn.Module):
    """Shared conv trunk followed by per-branch conv heads (controllable, noncontrollable, static)"""

    def __init__(self, image_size: int, trunk_depth: int, branch_depth: int, branches: Tuple[str, ...]):
        super().__init__()
        n_down = downsampling_layers(image_size)
        self.trunk = nn.Sequential(nn.Conv2d(3, trunk_depth, 3, stride=2, padding=1), nn.ELU())
        self.heads = nn.ModuleDict({name: self._head(trunk_depth, branch_depth, n_down) for name in branches})
        self.embed_dim = branch_depth * BASE_GRID * BASE_GRID

    @staticmethod
    def _head(trunk_depth: int, depth: int, n_down: int) -> nn.Sequential:
        layers: List[nn.Module] = [nn.Conv2d(trunk_depth, depth, 3, stride=2 if n_down > 1 else 1, padding=1), nn.ELU()]
        for _ in range(n_down - 2):
            layers += [nn.Conv2d(depth, depth, 3, stride=2, padding=1), nn.ELU()]
        layers.append(nn.Flatten())
        return nn.Sequential(*layers)

    def forward(self, obs: torch.Tensor) -> Tuple[Optional[torch.Tensor], ...]:
        """obs: (..., 3, H, W) in [0, 1] -> (feat_s, feat_z, feat_b), None for absent branches"""
        lead = obs.shape[:-3]
        trunk = self.trunk(obs.reshape(-1, *obs.shape[-3:]))
        features = []
        for name in ("s", "z", "b"):
            if name in self.heads:
                features.append(self.heads[name](trunk).reshape(*lead, -1))
            else:
                features.append(None)
        return tuple(features)


class ConvDecoder(nn.Module):
    """Linear projection to a 4x4 grid, then transposed convs up to the image size"""

    def __init__(self, in_dim: int, out_channels: int, image_size: int, depth: int):
        super().__init__()
        self.depth = depth
        self.project = nn.Linear(in_dim, depth * BASE_GRID * BASE_GRID)
        n_up = downsampling_layers(image_size)
        layers: List[nn.Module] = []
        for _ in range(n_up - 1):
            layers += [nn.ConvTranspose2d(depth, depth, 4, stride=2, padding=1), nn.ELU()]
        layers.append(nn.ConvTranspose2d(depth, out_channels, 4, stride=2, padding=1))
        self.deconv = nn.Sequential(*layers)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        lead = features.shape[:-1]
        x = self.project(features.reshape(-1, features.shape[-1]))
        x = x.reshape(-1, self.depth, BASE_GRID, BASE_GRID)
        x = self.deconv(x)
        return x.reshape(*lead, *x.shape[-3:])


class InverseCell(nn.Module):
    """2-layer MLP inferring the action behind a controllable transition (s_prev, s_curr)"""

    def __init__(self, stoch_dim: int, hidden_dim: int, action_dim: int):
        super().__init__()
        self.hidden = nn.Sequential(nn.Linear(2 * stoch_dim, hidden_dim), nn.ELU())
        self.out = nn.Linear(hidden_dim, action_dim)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, s_prev: torch.Tensor, s_curr: torch.Tensor) -> torch.Tensor:
        return self.out(self.hidden(torch.cat([s_prev, s_curr], dim=-1)))


class RecurrentBranch(nn.Module):
    """
    One recurrent state-space branch: h_t = GRU(h_{t-1}, [s_{t-1}, a_{t-1}]),
    prior p(s_t | h_t), posterior q(s_t | h_t, o_t). action_dim=0 gives the
    action-free variant.
    """

    def __init__(self, embed_dim: int, action_dim: int, deter_dim: int, stoch_dim: int,
                 hidden_dim: int, min_std: float):
        super().__init__()
        self.action_dim = action_dim
        self.deter_dim = deter_dim
        self.stoch_dim = stoch_dim
        self.min_std = min_std
        self.input_layer = nn.Sequential(nn.Linear(stoch_dim + action_dim, hidden_dim), nn.ELU())
        self.cell = nn.GRUCell(hidden_dim, deter_dim)
        self.prior_head = MLP(deter_dim, hidden_dim, 2 * stoch_dim, layers=1)
        self.posterior_head = MLP(deter_dim + embed_dim, hidden_dim, 2 * stoch_dim, layers=1)
        self.initial_deter = nn.Parameter(torch.zeros(deter_dim))

    def initial_state(self, batch_size: int) -> LatentState:
        """Learned deterministic start, zero stochastic start"""
        deter = torch.tanh(self.initial_deter).expand(batch_size, -1)
        zeros = deter.new_zeros(batch_size, self.stoch_dim)
        return LatentState(deter, zeros, zeros, torch.ones_like(zeros))

    def transition(self, prev: LatentState, action: Optional[torch.Tensor]) -> torch.Tensor:
        inputs = prev.stoch if action is None else torch.cat([prev.stoch, action], dim=-1)
        return self.cell(self.input_layer(inputs), prev.deter)

    def _distribution(self, raw: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        mean, std = raw.chunk(2, dim=-1)
        return mean, F.softplus(std) + self.min_std

    def prior(self, deter: torch.Tensor, deterministic: bool = False) -> LatentState:
        mean, std = self._distribution(self.prior_head(deter))
        return LatentState(deter, _sample(mean, std, deterministic), mean, std)

    def posterior(self, deter: torch.Tensor, embed: torch.Tensor, deterministic: bool = False) -> LatentState:
        mean, std = self._distribution(self.posterior_head(torch.cat([deter, embed], dim=-1)))
        return LatentState(deter, _sample(mean, std, deterministic), mean, std)


def _sample(mean: torch.Tensor, std: torch.Tensor, deterministic: bool) -> torch.Tensor:
    if deterministic:
        return mean
    return mean + std * torch.randn_like(std)
