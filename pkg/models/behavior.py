"""
Behavior Learning for Iso-Dream Lab
Imagination rollouts with future state attention, tanh-Gaussian actor,
critic with a slow target copy, and lambda-return targets
"""

import copy
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.distributions import Independent, Normal, TransformedDistribution
from torch.distributions.transforms import TanhTransform

from config.run_config import RunConfig
from .networks import LatentState, MLP
from .world_model import NonFiniteLossError, WorldModel

logger = logging.getLogger(__name__)


@dataclass
class ReturnTargets:
    V_lambda: torch.Tensor
    weights: torch.Tensor


@dataclass
class ImaginedTrajectory:
    """
    Time-major imagination output for N start states

    ctrl_states: (L+1, N, ...) controllable priors, row 0 is the start posterior
    z_track: (L+tau, N, d) noncontrollable features rolled before any action, or None
    tokens: (L+1, N, d_in) policy inputs e_j
    actions/entropy/reward/discount: L rows; values: L+1 rows from the target critic
    """
    ctrl_states: LatentState
    z_track: Optional[torch.Tensor]
    tokens: torch.Tensor
    actions: torch.Tensor
    entropy: torch.Tensor
    reward: torch.Tensor
    discount: torch.Tensor
    values: torch.Tensor

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


@contextmanager
def freeze(*modules: nn.Module) -> Iterator[None]:
    """Temporarily disable parameter gradients; activations still carry gradients through"""
    params = [p for module in modules for p in module.parameters()]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad_(flag)


def rollout_noncontrollable(world_model: WorldModel, z0: LatentState, n: int,
                            deterministic: bool = False) -> List[LatentState]:
    """n prior steps of the action-free branch, no observations, no actions, no gradient"""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    states = []
    with torch.no_grad():
        state = z0.detach()
        for _ in range(n):
            state = world_model.noncontrollable_step(state, None, deterministic)
            states.append(state)
    return states


def future_state_attention(s_token: torch.Tensor, z_window: torch.Tensor,
                           return_weights: bool = False):
    """
    e = softmax(s . Z^T) Z + s, unscaled and parameter-free

    Args:
        s_token: (..., d)
        z_window: (..., tau, d), tau >= 1
    """
    if z_window.shape[-2] == 0:
        raise ValueError("Attention window is empty (tau=0); use policy_mode=s_only instead")
    if z_window.shape[-1] != s_token.shape[-1]:
        raise ValueError(f"Token dimension {s_token.shape[-1]} does not match window dimension {z_window.shape[-1]}")
    scores = torch.matmul(z_window, s_token.unsqueeze(-1)).squeeze(-1)
    weights = torch.softmax(scores, dim=-1)
    e = torch.matmul(weights.unsqueeze(-2), z_window).squeeze(-2) + s_token
    if return_weights:
        return e, weights
    return e


class FutureStateAttention(nn.Module):
    """Attention over the rolled-out noncontrollable window, optionally with learned query/key maps"""

    def __init__(self, dim: int, learned_projections: bool = False):
        super().__init__()
        self.learned_projections = learned_projections
        if learned_projections:
            self.query = nn.Linear(dim, dim, bias=False)
            self.key = nn.Linear(dim, dim, bias=False)
            nn.init.eye_(self.query.weight)
            nn.init.eye_(self.key.weight)

    def forward(self, s_token: torch.Tensor, z_window: torch.Tensor) -> torch.Tensor:
        if not self.learned_projections:
            return future_state_attention(s_token, z_window)
        if z_window.shape[-2] == 0:
            raise ValueError("Attention window is empty (tau=0); use policy_mode=s_only instead")
        scores = torch.matmul(self.key(z_window), self.query(s_token).unsqueeze(-1)).squeeze(-1)
        weights = torch.softmax(scores, dim=-1)
        return torch.matmul(weights.unsqueeze(-2), z_window).squeeze(-2) + s_token


class Actor(nn.Module):
    """Tanh-squashed diagonal Gaussian policy over [-1, 1]^A"""

    def __init__(self, in_dim: int, hidden_dim: int, action_dim: int, min_std: float):
        super().__init__()
        self.min_std = min_std
        self.net = MLP(in_dim, hidden_dim, 2 * action_dim)

    def base_distribution(self, features: torch.Tensor) -> Normal:
        mean, raw_std = self.net(features).chunk(2, dim=-1)
        return Normal(mean, F.softplus(raw_std) + self.min_std, validate_args=False)

    def distribution(self, features: torch.Tensor) -> Independent:
        base = self.base_distribution(features)
        return Independent(TransformedDistribution(base, [TanhTransform(cache_size=1)]), 1)

    def forward(self, features: torch.Tensor, deterministic: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns (action, entropy of the pre-squash Gaussian)"""
        squashed = self.distribution(features)
        base = squashed.base_dist.base_dist
        entropy = base.entropy().sum(dim=-1)
        if deterministic:
            return torch.tanh(base.mean), entropy
        return squashed.rsample(), entropy


class Critic(nn.Module):
    def __init__(self, in_dim: int, hidden_dim: int):
        super().__init__()
        self.net = MLP(in_dim, hidden_dim, 1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.net(features).squeeze(-1)


def lambda_return(reward: torch.Tensor, discount: torch.Tensor, value: torch.Tensor,
                  lam: float) -> ReturnTargets:
    """
    Backward recursion V_L = v_L, V_t = r_t + g_t [(1 - lam) v_{t+1} + lam V_{t+1}]

    Args:
        reward: (L, ...) rewards
        discount: (L, ...) predicted discounts in [0, 1]
        value: (L+1, ...) bootstrap values
        lam: mixing factor in [0, 1]

    Returns:
        ReturnTargets with L targets and weights_t = prod_{k<t} g_k
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if reward.shape != discount.shape:
        raise ValueError(f"reward {tuple(reward.shape)} and discount {tuple(discount.shape)} differ")
    if value.shape[0] != reward.shape[0] + 1 or value.shape[1:] != reward.shape[1:]:
        raise ValueError(f"value needs L+1={reward.shape[0] + 1} rows matching reward, got {tuple(value.shape)}")

    next_return = value[-1]
    targets = []
    for t in reversed(range(reward.shape[0])):
        next_return = reward[t] + discount[t] * ((1.0 - lam) * value[t + 1] + lam * next_return)
        targets.append(next_return)
    V_lambda = torch.stack(targets[::-1], dim=0)

    shifted = torch.cat([torch.ones_like(discount[:1]), discount[:-1]], dim=0)
    weights = torch.cumprod(shifted, dim=0)
    return ReturnTargets(V_lambda=V_lambda, weights=weights)


def critic_loss(prediction: torch.Tensor, target: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Discount-weighted squared error against stop-gradient targets"""
    return (weights.detach() * 0.5 * (prediction - target.detach()) ** 2).mean()


def flatten_states(state: LatentState) -> LatentState:
    """(B, T, ...) replay posteriors -> (B*T, ...) imagination starts"""
    return state.map(lambda x: x.reshape(-1, x.shape[-1]))


class ActorCritic(nn.Module):
    """Policy, value model and target value model trained purely in imagination"""

    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        self.policy_mode = config.policy_mode
        self.concat_current_z = config.no_rollout_concat_current_z
        self.window = config.attention_window
        token = config.token_dim
        in_dim = 2 * token if self.concat_current_z else token

        self.attention = FutureStateAttention(token, config.attention_learned_projections)
        self.actor = Actor(in_dim, config.hidden_dim, config.action_dim, config.actor_min_std)
        self.critic = Critic(in_dim, config.hidden_dim)
        self.target_critic = copy.deepcopy(self.critic)
        self.target_critic.requires_grad_(False)

        self.actor_optimizer = torch.optim.Adam(
            list(self.actor.parameters()) + list(self.attention.parameters()), lr=config.actor_lr)
        self.critic_optimizer = torch.optim.Adam(self.critic.parameters(), lr=config.critic_lr)
        self.updates = 0

        logger.info(f"Actor-critic initialized: policy_mode={self.policy_mode}, "
                    f"concat_current_z={self.concat_current_z}, window={self.window}")

    @property
    def uses_z(self) -> bool:
        return self.policy_mode == "attention"

    def refresh_target(self):
        self.target_critic.load_state_dict(self.critic.state_dict())

    def visionary_state(self, ctrl: LatentState, z_track: Optional[torch.Tensor], j: int) -> torch.Tensor:
        """
        Policy input for decision step j

        Args:
            ctrl: controllable state (N, ...)
            z_track: noncontrollable features (rows, N, d); rows j..j+tau-1 form the window
            j: decision step
        """
        s_token = ctrl.features()
        if not self.uses_z:
            return s_token
        if self.concat_current_z:
            return torch.cat([s_token, z_track[j]], dim=-1)
        window = z_track[j:j + self.window]
        if window.shape[0] != self.window:
            raise ValueError(f"z track too short for step {j}: need rows {j}..{j + self.window - 1}")
        return self.attention(s_token, window.transpose(0, 1))

    def rollout_track(self, world_model: WorldModel, z_start: LatentState, length: int,
                      deterministic: bool = False) -> torch.Tensor:
        """[z_start] followed by length-1 action-free priors, as stacked features"""
        states = [z_start.detach()] + rollout_noncontrollable(world_model, z_start, length - 1, deterministic)
        return torch.stack([state.features() for state in states], dim=0)

    def imagine(self, world_model: WorldModel, ctrl_start: LatentState, z_start: Optional[LatentState],
                horizon: Optional[int] = None, z_track: Optional[torch.Tensor] = None,
                deterministic: bool = False) -> ImaginedTrajectory:
        """
        Roll the noncontrollable track first, then act for `horizon` steps with
        the action-conditioned branch alone

        Args:
            ctrl_start / z_start: posteriors (N, ...) from replay
            horizon: L >= 1, defaults to imag_horizon
            z_track: precomputed (L+tau, N, d) track; rolled from z_start when None
            deterministic: mean actions and mean latent transitions
        """
        if horizon is None:
            horizon = self.config.imag_horizon
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        needs_track = world_model.has_z and (self.uses_z or world_model.reward_mode == "s_and_z")
        if z_track is None and needs_track:
            z_track = self.rollout_track(world_model, z_start, horizon + max(self.window, 1), deterministic)

        ctrl = ctrl_start.detach()
        states, tokens, actions, entropies = [ctrl], [], [], []
        for j in range(horizon + 1):
            tokens.append(self.visionary_state(ctrl, z_track, j))
            if j == horizon:
                break
            action, entropy = self.actor(tokens[-1], deterministic)
            ctrl = world_model.controllable_step(ctrl, action, None, deterministic)
            if not torch.isfinite(ctrl.deter).all() or not torch.isfinite(ctrl.stoch).all():
                raise NonFiniteLossError(f"Imagined latent is not finite at step {j + 1}", {"step": float(j + 1)})
            states.append(ctrl)
            actions.append(action)
            entropies.append(entropy)

        ctrl_states = LatentState.stack(states, dim=0)
        tokens = torch.stack(tokens, dim=0)
        z_feat = z_track[1:horizon + 1] if world_model.reward_mode == "s_and_z" else None
        reward, discount = world_model.predict_reward_discount(ctrl_states.features()[1:], z_feat,
                                                               world_model.reward_mode)
        values = self.target_critic(tokens)

        return ImaginedTrajectory(
            ctrl_states=ctrl_states,
            z_track=z_track,
            tokens=tokens,
            actions=torch.stack(actions, dim=0),
            entropy=torch.stack(entropies, dim=0),
            reward=reward,
            discount=discount,
            values=values,
        )

    def losses(self, trajectory: ImaginedTrajectory, weights: Optional[torch.Tensor] = None
               ) -> Tuple[torch.Tensor, torch.Tensor, Dict[str, float]]:
        """
        Actor maximizes weighted lambda-returns plus entropy; critic regresses the detached targets.
        The discount weights never carry gradient; pass `weights` to hold them at given values.
        """
        targets = lambda_return(trajectory.reward, trajectory.discount, trajectory.values,
                                self.config.return_lambda)
        weights = targets.weights.detach() if weights is None else weights.detach()
        eta = self.config.entropy_scale
        actor_loss = -(weights * targets.V_lambda).mean() - eta * (weights * trajectory.entropy).mean()

        prediction = self.critic(trajectory.tokens[:-1].detach())
        value_loss = critic_loss(prediction, targets.V_lambda, weights)

        diagnostics = {
            "actor_loss": actor_loss.item(),
            "critic_loss": value_loss.item(),
            "imagined_return": targets.V_lambda[0].mean().item(),
            "actor_entropy": trajectory.entropy.mean().item(),
        }
        if not (torch.isfinite(actor_loss) and torch.isfinite(value_loss)):
            raise NonFiniteLossError("Behavior loss is not finite", diagnostics)
        return actor_loss, value_loss, diagnostics

    def update(self, world_model: WorldModel, ctrl_start: LatentState,
               z_start: Optional[LatentState]) -> Dict[str, float]:
        """One actor and critic step on a fresh imagination batch; world-model weights never move"""
        with freeze(world_model):
            trajectory = self.imagine(world_model, ctrl_start, z_start)
            actor_loss, value_loss, diagnostics = self.losses(trajectory)

            self.actor_optimizer.zero_grad()
            self.critic_optimizer.zero_grad()
            (actor_loss + value_loss).backward()
            clip = self.config.grad_clip
            nn.utils.clip_grad_norm_(list(self.actor.parameters()) + list(self.attention.parameters()), clip)
            nn.utils.clip_grad_norm_(self.critic.parameters(), clip)
            self.actor_optimizer.step()
            self.critic_optimizer.step()

        self.updates += 1
        if self.updates % self.config.target_update_every == 0:
            self.refresh_target()
            logger.debug(f"Target critic refreshed after {self.updates} updates")
        return diagnostics
