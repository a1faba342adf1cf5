"""
Decoupled World Model for Iso-Dream Lab
Action-conditioned, action-free and static branches with an Inverse Cell,
mask compositing and the joint representation-learning loss
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.distributions import kl_divergence

from config.run_config import RunConfig
from .networks import (
    ConvDecoder,
    InverseCell,
    LatentState,
    MLP,
    MultiBranchEncoder,
    RecurrentBranch,
)

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """Raised when a loss turns NaN/inf; carries the per-term diagnostics"""

    def __init__(self, message: str, diagnostics: Dict[str, float]):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass
class StaticCode:
    """Decoded time-invariant background, shape (B, 3, H, W)"""
    background: torch.Tensor


@dataclass
class MaskedDecode:
    o_s_hat: torch.Tensor
    o_z_hat: Optional[torch.Tensor]
    o_b_hat: Optional[torch.Tensor]
    M_s: torch.Tensor
    M_z: torch.Tensor
    M_b: torch.Tensor


@dataclass
class WorldModelOutputs:
    ctrl_prior: LatentState
    ctrl_post: LatentState
    nonctrl_prior: Optional[LatentState]
    nonctrl_post: Optional[LatentState]
    decode: MaskedDecode
    o_hat: torch.Tensor
    reward_hat: torch.Tensor
    gamma_hat: torch.Tensor
    inverse_action: Optional[torch.Tensor]
    weighted: Dict[str, torch.Tensor] = field(default_factory=dict)
    diagnostics: Dict[str, float] = field(default_factory=dict)


def gaussian_kl(q: LatentState, p: LatentState) -> torch.Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over latent dimensions"""
    return kl_divergence(q.dist, p.dist)


def compose(components: List[torch.Tensor], logits: List[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Pixelwise softmax over mask logits, then a convex blend of the RGB components

    Args:
        components: K tensors (..., 3, H, W)
        logits: K tensors (..., 1, H, W)

    Returns:
        masks (..., K, 1, H, W) summing to one over K, composed image (..., 3, H, W)
    """
    masks = torch.softmax(torch.stack(logits, dim=-4), dim=-4)
    image = (masks * torch.stack(components, dim=-4)).sum(dim=-4)
    return masks, image


def to_tensor_batch(batch: Dict[str, np.ndarray], device: torch.device, dtype: torch.dtype = torch.float32) -> Dict[str, torch.Tensor]:
    """Replay arrays -> model tensors; obs (B, T, H, W, 3) uint8 becomes (B, T, 3, H, W) in [0, 1]"""
    obs = torch.as_tensor(batch["obs"], device=device)
    return {
        "obs": obs.permute(*range(obs.dim() - 3), -1, -3, -2).to(dtype) / 255.0,
        "action": torch.as_tensor(batch["action"], device=device, dtype=dtype),
        "reward": torch.as_tensor(batch["reward"], device=device, dtype=dtype),
        "done": torch.as_tensor(batch["done"], device=device, dtype=dtype),
    }


def preprocess_observation(obs: np.ndarray, device: torch.device, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Single uint8 (H, W, 3) frame -> (1, 3, H, W) float in [0, 1]"""
    tensor = torch.as_tensor(np.asarray(obs), device=device).permute(2, 0, 1).unsqueeze(0)
    return tensor.to(dtype) / 255.0


class WorldModel(nn.Module):
    """Three-branch world model; every sub-network is switched by the RunConfig ablation flags"""

    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        self.has_z = config.has_action_free_branch
        self.has_static = not config.no_static_branch
        self.has_inverse = not config.no_inverse_cell
        self.reward_mode = config.reward_mode

        branches = ("s",) + (("z",) if self.has_z else ()) + (("b",) if self.has_static else ())
        self.encoder = MultiBranchEncoder(config.image_size, config.cnn_trunk_depth, config.cnn_branch_depth, branches)
        embed = self.encoder.embed_dim
        token = config.token_dim

        self.controllable = RecurrentBranch(embed, config.action_dim, config.deter_dim, config.stoch_dim,
                                            config.hidden_dim, config.min_std)
        self.controllable_decoder = ConvDecoder(token, 4, config.image_size, config.cnn_branch_depth)

        if self.has_z:
            self.noncontrollable = RecurrentBranch(embed, 0, config.deter_dim, config.stoch_dim,
                                                   config.hidden_dim, config.min_std)
            self.noncontrollable_decoder = ConvDecoder(token, 4, config.image_size, config.cnn_branch_depth)
        if self.has_static:
            self.static_decoder = ConvDecoder(embed, 3, config.image_size, config.cnn_branch_depth)
        if self.has_inverse:
            self.inverse_cell = InverseCell(config.stoch_dim, config.hidden_dim, config.action_dim)

        head_in = token * (2 if self.reward_mode == "s_and_z" else 1)
        self.reward_head = MLP(head_in, config.hidden_dim, 1)
        self.discount_head = MLP(head_in, config.hidden_dim, 1)

        n_params = sum(p.numel() for p in self.parameters())
        logger.info(f"World model initialized: branches={branches}, reward_mode={self.reward_mode}, params={n_params}")

    # ------------------------------------------------------------ single steps

    def encode(self, obs: torch.Tensor) -> Tuple[Optional[torch.Tensor], ...]:
        """obs (..., 3, H, W) in [0, 1] -> (feat_s, feat_z, feat_b)"""
        if obs.shape[-3:] != (3, self.config.image_size, self.config.image_size):
            raise ValueError(f"Expected observations (..., 3, {self.config.image_size}, {self.config.image_size}), got {tuple(obs.shape)}")
        return self.encoder(obs)

    def initial_state(self, batch_size: int) -> Tuple[LatentState, Optional[LatentState]]:
        ctrl = self.controllable.initial_state(batch_size)
        nonctrl = self.noncontrollable.initial_state(batch_size) if self.has_z else None
        return ctrl, nonctrl

    def controllable_step(self, prev: LatentState, action: torch.Tensor,
                          obs_feat: Optional[torch.Tensor] = None, deterministic: bool = False) -> LatentState:
        """Prior step without an observation, posterior step with one"""
        deter = self.controllable.transition(prev, action)
        if obs_feat is None:
            return self.controllable.prior(deter, deterministic)
        return self.controllable.posterior(deter, obs_feat, deterministic)

    def noncontrollable_step(self, prev: LatentState, obs_feat: Optional[torch.Tensor] = None,
                             deterministic: bool = False) -> LatentState:
        deter = self.noncontrollable.transition(prev, None)
        if obs_feat is None:
            return self.noncontrollable.prior(deter, deterministic)
        return self.noncontrollable.posterior(deter, obs_feat, deterministic)

    def inverse_dynamics(self, s_prev: torch.Tensor, s_curr: torch.Tensor) -> torch.Tensor:
        if not self.has_inverse:
            raise RuntimeError("Inverse Cell disabled by no_inverse_cell")
        return self.inverse_cell(s_prev, s_curr)

    def static_background(self, feat_b: torch.Tensor) -> StaticCode:
        """Mean of the static-branch features over the first K frames, decoded once per sequence"""
        k = min(self.config.static_frames, feat_b.shape[1])
        return StaticCode(torch.sigmoid(self.static_decoder(feat_b[:, :k].mean(dim=1))))

    def decode_and_compose(self, s_feat: torch.Tensor, z_feat: Optional[torch.Tensor],
                           static: Optional[StaticCode]) -> Tuple[MaskedDecode, torch.Tensor]:
        """
        Decode each branch to RGB + mask logit and blend with a fixed zero background logit

        Args:
            s_feat: prior controllable features (B, T, d)
            z_feat: posterior noncontrollable features (B, T, d) or None
            static: StaticCode with background (B, 3, H, W) or None
        """
        s_out = self.controllable_decoder(s_feat)
        components = [torch.sigmoid(s_out[..., :3, :, :])]
        logits = [s_out[..., 3:, :, :]]
        o_z_hat = o_b_hat = None

        if z_feat is not None:
            z_out = self.noncontrollable_decoder(z_feat)
            o_z_hat = torch.sigmoid(z_out[..., :3, :, :])
            components.append(o_z_hat)
            logits.append(z_out[..., 3:, :, :])
        if static is not None:
            background = static.background
            while background.dim() < s_out.dim():
                background = background.unsqueeze(1)
            o_b_hat = background.expand_as(components[0])
            components.append(o_b_hat)
            logits.append(torch.zeros_like(logits[0]))

        masks, image = compose(components, logits)
        masks = masks.squeeze(-3)
        zeros = torch.zeros_like(masks[..., 0, :, :])
        M_s = masks[..., 0, :, :]
        M_z = masks[..., 1, :, :] if z_feat is not None else zeros
        M_b = masks[..., -1, :, :] if static is not None else zeros
        decode = MaskedDecode(components[0], o_z_hat, o_b_hat, M_s, M_z, M_b)
        return decode, image

    def _head_input(self, s_feat: torch.Tensor, z_feat: Optional[torch.Tensor]) -> torch.Tensor:
        if self.reward_mode == "s_only":
            return s_feat
        return torch.cat([s_feat, z_feat], dim=-1)

    def head_logits(self, s_feat: torch.Tensor, z_feat: Optional[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
        inputs = self._head_input(s_feat, z_feat)
        return self.reward_head(inputs).squeeze(-1), self.discount_head(inputs).squeeze(-1)

    def predict_reward_discount(self, s_feat: torch.Tensor, z_feat: Optional[torch.Tensor],
                                mode: str) -> Tuple[torch.Tensor, torch.Tensor]:
        """Reward mean and continuation probability; mode must match the configured reward_mode"""
        if mode != self.reward_mode:
            raise ValueError(f"reward mode '{mode}' does not match configured '{self.reward_mode}'")
        reward, discount_logit = self.head_logits(s_feat, z_feat)
        return reward, torch.sigmoid(discount_logit)

    # ------------------------------------------------------------- sequences

    def observe(self, obs: torch.Tensor, action: torch.Tensor, deterministic: bool = False):
        """Posterior filtering over (B, T) sequences for both branches"""
        batch, length = obs.shape[:2]
        feat_s, feat_z, feat_b = self.encode(obs)
        ctrl, nonctrl = self.initial_state(batch)
        ctrl_priors, ctrl_posts, z_priors, z_posts = [], [], [], []

        for t in range(length):
            deter = self.controllable.transition(ctrl, action[:, t])
            ctrl_priors.append(self.controllable.prior(deter, deterministic))
            ctrl = self.controllable.posterior(deter, feat_s[:, t], deterministic)
            ctrl_posts.append(ctrl)
            if self.has_z:
                deter_z = self.noncontrollable.transition(nonctrl, None)
                z_priors.append(self.noncontrollable.prior(deter_z, deterministic))
                nonctrl = self.noncontrollable.posterior(deter_z, feat_z[:, t], deterministic)
                z_posts.append(nonctrl)

        stacked = {
            "ctrl_prior": LatentState.stack(ctrl_priors),
            "ctrl_post": LatentState.stack(ctrl_posts),
            "nonctrl_prior": LatentState.stack(z_priors) if self.has_z else None,
            "nonctrl_post": LatentState.stack(z_posts) if self.has_z else None,
            "feat_b": feat_b,
        }
        return stacked

    def kl_loss(self, post: LatentState, prior: LatentState) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns (loss term with balancing and free nats, raw mean KL)"""
        value = gaussian_kl(post, prior).mean()
        free = self.config.free_nats
        if self.config.kl_balancing:
            balance = self.config.kl_balance
            train_prior = gaussian_kl(post.detach(), prior).mean()
            train_post = gaussian_kl(post, prior.detach()).mean()
            if free > 0:
                train_prior = torch.clamp(train_prior, min=free)
                train_post = torch.clamp(train_post, min=free)
            return balance * train_prior + (1.0 - balance) * train_post, value
        if free > 0:
            return torch.clamp(value, min=free), value
        return value, value

    def world_model_loss(self, batch: Dict[str, torch.Tensor], deterministic: bool = False):
        """
        Joint loss over a batch of segments

        Args:
            batch: obs (B, T, 3, H, W), action (B, T, A), reward (B, T), done (B, T)

        Returns:
            (scalar loss, diagnostics dict of floats, WorldModelOutputs)
        """
        obs, action, reward, done = batch["obs"], batch["action"], batch["reward"], batch["done"]
        if obs.shape[1] < 2:
            raise ValueError(f"Segments need at least 2 steps, got {obs.shape[1]}")
        config = self.config
        recon_only = config.action_free_training == "recon_only"

        seq = self.observe(obs, action, deterministic)
        ctrl_prior, ctrl_post = seq["ctrl_prior"], seq["ctrl_post"]
        z_prior, z_post = seq["nonctrl_prior"], seq["nonctrl_post"]
        static = self.static_background(seq["feat_b"]) if self.has_static else None

        z_feat = z_post.features() if self.has_z else None
        decode, o_hat = self.decode_and_compose(ctrl_prior.features(), z_feat, static)
        image_loss = 0.5 * ((o_hat - obs) ** 2).sum(dim=(-3, -2, -1)).mean()

        reward_hat, discount_logit = self.head_logits(ctrl_post.features(), z_feat)
        reward_loss = 0.5 * ((reward_hat - reward) ** 2).mean()
        discount_target = config.discount * (1.0 - done)
        discount_loss = F.binary_cross_entropy_with_logits(discount_logit, discount_target)

        kl_s_loss, kl_s = self.kl_loss(ctrl_post, ctrl_prior)

        weighted = {
            "image_loss": image_loss,
            "reward_loss": reward_loss,
            "discount_loss": discount_loss,
            "kl_s": config.beta_s * kl_s_loss,
        }
        diagnostics = {
            "image_loss": image_loss.item(),
            "reward_loss": reward_loss.item(),
            "discount_loss": discount_loss.item(),
            "kl_s": kl_s.item(),
        }

        inverse_action = None
        if self.has_inverse:
            inverse_action = self.inverse_dynamics(ctrl_post.stoch[:, :-1], ctrl_post.stoch[:, 1:])
            action_loss = ((inverse_action - action[:, 1:]) ** 2).sum(dim=-1).mean()
            weighted["action_loss"] = config.alpha * action_loss
            diagnostics["action_loss"] = action_loss.item()

        if self.has_z and not recon_only:
            kl_z_loss, kl_z = self.kl_loss(z_post, z_prior)
            weighted["kl_z"] = config.beta_z * kl_z_loss
            diagnostics["kl_z"] = kl_z.item()

        loss = sum(weighted.values())
        diagnostics["loss"] = loss.item()
        if not torch.isfinite(loss):
            raise NonFiniteLossError("World model loss is not finite", diagnostics)

        outputs = WorldModelOutputs(
            ctrl_prior=ctrl_prior,
            ctrl_post=ctrl_post,
            nonctrl_prior=z_prior,
            nonctrl_post=z_post,
            decode=decode,
            o_hat=o_hat,
            reward_hat=reward_hat,
            gamma_hat=torch.sigmoid(discount_logit),
            inverse_action=inverse_action,
            weighted=weighted,
            diagnostics=diagnostics,
        )
        return loss, diagnostics, outputs
