"""
Models package for Iso-Dream Lab
Decoupled world model and imagination-based behavior learning
"""

from .networks import LatentState, ControllableState, NoncontrollableState
from .world_model import (
    WorldModel,
    WorldModelOutputs,
    MaskedDecode,
    StaticCode,
    NonFiniteLossError,
    compose,
    gaussian_kl,
    to_tensor_batch,
    preprocess_observation,
)
from .behavior import (
    ActorCritic,
    Actor,
    Critic,
    FutureStateAttention,
    ImaginedTrajectory,
    ReturnTargets,
    critic_loss,
    flatten_states,
    freeze,
    future_state_attention,
    lambda_return,
    rollout_noncontrollable,
)

__all__ = [
    "LatentState",
    "ControllableState",
    "NoncontrollableState",
    "WorldModel",
    "WorldModelOutputs",
    "MaskedDecode",
    "StaticCode",
    "NonFiniteLossError",
    "compose",
    "gaussian_kl",
    "to_tensor_batch",
    "preprocess_observation",
    "ActorCritic",
    "Actor",
    "Critic",
    "FutureStateAttention",
    "ImaginedTrajectory",
    "ReturnTargets",
    "critic_loss",
    "flatten_states",
    "freeze",
    "future_state_attention",
    "lambda_return",
    "rollout_noncontrollable",
]
