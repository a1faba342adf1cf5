"""
Checkpoints for Iso-Dream Lab
Versioned torch checkpoints carrying config, weights, optimizers and RNG streams
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import torch

from config.run_config import RunConfig
from models.behavior import ActorCritic
from models.world_model import WorldModel

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class LoadedCheckpoint:
    config: RunConfig
    world_model: WorldModel
    actor_critic: ActorCritic
    payload: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: Path, config: RunConfig, world_model: WorldModel, actor_critic: ActorCritic,
                    model_optimizer: Optional[torch.optim.Optimizer] = None,
                    extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write everything needed to resume or evaluate a run"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config.model_dump(),
        "config_hash": config.config_hash(),
        "world_model": world_model.state_dict(),
        "actor_critic": actor_critic.state_dict(),
        "actor_optimizer": actor_critic.actor_optimizer.state_dict(),
        "critic_optimizer": actor_critic.critic_optimizer.state_dict(),
        "actor_critic_updates": actor_critic.updates,
        "torch_rng": torch.get_rng_state(),
    }
    if model_optimizer is not None:
        payload["model_optimizer"] = model_optimizer.state_dict()
    payload.update(extra or {})
    torch.save(payload, path)
    logger.info(f"Checkpoint written: {path}")
    return path


def load_checkpoint(path: Path, device: Optional[str] = None) -> LoadedCheckpoint:
    """Rebuild the config and networks stored by save_checkpoint"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    payload = torch.load(path, map_location=device or "cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"Unsupported checkpoint version {version} in {path}")

    values = dict(payload["config"])
    if device is not None:
        values["device"] = device
    config = RunConfig(**values)

    world_model = WorldModel(config).to(config.device)
    world_model.load_state_dict(payload["world_model"])
    actor_critic = ActorCritic(config).to(config.device)
    actor_critic.load_state_dict(payload["actor_critic"])
    actor_critic.updates = payload.get("actor_critic_updates", 0)
    world_model.eval()
    actor_critic.eval()

    logger.info(f"Loaded checkpoint {path} (config {payload['config_hash'][:12]})")
    return LoadedCheckpoint(config=config, world_model=world_model, actor_critic=actor_critic, payload=payload)
