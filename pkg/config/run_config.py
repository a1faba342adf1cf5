"""
Run Configuration for Iso-Dream Lab
Flat key/value config files parsed into a validated RunConfig
"""

import os
import json
import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Any

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, model_validator

# Configure logging
logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).parent
SEED_ENV_VAR = "ISODREAM_SEED"


class RunConfig(BaseModel):
    """Every hyperparameter, mode flag and ablation switch of a run"""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # Run
    seed: int = 0
    device: str = "cpu"
    run_dir: str = "runs/default"
    task: Literal["control", "video"] = "control"

    # Drift World
    env_mode: Literal["distractor", "hazard"] = "hazard"
    image_size: int = 64
    action_dim: int = 2
    n_balls: int = 3
    ball_speed: float = 0.04
    ball_radius: float = 0.08
    agent_radius: float = 0.08
    goal_radius: float = 0.06
    agent_speed: float = 0.05
    dt: float = 1.0
    episode_horizon: int = 200
    k_prog: float = 1.0
    k_coll: float = 1.0
    k_act: float = 0.01

    # Pushing dataset
    dataset_dir: str = "data/pushing"
    dataset_episodes: int = 200
    dataset_length: int = 30
    action_persistence: float = 0.6
    heldout_dir: str = "data/pushing_heldout"
    heldout_episodes: int = 20

    # World model
    deter_dim: int = 200
    stoch_dim: int = 30
    hidden_dim: int = 200
    cnn_trunk_depth: int = 32
    cnn_branch_depth: int = 64
    min_std: float = 0.1
    static_frames: int = 5
    alpha: float = 1.0
    beta_s: float = 1.0
    beta_z: float = 1.0
    kl_balancing: bool = True
    kl_balance: float = 0.8
    free_nats: float = 1.0
    discount: float = 0.99

    # Modes
    reward_mode: Literal["s_only", "s_and_z"] = "s_and_z"
    policy_mode: Literal["s_only", "attention"] = "attention"
    action_free_training: Literal["elbo", "recon_only"] = "elbo"

    # Ablations
    no_action_free_branch: bool = False
    no_inverse_cell: bool = False
    no_rollout_concat_current_z: bool = False
    no_static_branch: bool = False

    # Behavior learning
    imag_horizon: int = 15
    attention_window: int = 5
    attention_learned_projections: bool = False
    return_lambda: float = 0.95
    entropy_scale: float = 1e-4
    target_update_every: int = 100
    actor_min_std: float = 0.1

    # Outer loop
    update_steps: int = 50
    batch_size: int = 16
    segment_length: int = 32
    seed_episodes: int = 5
    buffer_capacity: int = 100000
    env_steps: int = 100000
    expl_noise: float = 0.3
    model_lr: float = 3e-4
    actor_lr: float = 8e-5
    critic_lr: float = 8e-5
    grad_clip: float = 100.0
    checkpoint_every: int = 10
    eval_episodes: int = 5

    # Video prediction mode
    train_steps: int = 20000
    log_every: int = 100
    context_frames: int = 5
    predict_horizon: int = 20

    @model_validator(mode="after")
    def _check_modes(self) -> "RunConfig":
        size = self.image_size
        if size < 8 or size & (size - 1):
            raise ValueError(f"image_size must be a power of two >= 8, got {size}")
        if self.action_free_training == "recon_only" and self.reward_mode != "s_only":
            raise ValueError("recon_only action-free training requires reward_mode=s_only")
        if self.no_action_free_branch:
            if self.reward_mode != "s_only" or self.policy_mode != "s_only":
                raise ValueError("no_action_free_branch requires reward_mode=s_only and policy_mode=s_only")
            if self.no_rollout_concat_current_z:
                raise ValueError("no_rollout_concat_current_z needs the action-free branch")
        if self.no_rollout_concat_current_z and self.policy_mode != "attention":
            raise ValueError("no_rollout_concat_current_z ablates the attention policy; set policy_mode=attention")
        if self.policy_mode == "attention" and self.attention_window < 1:
            raise ValueError("attention_window must be >= 1 in attention policy mode")
        if self.segment_length < 2:
            raise ValueError("segment_length must be >= 2")
        if not 0.0 <= self.return_lambda <= 1.0:
            raise ValueError("return_lambda must lie in [0, 1]")
        return self

    @property
    def has_action_free_branch(self) -> bool:
        return not self.no_action_free_branch

    @property
    def token_dim(self) -> int:
        """Dimension of the attention token (deterministic + stochastic features)"""
        return self.deter_dim + self.stoch_dim

    def config_hash(self) -> str:
        """Stable sha256 of the canonical JSON form"""
        payload = json.dumps(self.model_dump(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_text(self) -> str:
        """Render the flat key=value form accepted by load_run_config"""
        lines = [f"{key}={_format_value(value)}" for key, value in self.model_dump().items()]
        return "\n".join(lines) + "\n"

    def save(self, path: Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_overrides(overrides: Optional[List[str]]) -> Dict[str, str]:
    """Turn ["key=value", ...] into a dict, rejecting malformed entries"""
    parsed = {}
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"Override must look like key=value, got '{item}'")
        key, value = item.split("=", 1)
        parsed[key.strip()] = value.strip()
    return parsed


def load_run_config(path: Optional[str] = None, overrides: Optional[List[str]] = None) -> RunConfig:
    """
    Build a RunConfig from defaults, a flat config file, --set overrides and the environment

    Args:
        path: Flat key=value file (comments allowed); None uses defaults only
        overrides: Items of the form key=value applied after the file

    Returns:
        Validated RunConfig
    """
    values: Dict[str, Any] = {}

    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise FileNotFoundError(f"Config file not found: {config_path}")
        values.update({k: v for k, v in dotenv_values(config_path).items() if v is not None})
        logger.info(f"Loaded {len(values)} settings from {config_path}")

    values.update(parse_overrides(overrides))

    env_seed = os.getenv(SEED_ENV_VAR)
    if env_seed:
        logger.info(f"{SEED_ENV_VAR} overrides seed -> {env_seed}")
        values["seed"] = env_seed

    return RunConfig(**values)


def load_preset(name: str, overrides: Optional[List[str]] = None) -> RunConfig:
    """Load one of the presets shipped next to this module (e.g. 'tiny')"""
    return load_run_config(str(CONFIG_DIR / f"{name}.cfg"), overrides)
