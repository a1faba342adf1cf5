"""
Trainer for Iso-Dream Lab
Outer loop: seed the replay buffer, interleave world-model and behavior
updates with environment interaction, log every loss term, checkpoint
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from tqdm import tqdm

from config.run_config import RunConfig
from envs.drift_world import DriftWorld
from envs.episodes import EpisodeRecord, MANIFEST_NAME, generate_pushing_dataset, load_dataset
from models.behavior import ActorCritic, flatten_states
from models.world_model import NonFiniteLossError, WorldModel, to_tensor_batch
from .agent import IsoDreamAgent, run_episode
from .checkpoint import load_checkpoint, save_checkpoint
from .replay_buffer import ReplayBuffer

logger = logging.getLogger(__name__)

LOG_COLUMNS = [
    "step",
    "image_loss",
    "reward_loss",
    "discount_loss",
    "action_loss",
    "kl_s",
    "kl_z",
    "actor_loss",
    "critic_loss",
    "episode_return",
]


class IsoDreamTrainer:
    """Owns every parameter, the optimizers, the buffer and all RNG streams of one run"""

    def __init__(self, config: RunConfig, run_dir: Optional[Path] = None):
        self.config = config
        self.run_dir = Path(run_dir or config.run_dir)
        self.device = torch.device(config.device)
        self.log_path = self.run_dir / "metrics.csv"

        torch.manual_seed(config.seed)
        self.rng = np.random.default_rng(config.seed)

        self.world = DriftWorld.from_config(config)
        self.world_model = WorldModel(config).to(self.device)
        self.actor_critic = ActorCritic(config).to(self.device)
        self.model_optimizer = torch.optim.Adam(self.world_model.parameters(), lr=config.model_lr)
        self.agent = IsoDreamAgent(config, self.world_model, self.actor_critic, rng=self.rng)
        self.buffer = ReplayBuffer(config.buffer_capacity)

        self.env_steps = 0
        self.iteration = 0
        self.update_count = 0

        logger.info(f"Trainer initialized: task={config.task}, run_dir={self.run_dir}, "
                    f"config_hash={config.config_hash()[:12]}")

    # ------------------------------------------------------------------ updates

    def sample_batch(self) -> Dict[str, torch.Tensor]:
        batch = self.buffer.sample(self.config.batch_size, self.config.segment_length, self.rng)
        return to_tensor_batch(batch, self.device)

    def update_world_model(self, batch: Dict[str, torch.Tensor]):
        """One gradient step on the joint representation loss"""
        self.world_model.train()
        loss, diagnostics, outputs = self.world_model.world_model_loss(batch)
        self.model_optimizer.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(self.world_model.parameters(), self.config.grad_clip)
        self.model_optimizer.step()
        return diagnostics, outputs

    def update(self) -> Dict[str, float]:
        """World-model step, then a behavior step from the batch posteriors (control task only)"""
        try:
            diagnostics, outputs = self.update_world_model(self.sample_batch())
            if self.config.task == "control":
                ctrl_start = flatten_states(outputs.ctrl_post.detach())
                z_start = flatten_states(outputs.nonctrl_post.detach()) if outputs.nonctrl_post is not None else None
                diagnostics.update(self.actor_critic.update(self.world_model, ctrl_start, z_start))
        except NonFiniteLossError as error:
            crash_path = self.save(self.run_dir / "crash.pt")
            logger.error(f"Non-finite loss at update {self.update_count}: {error.diagnostics}; dumped {crash_path}")
            raise
        self.update_count += 1
        return diagnostics

    # --------------------------------------------------------------- collection

    def next_episode_seed(self) -> int:
        return int(self.rng.integers(0, 2**31 - 1))

    def collect_episode(self, random_policy: bool = False) -> EpisodeRecord:
        seed = self.next_episode_seed()
        if random_policy:
            record = run_episode(self.world, seed, agent=None, rng=self.rng)
        else:
            self.world_model.eval()
            self.actor_critic.eval()
            record = run_episode(self.world, seed, agent=self.agent, explore=True)
        self.buffer.add(record)
        self.env_steps += len(record) - 1
        return record

    # --------------------------------------------------------------- main loops

    def train(self) -> Path:
        """Seed episodes, then C updates + one collected episode per iteration until the step budget"""
        config = self.config
        self.run_dir.mkdir(parents=True, exist_ok=True)
        config.save(self.run_dir / "config.cfg")

        for _ in range(config.seed_episodes):
            self.collect_episode(random_policy=True)
        logger.info(f"Seeded buffer with {config.seed_episodes} random episodes: {self.buffer.stats()}")

        with tqdm(total=config.env_steps, initial=min(self.env_steps, config.env_steps), desc="Training") as bar:
            while self.env_steps < config.env_steps:
                diagnostics = [self.update() for _ in range(config.update_steps)]
                before = self.env_steps
                record = self.collect_episode()
                bar.update(min(self.env_steps, config.env_steps) - min(before, config.env_steps))

                self.iteration += 1
                row = self.log_row(diagnostics, record.episode_return)
                logger.info(f"Iteration {self.iteration}: steps={self.env_steps} "
                            f"return={record.episode_return:.3f} image_loss={row.get('image_loss', float('nan')):.3f}")
                if self.iteration % config.checkpoint_every == 0:
                    self.save(self.run_dir / "latest.pt")

        return self.save(self.run_dir / "final.pt")

    def train_video(self) -> Path:
        """World-model-only training on the pushing dataset, generated first when missing"""
        config = self.config
        self.run_dir.mkdir(parents=True, exist_ok=True)
        config.save(self.run_dir / "config.cfg")

        dataset_dir = Path(config.dataset_dir)
        if not (dataset_dir / MANIFEST_NAME).exists():
            logger.info(f"No dataset at {dataset_dir}; generating one")
            generate_pushing_dataset(config.seed, config.dataset_episodes, config.dataset_length, dataset_dir,
                                     self.world, config.action_persistence, config.config_hash())
        self.buffer.extend(load_dataset(dataset_dir))
        logger.info(f"Video buffer loaded: {self.buffer.stats()}")

        window: List[Dict[str, float]] = []
        for step in tqdm(range(1, config.train_steps + 1), desc="Video training"):
            diagnostics, _ = self._video_step()
            window.append(diagnostics)
            if step % config.log_every == 0:
                self.env_steps = step
                self.log_row(window, float("nan"))
                window = []
            if step % (config.log_every * config.checkpoint_every) == 0:
                self.save(self.run_dir / "latest.pt")

        return self.save(self.run_dir / "final.pt")

    def _video_step(self):
        try:
            result = self.update_world_model(self.sample_batch())
        except NonFiniteLossError as error:
            crash_path = self.save(self.run_dir / "crash.pt")
            logger.error(f"Non-finite loss in video training: {error.diagnostics}; dumped {crash_path}")
            raise
        self.update_count += 1
        return result

    # ------------------------------------------------------------ log and state

    def log_row(self, diagnostics: List[Dict[str, float]], episode_return: float) -> Dict[str, float]:
        """Average the update diagnostics and append one CSV row; absent terms stay empty"""
        row: Dict[str, float] = {"step": self.env_steps}
        if diagnostics:
            frame = pd.DataFrame(diagnostics)
            for column in LOG_COLUMNS[1:-1]:
                if column in frame:
                    row[column] = float(frame[column].mean())
        row["episode_return"] = episode_return
        frame = pd.DataFrame([row], columns=LOG_COLUMNS)
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(self.log_path, mode="a", header=not self.log_path.exists(), index=False)
        return row

    def save(self, path: Path) -> Path:
        extra = {
            "env_steps": self.env_steps,
            "iteration": self.iteration,
            "update_count": self.update_count,
            "numpy_rng": self.rng.bit_generator.state,
        }
        return save_checkpoint(path, self.config, self.world_model, self.actor_critic,
                               self.model_optimizer, extra)

    def resume(self, path: Path):
        """Restore weights, optimizers, counters and RNG streams from a checkpoint"""
        loaded = load_checkpoint(path, self.config.device)
        payload = loaded.payload
        self.world_model.load_state_dict(payload["world_model"])
        self.actor_critic.load_state_dict(payload["actor_critic"])
        self.actor_critic.actor_optimizer.load_state_dict(payload["actor_optimizer"])
        self.actor_critic.critic_optimizer.load_state_dict(payload["critic_optimizer"])
        self.actor_critic.updates = payload.get("actor_critic_updates", 0)
        if "model_optimizer" in payload:
            self.model_optimizer.load_state_dict(payload["model_optimizer"])
        self.env_steps = payload.get("env_steps", 0)
        self.iteration = payload.get("iteration", 0)
        self.update_count = payload.get("update_count", 0)
        if "numpy_rng" in payload:
            self.rng.bit_generator.state = payload["numpy_rng"]
        torch.set_rng_state(payload["torch_rng"])
        logger.info(f"Resumed from {path} at step {self.env_steps}")
