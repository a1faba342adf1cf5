"""
Agent Runtime for Iso-Dream Lab
Deployment-time policy: posterior filtering of both branches, a short
action-free rollout, future state attention, then the actor
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch

from config.run_config import RunConfig
from envs.drift_world import DriftWorld
from envs.episodes import EpisodeRecord
from models.behavior import ActorCritic
from models.networks import LatentState
from models.world_model import WorldModel, preprocess_observation

logger = logging.getLogger(__name__)


@dataclass
class AgentRuntimeState:
    """Posteriors carried across environment steps plus the action that led to the next frame"""
    ctrl: LatentState
    nonctrl: Optional[LatentState]
    prev_action: torch.Tensor
    step: int = 0


class IsoDreamAgent:
    """Acts in the real environment with the trained world model and actor"""

    def __init__(self, config: RunConfig, world_model: WorldModel, actor_critic: ActorCritic,
                 rng: Optional[np.random.Generator] = None):
        self.config = config
        self.world_model = world_model
        self.actor_critic = actor_critic
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        parameter = next(world_model.parameters())
        self.device = parameter.device
        self.dtype = parameter.dtype
        logger.info(f"Agent ready: policy_mode={config.policy_mode}, device={self.device}")

    def initial_runtime(self) -> AgentRuntimeState:
        """Learned initial states and a zero previous action, matching the recorded first frame"""
        with torch.no_grad():
            ctrl, nonctrl = self.world_model.initial_state(1)
        prev_action = torch.zeros(1, self.config.action_dim, device=self.device, dtype=self.dtype)
        return AgentRuntimeState(ctrl=ctrl, nonctrl=nonctrl, prev_action=prev_action)

    @torch.no_grad()
    def act(self, obs: np.ndarray, runtime: AgentRuntimeState, explore: bool) -> Tuple[np.ndarray, AgentRuntimeState]:
        """
        Choose an action for the current observation

        Args:
            obs: uint8 frame (H, W, 3)
            runtime: state carried from the previous step of this episode
            explore: sample from the actor and add Gaussian noise; otherwise use means throughout

        Returns:
            (action in [-1, 1]^A as float32, updated runtime)
        """
        wm, ac = self.world_model, self.actor_critic
        deterministic = not explore
        frame = preprocess_observation(obs, self.device, self.dtype)
        feat_s, feat_z, _ = wm.encode(frame)

        ctrl = wm.controllable_step(runtime.ctrl, runtime.prev_action, feat_s, deterministic)
        nonctrl = wm.noncontrollable_step(runtime.nonctrl, feat_z, deterministic) if wm.has_z else None

        track = None
        if ac.uses_z:
            # current posterior followed by tau-1 action-free priors
            track = ac.rollout_track(wm, nonctrl, max(ac.window, 1), deterministic)
        token = ac.visionary_state(ctrl, track, 0)
        action, _ = ac.actor(token, deterministic)
        action = action[0].cpu().numpy().astype(np.float64)

        if explore and self.config.expl_noise > 0:
            action = action + self.rng.normal(0.0, self.config.expl_noise, size=action.shape)
        action = np.clip(action, -1.0, 1.0).astype(np.float32)

        runtime = AgentRuntimeState(
            ctrl=ctrl,
            nonctrl=nonctrl,
            prev_action=torch.as_tensor(action, device=self.device, dtype=self.dtype).unsqueeze(0),
            step=runtime.step + 1,
        )
        return action, runtime


def run_episode(world: DriftWorld, seed: int, agent: Optional[IsoDreamAgent] = None, explore: bool = False,
                rng: Optional[np.random.Generator] = None) -> EpisodeRecord:
    """
    Play one episode and record it; agent=None plays uniform random actions from rng

    Frame t stores the action that produced it, so action[0] and reward[0] are zero.
    """
    if agent is None and rng is None:
        rng = np.random.default_rng(seed)
    state, obs = world.reset(seed)
    runtime = agent.initial_runtime() if agent is not None else None
    frames, actions, rewards, dones = [obs], [np.zeros(world.action_dim, dtype=np.float32)], [0.0], [False]

    done = False
    while not done:
        if agent is None:
            action = rng.uniform(-1.0, 1.0, size=world.action_dim).astype(np.float32)
        else:
            action, runtime = agent.act(obs, runtime, explore)
        state, obs, reward, done = world.step(state, action)
        frames.append(obs)
        actions.append(action)
        rewards.append(reward)
        dones.append(done)

    return EpisodeRecord(
        obs=np.stack(frames),
        action=np.stack(actions),
        reward=np.array(rewards),
        done=np.array(dones),
        header={"seed": seed, "env": world.params()},
    )
