"""
Drift World for Iso-Dream Lab
Pixel-rendered arena whose controllable part (the agent disc) and
noncontrollable part (bouncing balls) are known exactly.

reset/step/render are pure functions of (seed, state, action); the
gymnasium wrapper at the bottom only keeps the current state around.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import gymnasium as gym
from gymnasium import spaces

logger = logging.getLogger(__name__)

MODES = ("distractor", "hazard")
AGENT_COLOR = np.array([0.95, 0.95, 0.95])
BALL_COLORS = np.array([
    [0.90, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.25, 0.40, 0.95],
    [0.95, 0.65, 0.10],
    [0.75, 0.25, 0.85],
    [0.10, 0.80, 0.80],
])
GOAL_COLOR = np.array([0.95, 0.85, 0.30])
MIN_GOAL_DISTANCE = 0.4


@dataclass
class Ball:
    pos: np.ndarray
    vel: np.ndarray


@dataclass
class EnvState:
    """Ground-truth simulator state"""
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    goal_pos: np.ndarray
    balls: List[Ball]
    step_count: int
    background_seed: int
    mode: str = "hazard"


@dataclass
class GroundTruthMasks:
    agent_mask: np.ndarray
    ball_mask: np.ndarray
    background_mask: np.ndarray


def reflect(pos: np.ndarray, vel: np.ndarray, low: float = 0.0, high: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Elastic wall reflection: mirror positions back into [low, high] and flip velocity signs"""
    pos = pos.astype(np.float64).copy()
    vel = vel.astype(np.float64).copy()
    for axis in range(pos.shape[0]):
        while pos[axis] < low or pos[axis] > high:
            if pos[axis] > high:
                pos[axis] = 2.0 * high - pos[axis]
            else:
                pos[axis] = 2.0 * low - pos[axis]
            vel[axis] = -vel[axis]
    return pos, vel


class DriftWorld:
    """Static parameters of the arena plus the pure reset/step/render functions"""

    def __init__(
        self,
        image_size: int = 64,
        action_dim: int = 2,
        n_balls: int = 3,
        ball_speed: float = 0.04,
        ball_radius: float = 0.08,
        agent_radius: float = 0.08,
        goal_radius: float = 0.06,
        agent_speed: float = 0.05,
        dt: float = 1.0,
        episode_horizon: int = 200,
        k_prog: float = 1.0,
        k_coll: float = 1.0,
        k_act: float = 0.01,
        mode: str = "hazard",
        terminate_on_goal: bool = True,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{mode}'")
        if action_dim != 2:
            raise ValueError("Drift World agents move in the plane: action_dim must be 2")
        self.image_size = int(image_size)
        self.action_dim = int(action_dim)
        self.n_balls = int(n_balls)
        self.ball_speed = float(ball_speed)
        self.ball_radius = float(ball_radius)
        self.agent_radius = float(agent_radius)
        self.goal_radius = float(goal_radius)
        self.agent_speed = float(agent_speed)
        self.dt = float(dt)
        self.episode_horizon = int(episode_horizon)
        self.k_prog = float(k_prog)
        self.k_coll = float(k_coll)
        self.k_act = float(k_act)
        self.mode = mode
        self.terminate_on_goal = bool(terminate_on_goal)

    @classmethod
    def from_config(cls, config, **overrides) -> "DriftWorld":
        params = dict(
            image_size=config.image_size,
            action_dim=config.action_dim,
            n_balls=config.n_balls,
            ball_speed=config.ball_speed,
            ball_radius=config.ball_radius,
            agent_radius=config.agent_radius,
            goal_radius=config.goal_radius,
            agent_speed=config.agent_speed,
            dt=config.dt,
            episode_horizon=config.episode_horizon,
            k_prog=config.k_prog,
            k_coll=config.k_coll,
            k_act=config.k_act,
            mode=config.env_mode,
        )
        params.update(overrides)
        return cls(**params)

    def params(self) -> Dict[str, Any]:
        """Constructor arguments, enough to rebuild an identical world"""
        return dict(
            image_size=self.image_size,
            action_dim=self.action_dim,
            n_balls=self.n_balls,
            ball_speed=self.ball_speed,
            ball_radius=self.ball_radius,
            agent_radius=self.agent_radius,
            goal_radius=self.goal_radius,
            agent_speed=self.agent_speed,
            dt=self.dt,
            episode_horizon=self.episode_horizon,
            k_prog=self.k_prog,
            k_coll=self.k_coll,
            k_act=self.k_act,
            mode=self.mode,
            terminate_on_goal=self.terminate_on_goal,
        )

    # ------------------------------------------------------------------ dynamics

    def reset(self, seed: int, mode: Optional[str] = None) -> Tuple[EnvState, np.ndarray]:
        """Sample a fresh episode; a deterministic function of seed"""
        if seed < 0:
            raise ValueError(f"seed must be >= 0, got {seed}")
        mode = mode or self.mode
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{mode}'")

        rng = np.random.default_rng(seed)
        margin = self.agent_radius
        agent_pos = rng.uniform(margin, 1.0 - margin, size=2)

        goal_pos = rng.uniform(margin, 1.0 - margin, size=2)
        for _ in range(100):
            if np.linalg.norm(goal_pos - agent_pos) >= MIN_GOAL_DISTANCE:
                break
            goal_pos = rng.uniform(margin, 1.0 - margin, size=2)

        balls = []
        clearance = self.agent_radius + self.ball_radius
        for _ in range(self.n_balls):
            pos = rng.uniform(self.ball_radius, 1.0 - self.ball_radius, size=2)
            for _ in range(100):
                if np.linalg.norm(pos - agent_pos) > clearance:
                    break
                pos = rng.uniform(self.ball_radius, 1.0 - self.ball_radius, size=2)
            angle = rng.uniform(0.0, 2.0 * np.pi)
            vel = self.ball_speed * np.array([np.cos(angle), np.sin(angle)])
            balls.append(Ball(pos=pos, vel=vel))

        state = EnvState(
            agent_pos=agent_pos,
            agent_vel=np.zeros(2),
            goal_pos=goal_pos,
            balls=balls,
            step_count=0,
            background_seed=int(rng.integers(0, 2**31 - 1)),
            mode=mode,
        )
        observation, _ = self.render(state)
        return state, observation

    def step(self, state: EnvState, action: np.ndarray) -> Tuple[EnvState, np.ndarray, float, bool]:
        """Advance one tick: velocity-commanded agent, elastic balls, shaped reward"""
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape[0] != self.action_dim:
            raise ValueError(f"action must have {self.action_dim} components, got {action.shape[0]}")
        if not np.all(np.isfinite(action)) or np.any(np.abs(action) > 1.0):
            raise ValueError(f"action components must lie in [-1, 1], got {action.tolist()}")

        velocity = action * self.agent_speed
        agent_pos, agent_vel = reflect(state.agent_pos + self.dt * velocity, velocity)

        balls = []
        for ball in state.balls:
            pos, vel = reflect(ball.pos + self.dt * ball.vel, ball.vel)
            balls.append(Ball(pos=pos, vel=vel))

        prev_dist = float(np.linalg.norm(state.agent_pos - state.goal_pos))
        dist = float(np.linalg.norm(agent_pos - state.goal_pos))
        reward = self.k_prog * (prev_dist - dist) - self.k_act * float(np.abs(action).sum())

        if state.mode == "hazard" and self._overlaps(agent_pos, balls):
            reward -= self.k_coll

        step_count = state.step_count + 1
        reached = self.terminate_on_goal and dist < self.goal_radius
        done = bool(reached or step_count >= self.episode_horizon)

        new_state = replace(
            state,
            agent_pos=agent_pos,
            agent_vel=agent_vel,
            balls=balls,
            step_count=step_count,
        )
        observation, _ = self.render(new_state)
        return new_state, observation, float(reward), done

    def _overlaps(self, agent_pos: np.ndarray, balls: List[Ball]) -> bool:
        clearance = self.agent_radius + self.ball_radius
        return any(np.linalg.norm(agent_pos - ball.pos) < clearance for ball in balls)

    # ----------------------------------------------------------------- rendering

    def render(self, state: EnvState) -> Tuple[np.ndarray, GroundTruthMasks]:
        """Draw background, then the agent, then the balls on top; masks mark exact sprite pixels"""
        size = self.image_size
        image = _background(state.background_seed, size, tuple(np.round(state.goal_pos, 12)), self.goal_radius).copy()

        agent_mask = _disc(size, state.agent_pos, self.agent_radius)
        image[agent_mask] = AGENT_COLOR

        ball_mask = np.zeros((size, size), dtype=bool)
        for index, ball in enumerate(state.balls):
            disc = _disc(size, ball.pos, self.ball_radius)
            image[disc] = BALL_COLORS[index % len(BALL_COLORS)]
            ball_mask |= disc

        agent_mask = agent_mask & ~ball_mask
        background_mask = ~(agent_mask | ball_mask)
        observation = np.round(image * 255.0).astype(np.uint8)
        masks = GroundTruthMasks(
            agent_mask=agent_mask.astype(np.uint8),
            ball_mask=ball_mask.astype(np.uint8),
            background_mask=background_mask.astype(np.uint8),
        )
        return observation, masks


@lru_cache(maxsize=None)
def _pixel_centers(size: int) -> Tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(size) + 0.5) / size
    return np.meshgrid(coords, coords, indexing="xy")


def _disc(size: int, center: np.ndarray, radius: float) -> np.ndarray:
    xx, yy = _pixel_centers(size)
    return (xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius ** 2


@lru_cache(maxsize=256)
def _background(seed: int, size: int, goal: Tuple[float, float], goal_radius: float) -> np.ndarray:
    """Static seeded texture: dim coarse color blocks with the goal ring painted in"""
    rng = np.random.default_rng(seed)
    cells = 8
    coarse = rng.uniform(0.05, 0.35, size=(cells, cells, 3))
    repeat = max(1, size // cells)
    texture = np.kron(coarse, np.ones((repeat, repeat, 1)))[:size, :size]

    xx, yy = _pixel_centers(size)
    dist = np.sqrt((xx - goal[0]) ** 2 + (yy - goal[1]) ** 2)
    ring = (dist <= goal_radius) & (dist >= goal_radius * 0.5)
    texture[ring] = GOAL_COLOR
    texture.setflags(write=False)
    return texture


class DriftWorldEnv(gym.Env):
    """gymnasium wrapper driving one DriftWorld instance; not safe to share between callers"""

    metadata = {"render_modes": ["rgb_array"]}

    def __init__(self, world: DriftWorld):
        super().__init__()
        self.world = world
        size = world.image_size
        self.observation_space = spaces.Box(0, 255, shape=(size, size, 3), dtype=np.uint8)
        self.action_space = spaces.Box(-1.0, 1.0, shape=(world.action_dim,), dtype=np.float32)
        self.state: Optional[EnvState] = None
        self._observation: Optional[np.ndarray] = None

    def reset(self, *, seed: Optional[int] = None, options: Optional[dict] = None):
        super().reset(seed=seed)
        if seed is None:
            seed = int(self.np_random.integers(0, 2**31 - 1))
        self.state, self._observation = self.world.reset(seed)
        return self._observation, {"state": self.state}

    def step(self, action):
        if self.state is None:
            raise RuntimeError("Call reset() before step()")
        self.state, self._observation, reward, done = self.world.step(self.state, action)
        truncated = done and self.state.step_count >= self.world.episode_horizon
        terminated = done and not truncated
        return self._observation, reward, terminated, truncated, {"state": self.state}

    def render(self):
        return self._observation
