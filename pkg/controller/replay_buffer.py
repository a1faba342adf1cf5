"""
Replay Buffer for Iso-Dream Lab
Episode ring bounded by total steps, sampling fixed-length segments inside episodes
"""

import logging
from collections import deque
from typing import Deque, Dict, List

import numpy as np

from envs.episodes import EpisodeRecord

logger = logging.getLogger(__name__)


class ReplayBuffer:
    """Stores whole episodes; evicts the oldest once the step capacity is exceeded"""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.episodes: Deque[EpisodeRecord] = deque()
        self.total_steps = 0
        self.total_episodes = 0

    def __len__(self) -> int:
        return len(self.episodes)

    def add(self, record: EpisodeRecord):
        self.episodes.append(record)
        self.total_steps += len(record)
        self.total_episodes += 1
        while self.total_steps > self.capacity and len(self.episodes) > 1:
            evicted = self.episodes.popleft()
            self.total_steps -= len(evicted)

    def extend(self, records: List[EpisodeRecord]):
        for record in records:
            self.add(record)

    def sample(self, batch_size: int, segment_length: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        """
        Uniform episode then uniform offset; segments never cross episode boundaries

        Returns:
            obs (B, T, H, W, 3) uint8, action (B, T, A), reward (B, T), done (B, T)
        """
        eligible = [record for record in self.episodes if len(record) >= segment_length]
        skipped = len(self.episodes) - len(eligible)
        if skipped:
            logger.debug(f"Skipping {skipped} episodes shorter than {segment_length} steps")
        if not eligible:
            raise ValueError(f"No stored episode has at least {segment_length} steps")

        segments = {"obs": [], "action": [], "reward": [], "done": []}
        for _ in range(batch_size):
            record = eligible[int(rng.integers(len(eligible)))]
            start = int(rng.integers(len(record) - segment_length + 1))
            end = start + segment_length
            segments["obs"].append(record.obs[start:end])
            segments["action"].append(record.action[start:end])
            segments["reward"].append(record.reward[start:end])
            segments["done"].append(record.done[start:end])
        return {key: np.stack(value, axis=0) for key, value in segments.items()}

    def stats(self) -> Dict[str, int]:
        return {
            "episodes": len(self.episodes),
            "steps": self.total_steps,
            "episodes_seen": self.total_episodes,
        }
