"""
Environment package for Iso-Dream Lab
Drift World simulator and recorded-episode storage
"""

from .drift_world import DriftWorld, DriftWorldEnv, EnvState, GroundTruthMasks, Ball
from .episodes import (
    EpisodeRecord,
    write_episode,
    read_episode,
    load_dataset,
    generate_pushing_dataset,
    replay_masks,
    split_seed,
)

__all__ = [
    'DriftWorld',
    'DriftWorldEnv',
    'EnvState',
    'GroundTruthMasks',
    'Ball',
    'EpisodeRecord',
    'write_episode',
    'read_episode',
    'load_dataset',
    'generate_pushing_dataset',
    'replay_masks',
    'split_seed'
]
