# Configuration package for Iso-Dream Lab
from .run_config import RunConfig, load_run_config, load_preset

__all__ = [
    'RunConfig',
    'load_run_config',
    'load_preset'
]
