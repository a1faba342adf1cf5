"""
Controller package for Iso-Dream Lab
Replay, agent runtime, training loop, evaluation, metrics and the policy service
"""

from .replay_buffer import ReplayBuffer
from .agent import AgentRuntimeState, IsoDreamAgent, run_episode
from .checkpoint import LoadedCheckpoint, load_checkpoint, save_checkpoint
from .trainer import IsoDreamTrainer, LOG_COLUMNS
from .metrics import psnr, ssim, mask_iou, PSNR_CAP
from .evaluator import (
    EvaluationResult,
    PredictionReport,
    DisentanglementReport,
    RolloutResult,
    evaluate,
    evaluate_prediction,
    predict_rollout,
    save_strip,
)
from .plots import aggregate_curves, plot_curves
from .policy_service import policy_service, ServiceUnavailableError, UnknownSessionError

__all__ = [
    'ReplayBuffer',
    'AgentRuntimeState',
    'IsoDreamAgent',
    'run_episode',
    'LoadedCheckpoint',
    'load_checkpoint',
    'save_checkpoint',
    'IsoDreamTrainer',
    'LOG_COLUMNS',
    'psnr',
    'ssim',
    'mask_iou',
    'PSNR_CAP',
    'EvaluationResult',
    'PredictionReport',
    'DisentanglementReport',
    'RolloutResult',
    'evaluate',
    'evaluate_prediction',
    'predict_rollout',
    'save_strip',
    'aggregate_curves',
    'plot_curves',
    'policy_service',
    'ServiceUnavailableError',
    'UnknownSessionError',
]
