"""
Evaluator for Iso-Dream Lab
Policy returns against a random baseline, open-loop video prediction with
PSNR/SSIM and mask IoU reports, and image strips of the decoded branches
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import torch
from PIL import Image
from tqdm import tqdm

from envs.drift_world import DriftWorld
from envs.episodes import EpisodeRecord, load_dataset, replay_masks
from models.networks import LatentState
from .agent import IsoDreamAgent, run_episode
from .checkpoint import LoadedCheckpoint, load_checkpoint
from .metrics import mask_iou, psnr, ssim

logger = logging.getLogger(__name__)

# Evaluation seeds live far away from the seeds drawn during training
EVAL_SEED_BASE = 1_000_000

CheckpointLike = Union[str, Path, LoadedCheckpoint]


def _resolve(checkpoint: CheckpointLike) -> LoadedCheckpoint:
    if isinstance(checkpoint, LoadedCheckpoint):
        return checkpoint
    return load_checkpoint(Path(checkpoint))


@dataclass
class EvaluationResult:
    mean: float
    std: float
    returns: List[float]
    baseline_mean: float
    baseline_std: float
    baseline_returns: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean,
            "std": self.std,
            "returns": self.returns,
            "random_baseline": {
                "mean": self.baseline_mean,
                "std": self.baseline_std,
                "returns": self.baseline_returns,
            },
        }


@dataclass
class PredictionReport:
    psnr: List[float]
    ssim: List[float]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")


@dataclass
class DisentanglementReport:
    iou_s: List[float]
    iou_z: Optional[List[float]] = None

    @property
    def mean_iou_s(self) -> float:
        return float(np.mean(self.iou_s)) if self.iou_s else float("nan")

    @property
    def mean_iou_z(self) -> float:
        return float(np.mean(self.iou_z)) if self.iou_z else float("nan")


@dataclass
class RolloutResult:
    """Frames as (n, H, W, 3) floats in [0, 1], masks as (n, H, W)"""
    truth: np.ndarray
    composed: np.ndarray
    o_s: np.ndarray
    M_s: np.ndarray
    o_z: Optional[np.ndarray]
    M_z: Optional[np.ndarray]
    o_b: Optional[np.ndarray]
    report: PredictionReport
    disentanglement: Optional[DisentanglementReport] = None
    frame_indices: List[int] = field(default_factory=list)


def evaluate(checkpoint: CheckpointLike, episodes: int, seed: int = EVAL_SEED_BASE) -> EvaluationResult:
    """
    Mean/std return of the deterministic policy over `episodes` fixed seeds,
    plus a uniform-random policy on the same seeds
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    loaded = _resolve(checkpoint)
    config = loaded.config
    world = DriftWorld.from_config(config)
    agent = IsoDreamAgent(config, loaded.world_model, loaded.actor_critic)

    returns, baseline = [], []
    for index in tqdm(range(episodes), desc="Evaluating"):
        episode_seed = seed + index
        returns.append(run_episode(world, episode_seed, agent=agent, explore=False).episode_return)
        baseline.append(run_episode(world, episode_seed, agent=None,
                                    rng=np.random.default_rng(episode_seed)).episode_return)

    result = EvaluationResult(
        mean=float(np.mean(returns)),
        std=float(np.std(returns)),
        returns=returns,
        baseline_mean=float(np.mean(baseline)),
        baseline_std=float(np.std(baseline)),
        baseline_returns=baseline,
    )
    logger.info(f"Evaluation over {episodes} episodes: {result.mean:.3f} +/- {result.std:.3f} "
                f"(random {result.baseline_mean:.3f})")
    return result


def _frames(tensor: torch.Tensor) -> np.ndarray:
    """(1, n, C, H, W) -> (n, H, W, C)"""
    return tensor[0].permute(0, 2, 3, 1).detach().cpu().numpy().astype(np.float64)


@torch.no_grad()
def predict_rollout(checkpoint: CheckpointLike, episode: EpisodeRecord, context: int, horizon: int,
                    deterministic: bool = True) -> RolloutResult:
    """
    Posterior warm-up on the first `context` frames, then open-loop priors driven
    by the recorded actions; horizon=0 reports on the context reconstruction
    """
    loaded = _resolve(checkpoint)
    wm = loaded.world_model
    wm.eval()
    if context < 1:
        raise ValueError(f"context must be >= 1, got {context}")
    if horizon < 0 or context + horizon > len(episode):
        raise ValueError(f"context {context} + horizon {horizon} exceeds episode length {len(episode)}")

    parameter = next(wm.parameters())
    device, dtype = parameter.device, parameter.dtype
    # only the context frames ever reach the model
    context_obs = torch.as_tensor(episode.obs[:context], device=device).permute(0, 3, 1, 2)
    context_obs = (context_obs.to(dtype) / 255.0).unsqueeze(0)
    actions = torch.as_tensor(episode.action[:context + horizon], device=device, dtype=dtype).unsqueeze(0)

    seq = wm.observe(context_obs, actions[:, :context], deterministic)
    static = wm.static_background(seq["feat_b"]) if wm.has_static else None

    if horizon == 0:
        indices = list(range(context))
        s_feat = seq["ctrl_prior"].features()
        z_feat = seq["nonctrl_post"].features() if wm.has_z else None
    else:
        indices = list(range(context, context + horizon))
        ctrl = seq["ctrl_post"].map(lambda x: x[:, -1])
        nonctrl = seq["nonctrl_post"].map(lambda x: x[:, -1]) if wm.has_z else None
        ctrl_states: List[LatentState] = []
        z_states: List[LatentState] = []
        for t in indices:
            ctrl = wm.controllable_step(ctrl, actions[:, t], None, deterministic)
            ctrl_states.append(ctrl)
            if wm.has_z:
                nonctrl = wm.noncontrollable_step(nonctrl, None, deterministic)
                z_states.append(nonctrl)
        s_feat = LatentState.stack(ctrl_states).features()
        z_feat = LatentState.stack(z_states).features() if wm.has_z else None

    decode, composed = wm.decode_and_compose(s_feat, z_feat, static)
    truth = episode.obs[indices].astype(np.float64) / 255.0
    composed_np = np.clip(_frames(composed), 0.0, 1.0)

    report = PredictionReport(
        psnr=[psnr(composed_np[i], truth[i]) for i in range(len(indices))],
        ssim=[ssim(composed_np[i], truth[i]) for i in range(len(indices))],
    )

    M_s = decode.M_s[0].cpu().numpy().astype(np.float64)
    M_z = decode.M_z[0].cpu().numpy().astype(np.float64) if wm.has_z else None
    disentanglement = None
    gt_masks = replay_masks(episode)
    if gt_masks is not None:
        disentanglement = DisentanglementReport(
            iou_s=[mask_iou(M_s[i], gt_masks[t].agent_mask) for i, t in enumerate(indices)],
            iou_z=[mask_iou(M_z[i], gt_masks[t].ball_mask) for i, t in enumerate(indices)] if M_z is not None else None,
        )

    return RolloutResult(
        truth=truth,
        composed=composed_np,
        o_s=_frames(decode.o_s_hat),
        M_s=M_s,
        o_z=_frames(decode.o_z_hat) if decode.o_z_hat is not None else None,
        M_z=M_z,
        o_b=_frames(decode.o_b_hat) if decode.o_b_hat is not None else None,
        report=report,
        disentanglement=disentanglement,
        frame_indices=indices,
    )


def _to_rgb(row: np.ndarray) -> np.ndarray:
    if row.ndim == 3:
        row = np.repeat(row[..., None], 3, axis=-1)
    return row


def save_strip(result: RolloutResult, path: Path) -> Path:
    """Grid rows: ground truth, composed, o_s, M_s, o_z, M_z, o_b (absent branches skipped)"""
    rows = [result.truth, result.composed, result.o_s, result.M_s, result.o_z, result.M_z, result.o_b]
    strips = [np.concatenate(list(_to_rgb(row)), axis=1) for row in rows if row is not None]
    grid = np.concatenate(strips, axis=0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(np.clip(grid, 0.0, 1.0) * 255.0).astype(np.uint8)).save(path)
    logger.info(f"Saved prediction strip {path}")
    return path


def evaluate_prediction(checkpoint: CheckpointLike, dataset_dir: Path, context: int, horizon: int,
                        out_dir: Optional[Path] = None, max_episodes: Optional[int] = None,
                        strips: int = 0) -> Dict[str, float]:
    """
    Aggregate prediction and disentanglement reports over a dataset, with the
    copy-last-context-frame PSNR baseline; writes CSV and a text table when out_dir is set
    """
    loaded = _resolve(checkpoint)
    records = load_dataset(Path(dataset_dir))
    if max_episodes is not None:
        records = records[:max_episodes]

    rows = []
    for index, record in enumerate(tqdm(records, desc="Predicting")):
        result = predict_rollout(loaded, record, context, horizon)
        last = record.obs[context - 1].astype(np.float64) / 255.0
        baseline = [psnr(last, result.truth[i]) for i in range(len(result.frame_indices))] if horizon > 0 else []
        rows.append({
            "episode": index,
            "psnr": result.report.mean_psnr,
            "ssim": result.report.mean_ssim,
            "copy_last_psnr": float(np.mean(baseline)) if baseline else float("nan"),
            "iou_s": result.disentanglement.mean_iou_s if result.disentanglement else float("nan"),
            "iou_z": result.disentanglement.mean_iou_z if result.disentanglement else float("nan"),
        })
        if out_dir is not None and index < strips:
            save_strip(result, Path(out_dir) / f"strip_{index:03d}.png")

    frame = pd.DataFrame(rows)
    summary = {column: float(frame[column].mean()) for column in frame.columns if column != "episode"}
    summary["episodes"] = len(rows)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out_dir / "prediction_report.csv", index=False)
        (out_dir / "prediction_report.txt").write_text(format_table(summary))
    logger.info(f"Prediction over {len(rows)} episodes: PSNR {summary['psnr']:.2f} dB "
                f"(copy-last {summary['copy_last_psnr']:.2f}), SSIM {summary['ssim']:.3f}")
    return summary


def format_table(values: Dict[str, Any]) -> str:
    """Human-readable two-column table"""
    width = max(len(key) for key in values)
    lines = [f"{'metric'.ljust(width)}  value", "-" * (width + 12)]
    for key, value in values.items():
        shown = f"{value:.4f}" if isinstance(value, float) else str(value)
        lines.append(f"{key.ljust(width)}  {shown}")
    return "\n".join(lines) + "\n"
