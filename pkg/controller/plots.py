"""
Return Curves for Iso-Dream Lab
Aggregates per-seed metric logs into a mean +/- std band and a summary table
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)


def _read_log(path: Path, metric: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as error:
        raise ValueError(f"Malformed metrics log {path}: {error}") from error
    if "step" not in frame.columns or metric not in frame.columns:
        raise ValueError(f"Metrics log {path} lacks 'step' or '{metric}' columns")
    frame = frame[["step", metric]].dropna()
    if frame.empty:
        raise ValueError(f"Metrics log {path} has no '{metric}' values")
    return frame.sort_values("step")


def aggregate_curves(log_paths: Sequence[Path], metric: str = "episode_return") -> pd.DataFrame:
    """Interpolate every log onto the union of steps; std is the sample std (0 for one log)"""
    if not log_paths:
        raise ValueError("plot_curves needs at least one metrics log")
    frames = [_read_log(Path(path), metric) for path in log_paths]
    steps = np.unique(np.concatenate([frame["step"].to_numpy(dtype=np.float64) for frame in frames]))
    curves = np.stack([
        np.interp(steps, frame["step"].to_numpy(dtype=np.float64), frame[metric].to_numpy(dtype=np.float64))
        for frame in frames
    ])
    std = curves.std(axis=0, ddof=1) if len(frames) > 1 else np.zeros_like(steps)
    return pd.DataFrame({"step": steps, "mean": curves.mean(axis=0), "std": std, "runs": len(frames)})


def plot_curves(log_paths: Sequence[Path], out_path: Path, summary_path: Optional[Path] = None,
                metric: str = "episode_return", labels: Optional[List[str]] = None) -> pd.DataFrame:
    """
    Plot mean +/- std of `metric` against environment steps

    Returns:
        The aggregated table (step, mean, std, runs), also written to summary_path
    """
    summary = aggregate_curves(log_paths, metric)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(6, 4))
    label = labels[0] if labels else metric
    ax.plot(summary["step"], summary["mean"], label=label)
    ax.fill_between(summary["step"], summary["mean"] - summary["std"], summary["mean"] + summary["std"], alpha=0.25)
    ax.set_xlabel("environment steps")
    ax.set_ylabel(metric.replace("_", " "))
    ax.set_title(f"{metric.replace('_', ' ')} over {len(log_paths)} run(s)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)

    summary_path = Path(summary_path) if summary_path else out_path.with_suffix(".csv")
    summary.to_csv(summary_path, index=False)
    logger.info(f"Saved curve {out_path} and summary {summary_path}")
    return summary
