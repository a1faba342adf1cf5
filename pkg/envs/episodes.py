"""
Episode Storage for Iso-Dream Lab
Flat episode container, manifest handling and the pushing-dataset generator
"""

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .drift_world import DriftWorld, GroundTruthMasks

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"
# Held-out episodes draw seeds from a range the training split never reaches
HELD_OUT_SEED_OFFSET = 1_000_000
SPLITS = ("train", "test")
# Fixed entry timestamp so equal content always produces equal bytes
ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


@dataclass
class EpisodeRecord:
    """
    One recorded episode. Frame t stores the action that produced it,
    the reward received on arrival and whether the episode ended there;
    action[0] is zero and reward[0] is zero.
    """
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    header: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.uint8)
        self.action = np.asarray(self.action, dtype=np.float32)
        self.reward = np.asarray(self.reward, dtype=np.float32)
        self.done = np.asarray(self.done, dtype=bool)
        lengths = {len(self.obs), len(self.action), len(self.reward), len(self.done)}
        if len(lengths) != 1:
            raise ValueError(f"Episode arrays must share their leading length, got {sorted(lengths)}")

    def __len__(self) -> int:
        return len(self.obs)

    @property
    def episode_return(self) -> float:
        return float(self.reward.sum())


def write_episode(path: Path, record: EpisodeRecord, header: Optional[Dict[str, Any]] = None) -> Path:
    """Write the four arrays plus a JSON header into one npz container"""
    path = Path(path)
    header = dict(header or record.header)
    arrays = {
        "obs": record.obs,
        "action": record.action,
        "reward": record.reward,
        "done": record.done,
    }
    header.update({
        "format_version": FORMAT_VERSION,
        "shapes": {name: list(array.shape) for name, array in arrays.items()},
        "dtypes": {name: str(array.dtype) for name, array in arrays.items()},
    })
    arrays["header"] = np.array(json.dumps(header, sort_keys=True))

    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as archive:
        for name, array in arrays.items():
            buffer = io.BytesIO()
            # ascontiguousarray promotes 0-d arrays to shape (1,)
            array = array if array.ndim == 0 else np.ascontiguousarray(array)
            np.lib.format.write_array(buffer, array, allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_TIMESTAMP)
            info.compress_type = zipfile.ZIP_DEFLATED
            archive.writestr(info, buffer.getvalue())
    return path


def read_episode(path: Path) -> EpisodeRecord:
    """Load an episode container written by write_episode"""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"].reshape(-1)[0])) if "header" in data.files else {}
        return EpisodeRecord(
            obs=data["obs"],
            action=data["action"],
            reward=data["reward"],
            done=data["done"],
            header=header,
        )


def split_seed(seed: int, split: str) -> int:
    """Base seed of a dataset split"""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    return seed if split == "train" else seed + HELD_OUT_SEED_OFFSET


def read_manifest(directory: Path) -> List[Dict[str, Any]]:
    manifest_path = Path(directory) / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"No manifest found in {directory}")
    with open(manifest_path) as handle:
        return [json.loads(line) for line in handle if line.strip()]


def load_dataset(directory: Path) -> List[EpisodeRecord]:
    """Read every episode listed in a dataset manifest"""
    directory = Path(directory)
    entries = read_manifest(directory)
    records = [read_episode(directory / entry["path"]) for entry in entries]
    logger.info(f"Loaded {len(records)} episodes from {directory}")
    return records


def random_actions(rng: np.random.Generator, length: int, action_dim: int, persistence: float) -> np.ndarray:
    """Persistent random pushes: a <- clip(rho*a + (1-rho)*u*2, -1, 1) with u ~ U(-1, 1)"""
    actions = np.zeros((length, action_dim))
    current = np.zeros(action_dim)
    for t in range(length):
        noise = rng.uniform(-1.0, 1.0, size=action_dim)
        current = np.clip(persistence * current + (1.0 - persistence) * 2.0 * noise, -1.0, 1.0)
        actions[t] = current
    return actions


def record_episode(world: DriftWorld, seed: int, actions: np.ndarray) -> Tuple[EpisodeRecord, List[GroundTruthMasks]]:
    """Roll a fixed action sequence through the world, collecting frames and masks"""
    state, observation = world.reset(seed)
    _, masks = world.render(state)
    frames, rewards, dones, all_masks = [observation], [0.0], [False], [masks]
    recorded_actions = [np.zeros(world.action_dim)]
    for action in actions:
        state, observation, reward, done = world.step(state, action)
        frames.append(observation)
        rewards.append(reward)
        dones.append(done)
        recorded_actions.append(action)
        all_masks.append(world.render(state)[1])
        if done:
            break
    record = EpisodeRecord(
        obs=np.stack(frames),
        action=np.stack(recorded_actions),
        reward=np.array(rewards),
        done=np.array(dones),
    )
    return record, all_masks


def generate_pushing_dataset(
    seed: int,
    episodes: int,
    T: int,
    out_dir: Path,
    world: DriftWorld,
    persistence: float = 0.6,
    config_hash: str = "",
) -> List[Dict[str, Any]]:
    """
    Write `episodes` files of an agent pushed by recorded random actions among bouncing balls

    Args:
        seed: Base seed; episode i uses seed + i
        episodes: Number of episode files (>= 1)
        T: Frames per episode
        out_dir: Target directory (created if needed)
        world: Arena parameters; goal termination is disabled and the horizon set to T-1
        persistence: Action persistence rho of the random push process
        config_hash: Recorded in every header

    Returns:
        Manifest entries (path relative to out_dir, seed)
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as error:
        raise OSError(f"Cannot create dataset directory {out_dir}: {error}") from error

    params = world.params()
    params.update(terminate_on_goal=False, episode_horizon=T - 1)
    world = DriftWorld(**params)

    entries = []
    for index in tqdm(range(episodes), desc="Generating episodes"):
        episode_seed = seed + index
        rng = np.random.default_rng(episode_seed)
        actions = random_actions(rng, T - 1, world.action_dim, persistence).astype(np.float32)
        record, _ = record_episode(world, episode_seed, actions)
        header = {"seed": episode_seed, "env": params, "config_hash": config_hash}
        name = f"episode_{index:05d}.npz"
        write_episode(out_dir / name, record, header)
        entries.append({"path": name, "seed": episode_seed})

    with open(out_dir / MANIFEST_NAME, "w") as handle:
        for entry in entries:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")
    with open(out_dir / "dataset.json", "w") as handle:
        json.dump({"seed": seed, "episodes": episodes, "T": T, "env": params,
                   "persistence": persistence, "config_hash": config_hash}, handle, indent=2, sort_keys=True)

    logger.info(f"Wrote {episodes} episodes of length {T} to {out_dir}")
    return entries


def replay_masks(record: EpisodeRecord) -> Optional[List[GroundTruthMasks]]:
    """Re-simulate a recorded episode from its header to recover ground-truth masks"""
    header = record.header
    if "seed" not in header or "env" not in header:
        return None
    world = DriftWorld(**header["env"])
    replayed, masks = record_episode(world, int(header["seed"]), record.action[1:])
    if not np.array_equal(replayed.obs, record.obs):
        logger.warning("Replay diverged from the recorded frames; masks unavailable")
        return None
    return masks
