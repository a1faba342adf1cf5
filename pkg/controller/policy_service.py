"""
Policy Service for Iso-Dream Lab
Serves a trained checkpoint's deployment policy to remote environments,
one runtime state per session
"""

import os
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from .agent import AgentRuntimeState, IsoDreamAgent
from .checkpoint import LoadedCheckpoint, load_checkpoint
from .evaluator import evaluate

# Load environment variables
load_dotenv()

# Configure logging
logger = logging.getLogger(__name__)

CHECKPOINT_ENV_VAR = "ISODREAM_CHECKPOINT"


class ServiceUnavailableError(RuntimeError):
    """No checkpoint is loaded"""


class UnknownSessionError(KeyError):
    """Session id was never reset on this service"""


class PolicyService:
    """
    Holds one loaded checkpoint and the per-session AgentRuntimeState

    Sessions start with POST /sessions/{id}/reset; each /act call advances that
    session's posteriors by one frame.
    """

    def __init__(self):
        self.checkpoint_path: Optional[str] = os.getenv(CHECKPOINT_ENV_VAR)
        self.loaded: Optional[LoadedCheckpoint] = None
        self.agent: Optional[IsoDreamAgent] = None
        self.sessions: Dict[str, AgentRuntimeState] = {}
        self.is_running = False
        self.start_time: Optional[datetime] = None
        self.action_count = 0
        self.evaluations: List[Dict[str, Any]] = []

        logger.info(f"Policy service initialized (checkpoint: {self.checkpoint_path or 'unset'})")

    async def start(self) -> bool:
        """Load the configured checkpoint; the service still answers /health without one"""
        logger.info("Starting policy service...")
        self.start_time = datetime.now()
        self.is_running = True
        if not self.checkpoint_path:
            logger.error(f"{CHECKPOINT_ENV_VAR} is not set; /act will answer 503 until a checkpoint is loaded")
            return False
        try:
            self.load(self.checkpoint_path)
        except (FileNotFoundError, ValueError) as error:
            logger.error(f"Could not load checkpoint: {error}")
            return False
        return True

    async def stop(self):
        logger.info("Stopping policy service...")
        self.sessions.clear()
        self.is_running = False
        logger.info("Policy service stopped")

    def load(self, path: str):
        self.loaded = load_checkpoint(Path(path))
        self.agent = IsoDreamAgent(self.loaded.config, self.loaded.world_model, self.loaded.actor_critic)
        self.checkpoint_path = str(path)
        self.sessions.clear()
        logger.info(f"Serving checkpoint {path}")

    def _require_agent(self) -> IsoDreamAgent:
        if self.agent is None:
            raise ServiceUnavailableError("No checkpoint loaded")
        return self.agent

    def reset_session(self, session_id: str) -> Dict[str, Any]:
        """Start or restart a session from the learned initial states"""
        agent = self._require_agent()
        self.sessions[session_id] = agent.initial_runtime()
        logger.info(f"Session {session_id} reset")
        return {"session_id": session_id, "step": 0}

    def act(self, session_id: str, observation: List, explore: bool = False) -> Dict[str, Any]:
        """Advance a session by one frame and return the chosen action"""
        agent = self._require_agent()
        if session_id not in self.sessions:
            raise UnknownSessionError(session_id)

        size = agent.config.image_size
        frame = np.asarray(observation)
        if frame.shape != (size, size, 3):
            raise ValueError(f"observation must have shape ({size}, {size}, 3), got {frame.shape}")
        if frame.min() < 0 or frame.max() > 255:
            raise ValueError("observation values must lie in [0, 255]")

        action, runtime = agent.act(frame.astype(np.uint8), self.sessions[session_id], explore)
        self.sessions[session_id] = runtime
        self.action_count += 1
        return {"session_id": session_id, "step": runtime.step, "action": action.tolist()}

    def run_evaluation(self, episodes: int) -> Dict[str, Any]:
        self._require_agent()
        result = evaluate(self.loaded, episodes).to_dict()
        result["timestamp"] = datetime.now().isoformat()
        self.evaluations.append(result)
        return result

    def get_service_status(self) -> Dict[str, Any]:
        uptime_seconds = None
        if self.is_running and self.start_time:
            uptime_seconds = (datetime.now() - self.start_time).total_seconds()
        config = self.loaded.config if self.loaded else None
        return {
            "status": "Running" if self.is_running else "Stopped",
            "checkpoint": self.checkpoint_path,
            "checkpoint_loaded": self.loaded is not None,
            "config_hash": config.config_hash() if config else None,
            "policy_mode": config.policy_mode if config else None,
            "reward_mode": config.reward_mode if config else None,
            "start_time": self.start_time.isoformat() if self.start_time else None,
            "uptime_seconds": uptime_seconds,
        }

    def get_metrics(self) -> Dict[str, Any]:
        return {
            "active_sessions": len(self.sessions),
            "total_actions": self.action_count,
            "evaluations": len(self.evaluations),
            "last_evaluation": self.evaluations[-1] if self.evaluations else None,
        }


# Global service instance
policy_service = PolicyService()
