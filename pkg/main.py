#!/usr/bin/env python3
"""
Main Application for Iso-Dream Lab
Command-line entry point (train, eval, predict, gen-data, plot, serve)
and the HTTP policy service
"""

import argparse
import json
import os
import sys
import logging
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field, ValidationError
import uvicorn

from config import load_run_config
from controller import (
    IsoDreamTrainer,
    ServiceUnavailableError,
    UnknownSessionError,
    evaluate,
    evaluate_prediction,
    plot_curves,
    policy_service,
    predict_rollout,
    save_strip,
)
from envs import DriftWorld, generate_pushing_dataset, read_episode, split_seed

# Load environment variables
load_dotenv()

# Configure logging
logging.basicConfig(
    level=getattr(logging, os.getenv("LOG_LEVEL", "INFO").upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout),
        logging.FileHandler('isodream.log')
    ]
)
logger = logging.getLogger(__name__)

# Create FastAPI app
app = FastAPI(
    title="Iso-Dream Policy Service",
    description="Deployment-time policy of a trained Iso-Dream agent",
    version="1.0.0"
)


class ActRequest(BaseModel):
    session_id: str
    observation: List[List[List[int]]] = Field(..., description="uint8 frame as nested (H, W, 3) lists")
    explore: bool = False


class EvaluateRequest(BaseModel):
    episodes: int = Field(5, ge=1, le=100)


# FastAPI startup event
@app.on_event("startup")
async def startup_event():
    """Load the checkpoint named by ISODREAM_CHECKPOINT"""
    logger.info("Starting Iso-Dream policy service...")
    if not await policy_service.start():
        logger.warning("Policy service started without a checkpoint")
    else:
        logger.info("Policy service started successfully")


# FastAPI shutdown event
@app.on_event("shutdown")
async def shutdown_event():
    logger.info("Shutting down Iso-Dream policy service...")
    await policy_service.stop()
    logger.info("Shutdown completed")


# FastAPI Routes

@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "checkpoint": "loaded" if policy_service.loaded else "missing"}


@app.get("/status")
async def get_status():
    return policy_service.get_service_status()


@app.get("/metrics")
async def get_metrics():
    return policy_service.get_metrics()


@app.post("/sessions/{session_id}/reset")
async def reset_session(session_id: str):
    """Start or restart an episode for one remote environment"""
    try:
        return policy_service.reset_session(session_id)
    except ServiceUnavailableError as error:
        logger.error(f"Reset of {session_id} refused: {error}")
        raise HTTPException(status_code=503, detail=str(error))


@app.post("/act")
async def act(request: ActRequest):
    """Feed the next frame of a session and get its action"""
    session_id = request.session_id
    try:
        return policy_service.act(session_id, request.observation, request.explore)
    except ServiceUnavailableError as error:
        logger.error(f"Act for {session_id} refused: {error}")
        raise HTTPException(status_code=503, detail=str(error))
    except UnknownSessionError:
        logger.warning(f"Act for unknown session {session_id}")
        raise HTTPException(status_code=404, detail=f"Unknown session '{session_id}'; reset it first")
    except ValueError as error:
        raise HTTPException(status_code=422, detail=str(error))


@app.post("/evaluate")
async def run_evaluation(request: EvaluateRequest):
    """Deterministic-policy returns next to the random baseline"""
    try:
        return policy_service.run_evaluation(request.episodes)
    except ServiceUnavailableError as error:
        raise HTTPException(status_code=503, detail=str(error))


# Command-line interface

def cmd_train(args) -> int:
    config = load_run_config(args.config, args.set)
    trainer = IsoDreamTrainer(config)
    if args.resume:
        trainer.resume(Path(args.resume))
    path = trainer.train_video() if config.task == "video" else trainer.train()
    logger.info(f"Training finished: {path}")
    return 0


def cmd_eval(args) -> int:
    result = evaluate(Path(args.ckpt), args.episodes).to_dict()
    text = json.dumps(result, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


def cmd_predict(args) -> int:
    out_dir = Path(args.out)
    if args.dataset:
        summary = evaluate_prediction(Path(args.ckpt), Path(args.dataset), args.context, args.horizon,
                                      out_dir=out_dir, max_episodes=args.max_episodes, strips=args.strips)
        print(json.dumps(summary, indent=2))
        return 0
    if not args.episode:
        logger.error("predict needs --episode FILE or --dataset DIR")
        return 1
    result = predict_rollout(Path(args.ckpt), read_episode(Path(args.episode)), args.context, args.horizon)
    save_strip(result, out_dir / "strip.png")
    report = {
        "psnr": result.report.psnr,
        "ssim": result.report.ssim,
        "mean_psnr": result.report.mean_psnr,
        "mean_ssim": result.report.mean_ssim,
    }
    if result.disentanglement:
        report["mean_iou_s"] = result.disentanglement.mean_iou_s
        report["mean_iou_z"] = result.disentanglement.mean_iou_z
    print(json.dumps(report, indent=2))
    return 0


def cmd_gen_data(args) -> int:
    config = load_run_config(args.config, args.set)
    world = DriftWorld.from_config(config)
    held_out = args.split == "test"
    out_dir = Path(args.out or (config.heldout_dir if held_out else config.dataset_dir))
    base_seed = config.seed if args.seed is None else args.seed
    default_episodes = config.heldout_episodes if held_out else config.dataset_episodes
    logger.info(f"Generating {args.split} split into {out_dir}")
    generate_pushing_dataset(
        seed=split_seed(base_seed, args.split),
        episodes=default_episodes if args.episodes is None else args.episodes,
        T=args.length or config.dataset_length,
        out_dir=out_dir,
        world=world,
        persistence=config.action_persistence,
        config_hash=config.config_hash(),
    )
    return 0


def cmd_plot(args) -> int:
    summary = plot_curves([Path(p) for p in args.logs], Path(args.out), metric=args.metric)
    print(summary.tail().to_string(index=False))
    return 0


def cmd_serve(args) -> int:
    if args.ckpt:
        os.environ["ISODREAM_CHECKPOINT"] = args.ckpt
        policy_service.checkpoint_path = args.ckpt
    uvicorn.run(
        "main:app",
        host=args.host or os.getenv("HOST", "0.0.0.0"),
        port=int(args.port or os.getenv("PORT", "8000")),
        reload=False
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isodream", description="Iso-Dream model-based RL lab")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train an agent (or a video model when task=video)")
    train.add_argument("--config", help="Flat key=value config file")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    train.add_argument("--resume", help="Checkpoint to resume from")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="Evaluate a checkpoint's policy")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--episodes", type=int, default=5)
    ev.add_argument("--out", help="Write the JSON report here")
    ev.set_defaults(func=cmd_eval)

    predict = sub.add_parser("predict", help="Open-loop video prediction")
    predict.add_argument("--ckpt", required=True)
    predict.add_argument("--episode", help="Single episode file")
    predict.add_argument("--dataset", help="Dataset directory to aggregate over")
    predict.add_argument("--context", type=int, default=5)
    predict.add_argument("--horizon", type=int, default=45)
    predict.add_argument("--out", default="predictions")
    predict.add_argument("--max-episodes", type=int)
    predict.add_argument("--strips", type=int, default=3)
    predict.set_defaults(func=cmd_predict)

    gen = sub.add_parser("gen-data", help="Generate the pushing dataset")
    gen.add_argument("--config")
    gen.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    gen.add_argument("--out")
    gen.add_argument("--episodes", type=int)
    gen.add_argument("--length", type=int)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--split", choices=["train", "test"], default="train",
                     help="test offsets the seeds and writes to heldout_dir")
    gen.set_defaults(func=cmd_gen_data)

    plot = sub.add_parser("plot", help="Aggregate metric logs into a return curve")
    plot.add_argument("--logs", nargs="+", required=True)
    plot.add_argument("--out", default="curves.png")
    plot.add_argument("--metric", default="episode_return")
    plot.set_defaults(func=cmd_plot)

    serve = sub.add_parser("serve", help="Run the HTTP policy service")
    serve.add_argument("--ckpt")
    serve.add_argument("--host")
    serve.add_argument("--port")
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, ValidationError) as error:
        logger.error(f"{args.command} failed: {error}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
