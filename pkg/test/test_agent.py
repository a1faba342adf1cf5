#!/usr/bin/env python3
"""
Agent Test for Iso-Dream Lab
Tests the replay buffer, deployment-time acting, the training loop,
checkpoints, evaluation and the policy service
"""

import asyncio
import os
import sys
import tempfile
from pathlib import Path

# Add parent directory to Python path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd
import torch

from config import load_preset
from controller import (
    IsoDreamAgent,
    IsoDreamTrainer,
    LOG_COLUMNS,
    ReplayBuffer,
    ServiceUnavailableError,
    UnknownSessionError,
    evaluate,
    load_checkpoint,
    run_episode,
)
from controller.policy_service import PolicyService
from envs import DriftWorld, EpisodeRecord
from models import ActorCritic, NonFiniteLossError, WorldModel
from models.world_model import to_tensor_batch


def tiny(overrides=None, run_dir=None):
    values = list(overrides or [])
    if run_dir is not None:
        values.append(f"run_dir={run_dir}")
    os.environ.pop("ISODREAM_SEED", None)
    return load_preset("tiny", values)


def fake_record(length: int, offset: int) -> EpisodeRecord:
    """Frames whose pixel value encodes (episode offset + time index)"""
    obs = np.zeros((length, 4, 4, 3), dtype=np.uint8)
    obs[:, 0, 0, 0] = offset + np.arange(length)
    return EpisodeRecord(obs=obs, action=np.zeros((length, 2)), reward=np.arange(length),
                         done=np.arange(length) == length - 1)


def test_replay_buffer():
    print("🗄️ Testing replay buffer...")
    buffer = ReplayBuffer(capacity=25)
    buffer.add(fake_record(10, 0))
    buffer.add(fake_record(3, 50))
    buffer.add(fake_record(10, 100))
    assert buffer.total_steps == 23
    buffer.add(fake_record(10, 150))
    assert len(buffer) == 3 and buffer.total_steps == 23
    assert buffer.episodes[0].obs[0, 0, 0, 0] == 50
    print("✓ oldest episode evicted once 33 steps exceed the capacity of 25")

    buffer.add(fake_record(10, 200))
    assert len(buffer) == 2 and buffer.total_steps == 20
    assert [int(record.obs[0, 0, 0, 0]) for record in buffer.episodes] == [150, 200]
    assert buffer.stats() == {"episodes": 2, "steps": 20, "episodes_seen": 5}
    print("✓ eviction continues until the total fits")

    oversized = ReplayBuffer(capacity=5)
    oversized.add(fake_record(8, 0))
    assert len(oversized) == 1 and oversized.total_steps == 8
    print("✓ a single episode longer than the capacity is kept")

    batch = buffer.sample(16, 5, np.random.default_rng(0))
    assert batch["obs"].shape == (16, 5, 4, 4, 3)
    marks = batch["obs"][:, :, 0, 0, 0].astype(int)
    assert np.all(np.diff(marks, axis=1) == 1)
    assert np.all(marks // 50 == marks[:, :1] // 50)
    print("✓ segments are contiguous and stay inside one episode")

    again = buffer.sample(16, 5, np.random.default_rng(0))
    assert np.array_equal(batch["obs"], again["obs"])
    print("✓ sampling deterministic given the RNG")

    short = ReplayBuffer(capacity=100)
    short.add(fake_record(3, 0))
    try:
        short.sample(2, 5, np.random.default_rng(0))
    except ValueError:
        print("✓ no eligible episode -> ValueError")
    else:
        raise AssertionError("sampled from too-short episodes")


def make_agent(overrides=None):
    config = tiny(overrides)
    torch.manual_seed(0)
    world_model, actor_critic = WorldModel(config), ActorCritic(config)
    return config, IsoDreamAgent(config, world_model, actor_critic)


def test_act_determinism():
    print("🕹️ Testing deterministic acting...")
    config, agent = make_agent()
    world = DriftWorld.from_config(config)
    _, obs = world.reset(0)
    runtime = agent.initial_runtime()
    a1, next_1 = agent.act(obs, runtime, explore=False)
    a2, _ = agent.act(obs, runtime, explore=False)
    assert np.array_equal(a1, a2) and a1.dtype == np.float32
    assert np.all(np.abs(a1) <= 1.0) and next_1.step == 1
    print(f"✓ mean action {a1.tolist()} repeated exactly")

    explored, _ = agent.act(obs, runtime, explore=True)
    assert np.all(np.abs(explored) <= 1.0)
    print("✓ exploratory action clipped to [-1, 1]")


def test_single_row_window():
    """With tau=1 the attention window is the current posterior alone"""
    print("🪟 Testing tau=1 acting...")
    config, agent = make_agent(["attention_window=1"])
    world = DriftWorld.from_config(config)
    _, obs = world.reset(1)
    runtime = agent.initial_runtime()
    action, new_runtime = agent.act(obs, runtime, explore=False)
    token = new_runtime.ctrl.features() + new_runtime.nonctrl.features()
    expected, _ = agent.actor_critic.actor(token, deterministic=True)
    assert np.allclose(action, expected[0].detach().numpy(), atol=1e-6)
    print("✓ action equals actor(s + z_t)")


def test_s_only_policy_ignores_action_free_branch():
    """s_only policy with recon_only training never reads the action-free branch"""
    print("🧱 Testing structural independence of the s_only policy...")
    config, agent = make_agent(["policy_mode=s_only", "reward_mode=s_only", "action_free_training=recon_only"])
    world = DriftWorld.from_config(config)
    record_a = run_episode(world, 3, agent=agent, explore=False)
    with torch.no_grad():
        for param in agent.world_model.noncontrollable.parameters():
            param.add_(torch.randn_like(param))
    record_b = run_episode(world, 3, agent=agent, explore=False)
    assert np.array_equal(record_a.action, record_b.action)
    print("✓ scrambling the action-free branch leaves every action unchanged")


def test_run_episode_record_convention():
    print("📼 Testing recorded episode layout...")
    config, agent = make_agent()
    world = DriftWorld.from_config(config)
    record = run_episode(world, 5, agent=agent, explore=False)
    assert record.action[0].tolist() == [0.0, 0.0] and record.reward[0] == 0.0
    assert record.done[-1] and not record.done[:-1].any()
    random_record = run_episode(world, 5, agent=None)
    assert len(random_record) >= 2
    print(f"✓ {len(record)} frames, action[0]=0, done only at the end")


def test_training_loop_determinism_and_log():
    print("🔁 Testing training loop determinism...")
    with tempfile.TemporaryDirectory() as tmp:
        logs = []
        for name in ("a", "b"):
            trainer = IsoDreamTrainer(tiny(run_dir=Path(tmp) / name))
            final = trainer.train()
            assert final.exists()
            logs.append((Path(tmp) / name / "metrics.csv").read_text())
        assert logs[0] == logs[1]
        frame = pd.read_csv(Path(tmp) / "a" / "metrics.csv")
        assert list(frame.columns) == LOG_COLUMNS
        assert len(frame) >= 1 and frame["action_loss"].notna().all()
        print(f"✓ {len(frame)} identical log rows across two runs")

        trainer = IsoDreamTrainer(tiny(["no_inverse_cell=true"], run_dir=Path(tmp) / "c"))
        trainer.train()
        frame = pd.read_csv(Path(tmp) / "c" / "metrics.csv")
        assert frame["action_loss"].isna().all() and frame["image_loss"].notna().all()
        print("✓ no_inverse_cell leaves the action_loss column empty")


def test_zero_updates_leave_parameters():
    print("⏸️ Testing C=0 pure collection...")
    with tempfile.TemporaryDirectory() as tmp:
        trainer = IsoDreamTrainer(tiny(["update_steps=0"], run_dir=tmp))
        before = {k: v.clone() for k, v in trainer.world_model.state_dict().items()}
        actor_before = {k: v.clone() for k, v in trainer.actor_critic.state_dict().items()}
        trainer.train()
        assert all(torch.equal(before[k], v) for k, v in trainer.world_model.state_dict().items())
        assert all(torch.equal(actor_before[k], v) for k, v in trainer.actor_critic.state_dict().items())
        assert trainer.env_steps >= trainer.config.env_steps
    print("✓ parameters unchanged after collection-only iterations")


def test_world_model_update_leaves_behavior():
    print("🧊 Testing world-model update isolation...")
    with tempfile.TemporaryDirectory() as tmp:
        trainer = IsoDreamTrainer(tiny(run_dir=tmp))
        for _ in range(2):
            trainer.collect_episode(random_policy=True)
        before = {k: v.clone() for k, v in trainer.actor_critic.state_dict().items()}
        trainer.update_world_model(trainer.sample_batch())
        assert all(torch.equal(before[k], v) for k, v in trainer.actor_critic.state_dict().items())
    print("✓ actor and critic bit-identical after a world-model step")


def test_checkpoint_and_evaluate():
    print("💾 Testing checkpoints and evaluation...")
    with tempfile.TemporaryDirectory() as tmp:
        trainer = IsoDreamTrainer(tiny(["env_steps=1", "seed_episodes=1"], run_dir=tmp))
        path = trainer.train()
        loaded = load_checkpoint(path)
        assert loaded.config == trainer.config
        for key, value in trainer.world_model.state_dict().items():
            assert torch.equal(value, loaded.world_model.state_dict()[key])
        print("✓ checkpoint restores config and weights")

        single = evaluate(loaded, 1)
        assert single.std == 0.0 and len(single.returns) == 1
        first = evaluate(path, 2)
        second = evaluate(path, 2)
        assert first.returns == second.returns and len(first.baseline_returns) == 2
        print(f"✓ returns {first.returns} reproducible, random baseline {first.baseline_mean:.3f}")

        resumed = IsoDreamTrainer(tiny(["env_steps=1", "seed_episodes=1"], run_dir=Path(tmp) / "r"))
        resumed.resume(path)
        assert resumed.env_steps == trainer.env_steps

    try:
        evaluate(loaded, 0)
    except ValueError:
        print("✓ zero episodes rejected")
    else:
        raise AssertionError("episodes=0 accepted")


def test_checkpoint_reproduces_loss():
    print("🧮 Testing checkpoint loss reproduction...")
    with tempfile.TemporaryDirectory() as tmp:
        trainer = IsoDreamTrainer(tiny(run_dir=tmp))
        for _ in range(2):
            trainer.collect_episode(random_policy=True)
        trainer.update()
        path = trainer.save(Path(tmp) / "snapshot.pt")
        loaded = load_checkpoint(path)

        segments = trainer.buffer.sample(2, trainer.config.segment_length, np.random.default_rng(5))
        batch = to_tensor_batch(segments, torch.device("cpu"))
        with torch.no_grad():
            original, _, _ = trainer.world_model.world_model_loss(batch, deterministic=True)
            restored, _, _ = loaded.world_model.world_model_loss(batch, deterministic=True)
    assert torch.equal(original, restored)
    print(f"✓ reloaded model reproduces loss {original.item():.4f} exactly")


def test_non_finite_update_dumps_crash():
    print("💥 Testing crash dump on a non-finite loss...")
    with tempfile.TemporaryDirectory() as tmp:
        trainer = IsoDreamTrainer(tiny(run_dir=tmp))
        for _ in range(2):
            trainer.collect_episode(random_policy=True)
        batch = trainer.sample_batch()
        batch["obs"][0, 1, 0, 0, 0] = float("nan")
        trainer.sample_batch = lambda: batch
        try:
            trainer.update()
        except NonFiniteLossError as error:
            assert "loss" in error.diagnostics
        else:
            raise AssertionError("NaN batch did not abort the update")
        assert (Path(tmp) / "crash.pt").exists()
        assert trainer.update_count == 0
        load_checkpoint(Path(tmp) / "crash.pt")
    print("✓ NonFiniteLossError raised and crash.pt written")


def test_inverse_dynamics_beats_mean_action():
    """Trained Inverse Cell recovers actions at under half the error of the mean-action predictor"""
    print("🧭 Testing inverse dynamics accuracy...")
    with tempfile.TemporaryDirectory() as tmp:
        trainer = IsoDreamTrainer(tiny(["model_lr=0.001", "batch_size=16"], run_dir=tmp))
        free_world = DriftWorld.from_config(trainer.config, terminate_on_goal=False)
        for seed in range(12):
            trainer.buffer.add(run_episode(free_world, seed, agent=None))
        for _ in range(400):
            trainer.update_world_model(trainer.sample_batch())

        stored = np.concatenate([record.action[1:] for record in trainer.buffer.episodes])
        mean_action = torch.as_tensor(stored.mean(axis=0), dtype=torch.float32)

        rng = np.random.default_rng(123)
        held_out = [run_episode(free_world, 10_000 + i, agent=None, rng=rng) for i in range(4)]
        arrays = {key: np.stack([getattr(record, key) for record in held_out])
                  for key in ("obs", "action", "reward", "done")}
        batch = to_tensor_batch(arrays, torch.device("cpu"))
        trainer.world_model.eval()
        with torch.no_grad():
            _, _, outputs = trainer.world_model.world_model_loss(batch, deterministic=True)
        target = batch["action"][:, 1:]
        model_mse = ((outputs.inverse_action - target) ** 2).sum(dim=-1).mean().item()
        baseline_mse = ((mean_action - target) ** 2).sum(dim=-1).mean().item()
    assert model_mse < 0.5 * baseline_mse, f"inverse {model_mse:.4f} vs mean-action {baseline_mse:.4f}"
    print(f"✓ inverse MSE {model_mse:.4f} vs mean-action MSE {baseline_mse:.4f}")


def test_policy_service():
    print("🌐 Testing policy service...")
    service = PolicyService()
    service.checkpoint_path = None
    assert asyncio.run(service.start()) is False
    try:
        service.reset_session("s1")
    except ServiceUnavailableError:
        print("✓ no checkpoint -> unavailable")
    else:
        raise AssertionError("reset without checkpoint accepted")

    with tempfile.TemporaryDirectory() as tmp:
        trainer = IsoDreamTrainer(tiny(["env_steps=1", "seed_episodes=1"], run_dir=tmp))
        path = trainer.train()
        service.load(str(path))

        world = DriftWorld.from_config(trainer.config)
        _, obs = world.reset(0)
        try:
            service.act("unknown", obs.tolist())
        except UnknownSessionError:
            print("✓ unknown session rejected")
        else:
            raise AssertionError("unknown session accepted")

        service.reset_session("s1")
        first = service.act("s1", obs.tolist())
        service.reset_session("s1")
        again = service.act("s1", obs.tolist())
        assert first["action"] == again["action"] and first["step"] == 1
        try:
            service.act("s1", [[[0, 0, 0]]])
        except ValueError:
            print("✓ malformed observation rejected")
        else:
            raise AssertionError("malformed observation accepted")

        status = service.get_service_status()
        assert status["checkpoint_loaded"] and service.get_metrics()["total_actions"] == 2
    asyncio.run(service.stop())
    print("✓ sessions reset, act and report status")


def main():
    """Run agent tests"""
    print("🚀 Iso-Dream Lab - Agent Test Suite")
    print("=" * 60)

    tests = [
        ("Replay Buffer", test_replay_buffer),
        ("Act Determinism", test_act_determinism),
        ("Single-Row Window", test_single_row_window),
        ("s_only Independence", test_s_only_policy_ignores_action_free_branch),
        ("Record Convention", test_run_episode_record_convention),
        ("Training Loop", test_training_loop_determinism_and_log),
        ("Zero Updates", test_zero_updates_leave_parameters),
        ("World-Model Isolation", test_world_model_update_leaves_behavior),
        ("Checkpoint and Evaluate", test_checkpoint_and_evaluate),
        ("Checkpoint Loss", test_checkpoint_reproduces_loss),
        ("Crash Dump", test_non_finite_update_dumps_crash),
        ("Inverse Dynamics", test_inverse_dynamics_beats_mean_action),
        ("Policy Service", test_policy_service),
    ]

    results = []
    for test_name, test_func in tests:
        print(f"\n{'='*20} {test_name} {'='*20}")
        try:
            test_func()
            success = True
        except AssertionError as e:
            print(f"❌ {e}")
            success = False
        results.append((test_name, success))

    # Summary
    print("\n" + "="*60)
    print("📊 AGENT TEST SUMMARY")
    print("="*60)

    passed = sum(1 for _, success in results if success)
    total = len(results)

    for test_name, success in results:
        status = "✅ PASSED" if success else "❌ FAILED"
        print(f"{status}: {test_name}")

    print(f"\nResults: {passed}/{total} tests passed")
    return 0 if passed == total else 1


if __name__ == "__main__":
    sys.exit(main())
