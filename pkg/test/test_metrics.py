#!/usr/bin/env python3
"""
Metrics Test for Iso-Dream Lab
Tests PSNR, SSIM, mask IoU, curve aggregation and open-loop prediction
"""

import sys
import tempfile
from dataclasses import replace
from pathlib import Path

# Add parent directory to Python path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd
import torch
from PIL import Image

from config import load_preset
from controller import LoadedCheckpoint, PSNR_CAP, aggregate_curves, evaluate_prediction, mask_iou, plot_curves, \
    predict_rollout, psnr, run_episode, save_strip, ssim
from controller.metrics import SSIM_C1, SSIM_C2, SSIM_STRIDE, SSIM_WINDOW
from envs import DriftWorld, generate_pushing_dataset
from models import ActorCritic, WorldModel


def brute_force_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Loop-by-loop reference for the windowed grayscale SSIM"""
    gray_a, gray_b = a.mean(axis=-1), b.mean(axis=-1)
    values = []
    for i in range(0, gray_a.shape[0] - SSIM_WINDOW + 1, SSIM_STRIDE):
        for j in range(0, gray_a.shape[1] - SSIM_WINDOW + 1, SSIM_STRIDE):
            pa = gray_a[i:i + SSIM_WINDOW, j:j + SSIM_WINDOW]
            pb = gray_b[i:i + SSIM_WINDOW, j:j + SSIM_WINDOW]
            mu_a, mu_b = pa.mean(), pb.mean()
            cov = ((pa - mu_a) * (pb - mu_b)).mean()
            values.append(((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2))
                          / ((mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (pa.var() + pb.var() + SSIM_C2)))
    return float(np.mean(values))


def test_psnr():
    print("📏 Testing PSNR...")
    zeros = np.zeros((8, 8, 3))
    assert psnr(zeros, zeros) == PSNR_CAP
    assert abs(psnr(zeros, np.full_like(zeros, 0.1)) - 20.0) < 1e-9
    assert abs(psnr(zeros, np.full_like(zeros, 0.5)) - 6.0206) < 1e-4
    print("✓ cap 100 dB, MSE 0.01 -> 20 dB, MSE 0.25 -> 6.0206 dB")

    try:
        psnr(zeros, np.zeros((4, 4, 3)))
    except ValueError:
        print("✓ shape mismatch rejected")
    else:
        raise AssertionError("shape mismatch accepted")


def test_ssim():
    print("🖼️ Testing SSIM...")
    rng = np.random.default_rng(0)
    image = rng.random((16, 16, 3))
    assert abs(ssim(image, image) - 1.0) < 1e-12
    other = rng.random((16, 16, 3))
    assert abs(ssim(image, other) - ssim(other, image)) < 1e-12
    print("✓ identity gives 1, SSIM symmetric")

    constant = ssim(np.zeros((16, 16, 3)), np.ones((16, 16, 3)))
    assert abs(constant - SSIM_C1 / (1 + SSIM_C1)) < 1e-12
    print(f"✓ constant 0 vs 1 -> {constant:.3e}")

    for _ in range(10):
        a, b = rng.random((24, 20, 3)), rng.random((24, 20, 3))
        assert abs(ssim(a, b) - brute_force_ssim(a, b)) < 1e-9
    print("✓ matches the loop reference on 10 random pairs")

    try:
        ssim(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))
    except ValueError:
        print("✓ image smaller than the window rejected")
    else:
        raise AssertionError("tiny image accepted")


def test_mask_iou():
    print("🎭 Testing mask IoU...")
    gt = np.zeros((20, 20), dtype=bool)
    gt[:10, :] = True
    pred = np.zeros((20, 20))
    pred[:5, :] = 0.9
    assert mask_iou(pred, gt) == 0.5
    assert mask_iou(gt.astype(float), gt) == 1.0
    assert mask_iou(np.zeros((20, 20)), np.zeros((20, 20), dtype=bool)) == 1.0
    assert mask_iou(np.ones((20, 20)), np.zeros((20, 20), dtype=bool)) == 0.0
    print("✓ 100 of 200 pixels -> 0.5, empty union -> 1")


def write_log(path: Path, steps, returns):
    pd.DataFrame({"step": steps, "episode_return": returns}).to_csv(path, index=False)
    return path


def test_curve_aggregation():
    print("📈 Testing return curves...")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        single = write_log(tmp / "single_seed.csv", [0, 10, 20], [1.0, 2.0, 3.0])
        summary = plot_curves([single], tmp / "one.png")
        assert (tmp / "one.png").exists() and (tmp / "one.csv").exists()
        assert np.all(summary["std"] == 0.0) and summary["mean"].tolist() == [1.0, 2.0, 3.0]
        print("✓ one seed -> std 0")

        logs = [write_log(tmp / f"seed{i}.csv", [0, 10], [float(i), float(2 * i)]) for i in range(3)]
        summary = plot_curves(logs, tmp / "three.png", summary_path=tmp / "three_summary.csv")
        assert np.allclose(summary["std"], [np.std([0, 1, 2], ddof=1), np.std([0, 2, 4], ddof=1)])
        assert pd.read_csv(tmp / "three_summary.csv")["runs"].tolist() == [3, 3]
        print("✓ three seeds -> sample standard deviation")

        coarse = write_log(tmp / "coarse.csv", [0, 10], [0.0, 10.0])
        fine = write_log(tmp / "fine.csv", [0, 5, 10], [0.0, 0.0, 0.0])
        summary = aggregate_curves([coarse, fine])
        assert summary["step"].tolist() == [0.0, 5.0, 10.0]
        assert summary["mean"].tolist() == [0.0, 2.5, 5.0]
        print("✓ logs interpolated onto the union of steps")

        broken = tmp / "broken.csv"
        broken.write_text("not,a,metrics,log\n1,2,3,4\n")
        empty = tmp / "empty.csv"
        empty.write_text("")
        for path in (broken, empty):
            try:
                aggregate_curves([path])
            except ValueError:
                continue
            raise AssertionError(f"{path.name} accepted")
        print("✓ malformed logs rejected")


def make_checkpoint():
    config = load_preset("tiny")
    torch.manual_seed(0)
    return LoadedCheckpoint(config, WorldModel(config), ActorCritic(config))


def make_episode(config, seed: int = 3):
    world = DriftWorld.from_config(config, terminate_on_goal=False)
    return run_episode(world, seed, agent=None)


def test_predict_rollout():
    print("🔮 Testing open-loop prediction...")
    checkpoint = make_checkpoint()
    episode = make_episode(checkpoint.config)
    assert len(episode) == 13

    result = predict_rollout(checkpoint, episode, context=3, horizon=4)
    assert result.frame_indices == [3, 4, 5, 6]
    assert result.composed.shape == (4, 16, 16, 3) and result.M_s.shape == (4, 16, 16)
    assert len(result.report.psnr) == 4 and all(0 < value <= PSNR_CAP for value in result.report.psnr)
    assert result.disentanglement is not None and len(result.disentanglement.iou_z) == 4
    print(f"✓ horizon 4 from 3 context frames, PSNR {result.report.mean_psnr:.2f} dB")

    reconstruction = predict_rollout(checkpoint, episode, context=3, horizon=0)
    assert reconstruction.frame_indices == [0, 1, 2]
    print("✓ horizon 0 reports the context reconstruction")

    poisoned_obs = episode.obs.copy()
    poisoned_obs[3:] = 255 - poisoned_obs[3:]
    poisoned = replace(episode, obs=poisoned_obs)
    again = predict_rollout(checkpoint, poisoned, context=3, horizon=4)
    assert np.array_equal(result.composed, again.composed)
    print("✓ frames after the context never reach the model")

    try:
        predict_rollout(checkpoint, episode, context=10, horizon=4)
    except ValueError:
        print("✓ horizon past the episode end rejected")
    else:
        raise AssertionError("horizon past the episode accepted")

    with tempfile.TemporaryDirectory() as tmp:
        path = save_strip(result, Path(tmp) / "strip.png")
        with Image.open(path) as strip:
            assert strip.size == (4 * 16, 7 * 16)
    print("✓ strip with truth, composite and every branch")


def test_evaluate_prediction():
    print("🧾 Testing prediction report...")
    checkpoint = make_checkpoint()
    world = DriftWorld.from_config(checkpoint.config)
    with tempfile.TemporaryDirectory() as tmp:
        dataset = Path(tmp) / "pushing"
        generate_pushing_dataset(7, 2, 10, dataset, world)
        out_dir = Path(tmp) / "report"
        summary = evaluate_prediction(checkpoint, dataset, context=3, horizon=4, out_dir=out_dir, strips=1)
        assert summary["episodes"] == 2
        for key in ("psnr", "ssim", "copy_last_psnr", "iou_s", "iou_z"):
            assert np.isfinite(summary[key]), key
        report = pd.read_csv(out_dir / "prediction_report.csv")
        assert len(report) == 2 and "copy_last_psnr" in report.columns
        assert "psnr" in (out_dir / "prediction_report.txt").read_text()
        assert (out_dir / "strip_000.png").exists() and not (out_dir / "strip_001.png").exists()
    print(f"✓ model {summary['psnr']:.2f} dB vs copy-last {summary['copy_last_psnr']:.2f} dB")


def main():
    """Run metrics tests"""
    print("🚀 Iso-Dream Lab - Metrics Test Suite")
    print("=" * 60)

    tests = [
        ("PSNR", test_psnr),
        ("SSIM", test_ssim),
        ("Mask IoU", test_mask_iou),
        ("Curve Aggregation", test_curve_aggregation),
        ("Predict Rollout", test_predict_rollout),
        ("Prediction Report", test_evaluate_prediction),
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
    print("📊 METRICS TEST SUMMARY")
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
