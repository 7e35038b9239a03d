#!/usr/bin/env python3
"""
Acceptance studies on the synthetic phantom.

Runs the joint reconstruction with and without the progressive schedule,
without regularization, without each penalty on its own, and in
fixed-latent mode, then checks:

    - quality against the zero-filled baseline
    - the SER trend of regularized and unregularized training
    - separation of the latent channels into the two motions
    - time to reach the single-stage SER with the progressive schedule
    - joint versus fixed-latent final SER
    - determinism of repeated runs
    - the SER trend with the network penalty switched off
    - latent separation with the temporal penalty switched off

Usage:
    python experiments.py [--reduced] [--out experiments_out]
"""

import argparse
import copy
import logging
import os
from dataclasses import replace

import archive
import figures
from config import config, configure_logging
from evaluation import (
    compare_runs, evaluate_reconstruction, final_ser, latent_motion_correlation, magnitude_ser,
    read_plot_data, regularization_trend, time_profile, write_plot_data, write_timing_table, zero_filled
)
from generator import GeneratorConfig
from objective import RegWeights
from phantom import PhantomSpec, make_phantom, simulate_acquisition, ventricle_row
from trainer import TrainConfig, reconstruct


logger = logging.getLogger(__name__)

REDUCED_OVERRIDES = {
    "phantom": {"grid_shape": [32, 32], "num_frames": 60},
    "generator": {"output_shape": [32, 32], "base_channels": 32},
    "training": {"epochs_per_stage": [60, 30, 60]},
}


def _mark(ok: bool) -> str:
    return "✓ PASS" if ok else "✗ FAIL"


def build_settings(reduced: bool) -> dict:
    return config.resolve(copy.deepcopy(REDUCED_OVERRIDES) if reduced else None)


def simulate(settings: dict):
    spec = PhantomSpec.from_dict(settings["phantom"])
    truth = make_phantom(spec)
    acquisition = settings["acquisition"]
    noise_sigma = spec.noise_sigma if acquisition["noise_sigma"] is None else acquisition["noise_sigma"]
    mset = simulate_acquisition(truth, acquisition["lines_per_frame"], acquisition["num_coils"],
                                noise_sigma, acquisition["seed"])
    return truth, mset


def run(name: str, mset, truth, gen_config: GeneratorConfig, train_config: TrainConfig, out_dir: str):
    print(f"\n--- {name} ---")
    run_dir = os.path.join(out_dir, name)
    state, latents, images, history = reconstruct(
        mset, gen_config, train_config, reference=truth.images,
        checkpoint_dir=os.path.join(run_dir, "checkpoints"), device=config.device,
    )
    archive.save_image_series(images, config.get_archive_path(run_dir, "images"))
    archive.save_latents(latents, config.get_archive_path(run_dir, "latents"))
    history.to_jsonl(os.path.join(run_dir, "history.jsonl"))
    report = evaluate_reconstruction(images, truth, latents=latents, history=history)
    report.save(os.path.join(run_dir, "report.json"))
    print(f"   SER {report.ser_db:.2f} dB, magnitude SER {report.ser_mag_db:.2f} dB, "
          f"{history.last_wall_seconds:.1f} s")
    return {"images": images, "latents": latents, "history": history, "report": report}


def determinism_check() -> bool:
    """Two identical small runs must log identical costs."""
    spec = PhantomSpec(grid_shape=(16, 16), num_frames=8, cardiac_period=3.3, resp_period=7.1, noise_sigma=0.0)
    truth = make_phantom(spec)
    mset = simulate_acquisition(truth, lines_per_frame=4)
    gen_config = GeneratorConfig(output_shape=(16, 16), base_channels=8)
    train_config = TrainConfig(epochs_per_stage=[2, 2, 2], batch_size=3, eval_every=1)
    first = reconstruct(mset, gen_config, train_config)[3].costs()
    second = reconstruct(mset, gen_config, train_config)[3].costs()
    return first == second


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Acceptance studies on the synthetic phantom")
    parser.add_argument("--reduced", action="store_true", help="smaller phantom and budget for CPU-only machines")
    parser.add_argument("--out", default="experiments_out", help="output directory")
    args = parser.parse_args(argv)

    settings = build_settings(args.reduced)
    configure_logging(settings["logging"])
    os.makedirs(args.out, exist_ok=True)

    print("=== Acceptance studies ===")
    print(f"Budget: {'reduced' if args.reduced else 'full'}")
    truth, mset = simulate(settings)
    num_frames = mset.num_frames
    print(f"Phantom: {num_frames} frames of {truth.images.shape[1]}x{truth.images.shape[2]}, "
          f"{mset.total_samples()} samples")

    gen_config = GeneratorConfig.from_dict(settings["generator"])
    joint = TrainConfig.from_dict(settings["training"])
    single = joint.single_stage(num_frames)
    unregularized = replace(joint, weights=RegWeights(lambda1=0.0, lambda2=0.0))
    no_network_reg = replace(joint, weights=RegWeights(lambda1=0.0, lambda2=joint.weights.lambda2))
    no_temporal_reg = replace(joint, weights=RegWeights(lambda1=joint.weights.lambda1, lambda2=0.0))
    fixed = replace(single, mode="fixed-latent")

    runs = {
        "progressive": run("progressive", mset, truth, gen_config, joint, args.out),
        "single_stage": run("single_stage", mset, truth, gen_config, single, args.out),
        "unregularized": run("unregularized", mset, truth, gen_config, unregularized, args.out),
        "no_network_reg": run("no_network_reg", mset, truth, gen_config, no_network_reg, args.out),
        "no_temporal_reg": run("no_temporal_reg", mset, truth, gen_config, no_temporal_reg, args.out),
        "fixed_latent": run("fixed_latent", mset, truth, gen_config, fixed, args.out),
    }
    histories = {name: result["history"] for name, result in runs.items()}
    results = []

    print("\n=== Checks ===")
    zf_ser = magnitude_ser(zero_filled(mset), truth.images)
    joint_ser = runs["progressive"]["report"].ser_mag_db
    ok = joint_ser >= zf_ser + 6.0
    results.append(ok)
    print(f"1. Quality vs zero-filled: {_mark(ok)} {joint_ser:.2f} dB vs {zf_ser:.2f} dB")

    regularized_trend = regularization_trend(runs["progressive"]["history"])
    unregularized_trend = regularization_trend(runs["unregularized"]["history"])
    ok = regularized_trend["final_minus_halfway"] >= -0.5 and unregularized_trend["max_minus_final"] >= 1.0
    results.append(ok)
    print(f"2. Regularization trend: {_mark(ok)} regularized final-halfway "
          f"{regularized_trend['final_minus_halfway']:+.2f} dB, unregularized max-final "
          f"{unregularized_trend['max_minus_final']:.2f} dB")

    corr_reg = latent_motion_correlation(runs["progressive"]["latents"], truth)
    corr_unreg = latent_motion_correlation(runs["unregularized"]["latents"], truth)
    ok = corr_reg.min_assigned() >= 0.7 and corr_unreg.min_assigned() < corr_reg.min_assigned()
    results.append(ok)
    print(f"3. Latent separation: {_mark(ok)} {corr_reg.assignment} min |corr| "
          f"{corr_reg.min_assigned():.2f} (unregularized {corr_unreg.min_assigned():.2f})")

    threshold = final_ser(runs["single_stage"]["history"])
    rows = {row.run: row for row in compare_runs(
        {"progressive": histories["progressive"], "single_stage": histories["single_stage"]}, threshold)}
    write_timing_table(list(rows.values()), threshold, os.path.join(args.out, "timing.json"))
    progressive_time = rows["progressive"].wall_seconds
    single_time = histories["single_stage"].last_wall_seconds
    ok = progressive_time is not None and progressive_time <= 0.5 * single_time
    results.append(ok)
    print(f"4. Progressive speedup: {_mark(ok)} {progressive_time} s vs {single_time:.1f} s "
          f"to reach {threshold:.2f} dB")

    fixed_ser = final_ser(histories["fixed_latent"])
    single_ser = final_ser(histories["single_stage"])
    ok = fixed_ser <= single_ser - 1.0
    results.append(ok)
    print(f"5. Joint vs fixed latents: {_mark(ok)} {single_ser:.2f} dB vs {fixed_ser:.2f} dB")

    ok = determinism_check()
    results.append(ok)
    print(f"6. Determinism: {_mark(ok)}")

    no_network_trend = regularization_trend(histories["no_network_reg"])
    ok = (no_network_trend["max_minus_final"] > regularized_trend["max_minus_final"]
          and no_network_trend["final_minus_halfway"] < regularized_trend["final_minus_halfway"])
    results.append(ok)
    print(f"7. Without network penalty: {_mark(ok)} max-final {no_network_trend['max_minus_final']:.2f} dB "
          f"(regularized {regularized_trend['max_minus_final']:.2f} dB), final-halfway "
          f"{no_network_trend['final_minus_halfway']:+.2f} dB")

    corr_no_temporal = latent_motion_correlation(runs["no_temporal_reg"]["latents"], truth)
    corr_no_network = latent_motion_correlation(runs["no_network_reg"]["latents"], truth)
    ok = corr_no_temporal.min_assigned() < corr_reg.min_assigned()
    results.append(ok)
    print(f"8. Without temporal penalty: {_mark(ok)} min |corr| {corr_no_temporal.min_assigned():.2f} "
          f"vs {corr_reg.min_assigned():.2f} (without network penalty {corr_no_network.min_assigned():.2f})")

    plot_data = os.path.join(args.out, "plot_data.csv")
    write_plot_data(histories, plot_data)
    plotted = read_plot_data(plot_data)
    figures.plot_ser_vs_time(plotted, os.path.join(args.out, "ser_vs_time.png"), threshold=threshold)
    figures.plot_ser_vs_epoch(plotted, os.path.join(args.out, "ser_vs_epoch.png"))
    for ablation in ("no_network_reg", "no_temporal_reg"):
        pair = {name: plotted[name] for name in ("progressive", ablation)}
        figures.plot_ser_vs_epoch(pair, os.path.join(args.out, f"ser_vs_epoch_{ablation}.png"))

    row = ventricle_row(truth.spec)
    figures.plot_time_profile(time_profile(truth.images, row), os.path.join(args.out, "profile_truth.png"),
                              title="truth")
    for name in ("progressive", "unregularized", "no_network_reg", "no_temporal_reg"):
        figures.plot_latents(runs[name]["latents"].numpy(), os.path.join(args.out, f"latents_{name}.png"), title=name)
        figures.plot_time_profile(time_profile(runs[name]["images"], row),
                                  os.path.join(args.out, f"profile_{name}.png"), title=name)

    passed = sum(results)
    print(f"\n=== {passed}/{len(results)} checks passed ===")
    print(f"Reports and figures written to '{args.out}'")
    return 0 if passed == len(results) else 1


if __name__ == "__main__":
    raise SystemExit(main())
