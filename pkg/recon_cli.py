#!/usr/bin/env python3
"""
Command-line entry point for the reconstruction pipeline.

Subcommands:
    phantom      render the synthetic phantom            -> truth.dra
    acquire      simulate golden-angle measurements      -> measurements.dra
    reconstruct  fit generator and latents               -> images.dra, latents.dra, history.jsonl
    evaluate     compare runs against the phantom truth  -> report_<run>.json, timing.json, CSV data
    plot         render figures from evaluation data     -> *.png

Every command writes a manifest.json holding the fully resolved config,
seeds, and content hashes of its inputs and outputs. Passing a manifest
back with --config reruns the command with identical settings.

Exit codes:
    0  success
    2  validation error (invalid config or arguments)
    3  input not found
    4  runtime failure (divergence, I/O, numerical)
"""

import argparse
import glob
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional

import torch

import archive
import figures
from config import config, configure_logging, load_run_config
from evaluation import compare_runs, evaluate_reconstruction, final_ser, read_plot_data, read_latent_data
from evaluation import read_time_profile, time_profile, write_latent_data, write_plot_data, write_time_profile
from evaluation import write_timing_table
from generator import GeneratorConfig
from phantom import PhantomSpec, make_phantom, simulate_acquisition, ventricle_row
from trainer import TrainConfig, TrainHistory, reconstruct


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_FOUND = 3
EXIT_RUNTIME = 4

MANIFEST_VERSION = 1


def git_blob_hash(path: str) -> str:
    """Content hash computed the way git hashes a blob."""
    with open(path, "rb") as f:
        content = f.read()
    return hashlib.sha1(b"blob %d\x00" % len(content) + content).hexdigest()


@dataclass
class RunManifest:
    """Everything needed to rerun one command."""
    command: str
    config: Dict[str, Any]
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    flags: Dict[str, Any] = field(default_factory=dict)
    manifest_version: int = MANIFEST_VERSION

    def add_input(self, path: str) -> None:
        self.inputs[path] = git_blob_hash(path)

    def add_output(self, path: str) -> None:
        self.outputs[path] = git_blob_hash(path)

    def save(self, directory: str) -> str:
        path = os.path.join(directory, "manifest.json")
        try:
            with open(path, "w") as f:
                json.dump(asdict(self), f, indent=2 if config.pretty_print else None, sort_keys=True)
        except OSError as e:
            raise IOError(f"Error writing manifest {path}: {e}")
        return path


def _resolve_config(args) -> Dict[str, Any]:
    """Defaults merged with the --config file (a run config or a manifest) and --seed."""
    overrides = load_run_config(args.config)
    if "manifest_version" in overrides:
        overrides = overrides["config"]
    resolved = config.resolve(overrides)
    if getattr(args, "seed", None) is not None:
        for section in ("phantom", "acquisition", "generator", "training"):
            resolved[section]["seed"] = args.seed
    return resolved


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"input not found: {path}")
    return path


def _apply_compute(resolved: Dict[str, Any]) -> str:
    threads = resolved["compute"].get("num_threads")
    if threads:
        torch.set_num_threads(int(threads))
    return resolved["compute"].get("device", "cpu")


# =============================================================================
# Subcommands
# =============================================================================

def cmd_phantom(args) -> int:
    resolved = _resolve_config(args)
    spec = PhantomSpec.from_dict(resolved["phantom"])
    truth = make_phantom(spec)

    os.makedirs(args.out, exist_ok=True)
    truth_path = config.get_archive_path(args.out, "truth")
    archive.save_phantom_truth(truth, truth_path)

    manifest = RunManifest(command="phantom", config=resolved, seeds={"phantom": spec.seed})
    manifest.add_output(truth_path)
    manifest.save(args.out)
    print(f"Phantom: {spec.num_frames} frames of {spec.grid_shape[0]}x{spec.grid_shape[1]} -> {truth_path}")
    return EXIT_OK


def cmd_acquire(args) -> int:
    resolved = _resolve_config(args)
    truth = archive.load_phantom_truth(_require(args.truth))
    settings = resolved["acquisition"]
    noise_sigma = settings["noise_sigma"]
    if noise_sigma is None:
        noise_sigma = truth.spec.noise_sigma
        settings["noise_sigma"] = noise_sigma

    mset = simulate_acquisition(
        truth,
        lines_per_frame=settings["lines_per_frame"],
        num_coils=settings["num_coils"],
        noise_sigma=noise_sigma,
        seed=settings["seed"],
    )
    os.makedirs(args.out, exist_ok=True)
    mset_path = config.get_archive_path(args.out, "measurements")
    archive.save_measurement_set(mset, mset_path)

    manifest = RunManifest(command="acquire", config=resolved, seeds={"acquisition": settings["seed"]})
    manifest.add_input(args.truth)
    manifest.add_output(mset_path)
    manifest.save(args.out)
    print(f"Measurements: {mset.num_frames} frames, {mset.total_samples()} samples -> {mset_path}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    resolved = _resolve_config(args)
    if args.mode is not None:
        resolved["training"]["mode"] = args.mode
    device = _apply_compute(resolved)

    mset = archive.load_measurement_set(_require(args.measurements))
    reference = None
    if args.reference is not None:
        reference = archive.load_phantom_truth(_require(args.reference)).images

    if list(resolved["generator"]["output_shape"]) != list(mset.grid_shape):
        logger.info("Generator output shape set to the measurement grid %s", list(mset.grid_shape))
        resolved["generator"]["output_shape"] = list(mset.grid_shape)
    gen_config = GeneratorConfig.from_dict(resolved["generator"])
    train_config = TrainConfig.from_dict(resolved["training"])
    if args.no_progressive:
        train_config = train_config.single_stage(mset.num_frames)
        resolved["training"]["stage_frame_counts"] = train_config.stage_frame_counts
        resolved["training"]["epochs_per_stage"] = train_config.epochs_per_stage

    os.makedirs(args.out, exist_ok=True)
    state, latents, images, history = reconstruct(
        mset, gen_config, train_config, reference=reference,
        checkpoint_dir=os.path.join(args.out, "checkpoints"), resume=args.resume or args.resume_stage is not None,
        resume_stage=args.resume_stage, device=device,
    )

    outputs = {
        "images": config.get_archive_path(args.out, "images"),
        "latents": config.get_archive_path(args.out, "latents"),
        "generator": config.get_archive_path(args.out, "generator"),
    }
    archive.save_image_series(images, outputs["images"])
    archive.save_latents(latents, outputs["latents"])
    archive.save_generator(state, outputs["generator"])
    history_path = os.path.join(args.out, "history.jsonl")
    history.to_jsonl(history_path)

    manifest = RunManifest(
        command="reconstruct", config=resolved,
        seeds={"generator": gen_config.seed, "training": train_config.seed},
        flags={"mode": train_config.mode, "no_progressive": args.no_progressive, "resume": args.resume,
               "resume_stage": args.resume_stage},
    )
    manifest.add_input(args.measurements)
    if args.reference is not None:
        manifest.add_input(args.reference)
    for path in list(outputs.values()) + [history_path]:
        manifest.add_output(path)
    manifest.save(args.out)

    final = final_ser(history, magnitude=False)
    summary = f"Reconstructed {images.shape[0]} frames in {history.last_wall_seconds:.1f} s"
    if final is not None:
        summary += f", final SER {final:.2f} dB"
    print(summary)
    return EXIT_OK


def _run_name(run_dir: str) -> str:
    return os.path.basename(os.path.normpath(run_dir))


def cmd_evaluate(args) -> int:
    resolved = _resolve_config(args)
    truth = archive.load_phantom_truth(_require(args.reference))
    mset = archive.load_measurement_set(_require(args.measurements)) if args.measurements else None
    magnitude = resolved["evaluation"]["use_magnitude"]
    os.makedirs(args.out, exist_ok=True)

    manifest = RunManifest(command="evaluate", config=resolved)
    manifest.add_input(args.reference)
    if args.measurements:
        manifest.add_input(args.measurements)
    row = resolved["evaluation"]["profile_row"]
    row = ventricle_row(truth.spec) if row is None else int(row)
    profile_path = os.path.join(args.out, "profile_truth.csv")
    write_time_profile(time_profile(truth.images, row), profile_path)
    manifest.add_output(profile_path)

    histories: Dict[str, TrainHistory] = {}
    reports = {}
    for run_dir in args.runs:
        name = _run_name(run_dir)
        images_path = _require(os.path.join(run_dir, "images" + config.archive_extension))
        latents_path = _require(os.path.join(run_dir, "latents" + config.archive_extension))
        history_path = _require(os.path.join(run_dir, "history.jsonl"))
        images = archive.load_image_series(images_path)
        latents = archive.load_latents(latents_path)
        history = TrainHistory.from_jsonl(history_path)
        histories[name] = history
        reports[name] = evaluate_reconstruction(images, truth, latents=latents, mset=mset, history=history)
        write_latent_data(latents, os.path.join(args.out, f"latents_{name}.csv"))
        write_time_profile(time_profile(images, row), os.path.join(args.out, f"profile_{name}.csv"))
        for path in (images_path, latents_path, history_path):
            manifest.add_input(path)

    threshold = args.threshold if args.threshold is not None else resolved["evaluation"]["threshold_ser_db"]
    if threshold is None:
        finals = [final_ser(h, magnitude) for h in histories.values() if final_ser(h, magnitude) is not None]
        threshold = min(finals) if finals else None
    if threshold is not None:
        rows = compare_runs(histories, threshold, magnitude=magnitude)
        write_timing_table(rows, threshold, os.path.join(args.out, "timing.json"))
        for row in rows:
            reports[row.run].timing = row.to_dict()
            print(f"  {row.run}: threshold {threshold:.2f} dB reached at "
                  f"{row.to_dict()['wall_seconds']}, final {row.final_ser_db}")
        manifest.add_output(os.path.join(args.out, "timing.json"))

    write_plot_data(histories, os.path.join(args.out, "plot_data.csv"))
    manifest.add_output(os.path.join(args.out, "plot_data.csv"))
    for name, report in reports.items():
        path = os.path.join(args.out, f"report_{name}.json")
        report.save(path)
        manifest.add_output(path)
        manifest.add_output(os.path.join(args.out, f"latents_{name}.csv"))
        manifest.add_output(os.path.join(args.out, f"profile_{name}.csv"))
        print(f"{name}: SER {report.ser_db:.2f} dB, magnitude SER {report.ser_mag_db:.2f} dB")
    manifest.save(args.out)
    return EXIT_OK


def cmd_plot(args) -> int:
    resolved = _resolve_config(args)
    magnitude = resolved["evaluation"]["use_magnitude"]
    plot_data = _require(os.path.join(args.data, "plot_data.csv"))
    runs = read_plot_data(plot_data)
    out = args.out or args.data
    os.makedirs(out, exist_ok=True)

    threshold = None
    timing_path = os.path.join(args.data, "timing.json")
    if os.path.exists(timing_path):
        with open(timing_path) as f:
            threshold = json.load(f)["threshold_ser_db"]

    written = [os.path.join(out, "ser_vs_time.png"), os.path.join(out, "ser_vs_epoch.png")]
    figures.plot_ser_vs_time(runs, written[0], magnitude=magnitude, threshold=threshold)
    figures.plot_ser_vs_epoch(runs, written[1], magnitude=magnitude)
    for path in sorted(glob.glob(os.path.join(args.data, "latents_*.csv"))):
        name = os.path.splitext(os.path.basename(path))[0][len("latents_"):]
        target = os.path.join(out, f"latents_{name}.png")
        figures.plot_latents(read_latent_data(path), target, title=name)
        written.append(target)
    for path in sorted(glob.glob(os.path.join(args.data, "profile_*.csv"))):
        name = os.path.splitext(os.path.basename(path))[0][len("profile_"):]
        target = os.path.join(out, f"profile_{name}.png")
        figures.plot_time_profile(read_time_profile(path), target, title=name)
        written.append(target)

    manifest = RunManifest(command="plot", config=resolved)
    manifest.add_input(plot_data)
    for path in written:
        manifest.add_output(path)
    manifest.save(out)
    print(f"Wrote {len(written)} figures to {out}")
    return EXIT_OK


# =============================================================================
# Argument parsing
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recon_cli", description="Latent-manifold dynamic image reconstruction")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_common(sub, needs_out: bool = True):
        sub.add_argument("--config", default=None, help="JSON run config or manifest")
        sub.add_argument("--seed", type=int, default=None, help="override every seed")
        if needs_out:
            sub.add_argument("--out", required=True, help="output directory")

    sub = subparsers.add_parser("phantom", help="render the synthetic phantom")
    add_common(sub)
    sub.set_defaults(handler=cmd_phantom)

    sub = subparsers.add_parser("acquire", help="simulate measurements of a phantom")
    sub.add_argument("truth", help="phantom truth archive")
    add_common(sub)
    sub.set_defaults(handler=cmd_acquire)

    sub = subparsers.add_parser("reconstruct", help="reconstruct an image series")
    sub.add_argument("measurements", help="measurement archive")
    add_common(sub)
    sub.add_argument("--reference", default=None, help="phantom truth for SER logging")
    sub.add_argument("--mode", choices=["joint", "fixed-latent"], default=None, help="training mode")
    sub.add_argument("--no-progressive", action="store_true", help="train all frames in a single stage")
    sub.add_argument("--resume", action="store_true", help="continue from the latest stage checkpoint")
    sub.add_argument("--resume-stage", type=int, default=None, help="continue after the checkpoint of this stage")
    sub.set_defaults(handler=cmd_reconstruct)

    sub = subparsers.add_parser("evaluate", help="evaluate reconstruction runs")
    sub.add_argument("runs", nargs="+", help="run directories written by reconstruct")
    add_common(sub)
    sub.add_argument("--reference", required=True, help="phantom truth archive")
    sub.add_argument("--measurements", default=None, help="measurement archive for the zero-filled baseline")
    sub.add_argument("--threshold", type=float, default=None, help="SER threshold in dB for the timing table")
    sub.set_defaults(handler=cmd_evaluate)

    sub = subparsers.add_parser("plot", help="render figures from evaluation data")
    sub.add_argument("data", help="directory written by evaluate")
    add_common(sub, needs_out=False)
    sub.add_argument("--out", default=None, help="figure directory (defaults to the data directory)")
    sub.set_defaults(handler=cmd_plot)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_VALIDATION

    try:
        configure_logging(_resolve_config(args)["logging"])
        return args.handler(args)
    except FileNotFoundError as e:
        print(f"FileNotFoundError: {e}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except ValueError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, RuntimeError, OSError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
