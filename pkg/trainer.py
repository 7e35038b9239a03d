#!/usr/bin/env python3
"""
Joint optimization of generator weights and per-frame latents.

Training runs in stages of increasing temporal resolution: the measurements
are binned into K_m frames, the latents of the previous stage are linearly
interpolated to K_m rows, the generator is warm-started, and ADAM minimizes
the reconstruction cost over random minibatches of frames. The fixed-latent
mode keeps the latents frozen at random (or interpolated random) values and
only fits the network.
"""

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, asdict, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

import archive
from evaluation import magnitude_ser, ser
from forward_model import MeasurementSet, bin_measurements
from generator import (GeneratorConfig, GeneratorState, NonFiniteError, generate, init_generator,
                       network_penalty)
from objective import CostTerms, LatentSequence, RegWeights, data_fidelity, latent_matrix, temporal_penalty, total_cost


logger = logging.getLogger(__name__)

MODES = ("joint", "fixed-latent")
FIXED_LATENT_KINDS = ("random", "interpolated")
LATENT_INIT_SCALE = 0.1
INTERPOLATION_JITTER = 1e-2
EVAL_CHUNK = 16


class TrainConfigError(ValueError):
    """Exception raised for invalid training configurations."""
    pass


class DivergenceError(RuntimeError):
    """Raised when the cost becomes NaN or infinite during training."""

    def __init__(self, message: str, step: int, stage: int, terms: Dict[str, float]):
        super().__init__(f"{message} (stage {stage}, step {step}, terms {terms})")
        self.step = step
        self.stage = stage
        self.terms = terms


@dataclass
class TrainConfig:
    """Optimizer, minibatch and stage schedule settings."""
    weights: RegWeights = field(default_factory=RegWeights)
    epochs_per_stage: List[int] = field(default_factory=lambda: [300, 150, 300])
    stage_frame_counts: Optional[List[int]] = None
    batch_size: int = 10
    lr_theta: float = 1e-4
    lr_z: float = 1e-3
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    mode: str = "joint"
    fixed_latent_kind: str = "random"
    eval_every: int = 5
    snapshot_every: int = 25

    def __post_init__(self):
        self.epochs_per_stage = [int(e) for e in self.epochs_per_stage]
        if self.stage_frame_counts is not None:
            self.stage_frame_counts = [int(c) for c in self.stage_frame_counts]
        self.adam_betas = tuple(float(b) for b in self.adam_betas)

    def resolved_schedule(self, num_frames: int) -> Tuple[List[int], List[int]]:
        """
        Frame counts and epochs per stage.

        Without explicit counts the schedule is [1, ceil(N/5), N]; repeated
        counts (small N) are merged and their epochs added together.
        """
        if self.stage_frame_counts is not None:
            return list(self.stage_frame_counts), list(self.epochs_per_stage)
        if len(self.epochs_per_stage) == 1:
            return [num_frames], list(self.epochs_per_stage)
        if len(self.epochs_per_stage) != 3:
            raise TrainConfigError(
                f"The default schedule has 3 stages; got {len(self.epochs_per_stage)} epoch counts"
            )
        counts: List[int] = []
        epochs: List[int] = []
        for count, epoch in zip([1, math.ceil(num_frames / 5), num_frames], self.epochs_per_stage):
            if counts and counts[-1] == count:
                epochs[-1] += epoch
            else:
                counts.append(count)
                epochs.append(epoch)
        return counts, epochs

    def validate(self, num_frames: int) -> None:
        """
        Check the configuration against a measurement set of num_frames frames.

        Raises:
            TrainConfigError: If any setting is invalid
        """
        counts, epochs = self.resolved_schedule(num_frames)
        if len(counts) != len(epochs):
            raise TrainConfigError(
                f"{len(counts)} stage frame counts but {len(epochs)} epoch counts"
            )
        if not counts or counts[0] < 1:
            raise TrainConfigError(f"First stage must have >= 1 frame, got {counts}")
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise TrainConfigError(f"stage_frame_counts must be strictly ascending, got {counts}")
        if counts[-1] != num_frames:
            raise TrainConfigError(f"Last stage must have {num_frames} frames, got {counts[-1]}")
        if any(e < 0 for e in epochs):
            raise TrainConfigError(f"Epoch counts must be >= 0, got {epochs}")
        if self.batch_size < 1:
            raise TrainConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_theta <= 0 or self.lr_z <= 0:
            raise TrainConfigError(f"Learning rates must be > 0, got {self.lr_theta}, {self.lr_z}")
        if len(self.adam_betas) != 2 or not all(0.0 <= b < 1.0 for b in self.adam_betas):
            raise TrainConfigError(f"adam_betas must be two values in [0, 1), got {self.adam_betas}")
        if self.mode not in MODES:
            raise TrainConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.fixed_latent_kind not in FIXED_LATENT_KINDS:
            raise TrainConfigError(
                f"fixed_latent_kind must be one of {FIXED_LATENT_KINDS}, got '{self.fixed_latent_kind}'"
            )
        if self.eval_every < 1:
            raise TrainConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.snapshot_every < 0:
            raise TrainConfigError(f"snapshot_every must be >= 0, got {self.snapshot_every}")

    def single_stage(self, num_frames: int) -> "TrainConfig":
        """The same budget collapsed into one stage over all frames."""
        _, epochs = self.resolved_schedule(num_frames)
        return replace(self, stage_frame_counts=[num_frames], epochs_per_stage=[sum(epochs)])

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        weights = data.pop("weights")
        data["lambda1"] = weights["lambda1"]
        data["lambda2"] = weights["lambda2"]
        data["adam_betas"] = list(self.adam_betas)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        data = dict(data)
        try:
            weights = RegWeights(lambda1=data.pop("lambda1", 0.001), lambda2=data.pop("lambda2", 2.0))
            return cls(weights=weights, **data)
        except (TypeError, ValueError) as e:
            raise TrainConfigError(f"Invalid training config: {e}")


@dataclass
class HistoryRecord:
    """One logged training step."""
    stage: int
    epoch: int
    global_epoch: int
    step: int
    wall_seconds: float
    num_frames: int
    data: float
    network: float
    temporal: float
    total: float
    ser_db: Optional[float] = None
    ser_mag_db: Optional[float] = None
    latents: Optional[List[List[float]]] = None


@dataclass
class TrainHistory:
    """Ordered training log."""
    records: List[HistoryRecord] = field(default_factory=list)

    def append(self, record: HistoryRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def last_wall_seconds(self) -> float:
        return self.records[-1].wall_seconds if self.records else 0.0

    @property
    def last_global_epoch(self) -> int:
        return self.records[-1].global_epoch if self.records else 0

    @property
    def last_step(self) -> int:
        return self.records[-1].step if self.records else 0

    def costs(self) -> List[float]:
        return [r.total for r in self.records]

    def ser_series(self, magnitude: bool = False) -> List[Tuple[float, Optional[float]]]:
        """(wall_seconds, SER) pairs of every record."""
        return [(r.wall_seconds, r.ser_mag_db if magnitude else r.ser_db) for r in self.records]

    def stage_records(self, stage: int) -> List[HistoryRecord]:
        return [r for r in self.records if r.stage == stage]

    def to_jsonl(self, path: str) -> None:
        """Write one JSON object per record."""
        try:
            with open(path, "w") as f:
                for record in self.records:
                    f.write(json.dumps(asdict(record), sort_keys=True) + "\n")
        except OSError as e:
            raise IOError(f"Error writing history {path}: {e}")

    @classmethod
    def from_jsonl(cls, path: str) -> "TrainHistory":
        if not os.path.exists(path):
            raise FileNotFoundError(f"History file not found: {path}")
        history = cls()
        try:
            with open(path) as f:
                for line in f:
                    if line.strip():
                        history.append(HistoryRecord(**json.loads(line)))
        except (json.JSONDecodeError, TypeError) as e:
            raise IOError(f"Error reading history {path}: {e}")
        return history


# =============================================================================
# Latent initialization
# =============================================================================

def interpolate_latents(z_src, target_len: int, generator: Optional[torch.Generator] = None,
                        jitter: float = INTERPOLATION_JITTER) -> torch.Tensor:
    """
    Resample an M x d latent sequence to K rows.

    Each coordinate is interpolated linearly on a uniform grid mapping
    source indices [0, M-1] onto [0, K-1]. A single source row is broadcast
    and perturbed uniformly in [-jitter, jitter] so the rows are not
    identical. Without a generator the jitter is drawn from one seeded with 0.

    Args:
        z_src: M x d latents
        target_len (int): K >= M
        generator (Optional[torch.Generator]): source of the jitter
        jitter (float): perturbation half-width for M = 1

    Returns:
        torch.Tensor: K x d latents

    Raises:
        TrainConfigError: If M < 1 or K < M
    """
    z = torch.as_tensor(z_src, dtype=torch.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise TrainConfigError(f"Source latents must be M x d with M >= 1, got {tuple(z.shape)}")
    num_src = z.shape[0]
    if target_len < num_src:
        raise TrainConfigError(f"Cannot interpolate {num_src} latents down to {target_len}")
    if target_len == num_src:
        return z.clone()
    if num_src == 1:
        out = z.expand(target_len, -1).clone()
        if jitter > 0:
            if generator is None:
                generator = torch.Generator().manual_seed(0)
            noise = torch.rand(out.shape, generator=generator, dtype=torch.float64) * 2.0 - 1.0
            out = out + jitter * noise.to(out.device)
        return out
    positions = torch.linspace(0.0, num_src - 1.0, target_len, dtype=torch.float64, device=z.device)
    lower = positions.floor().long().clamp(max=num_src - 2)
    frac = (positions - lower.to(torch.float64)).unsqueeze(1)
    return z[lower] * (1.0 - frac) + z[lower + 1] * frac


def random_latents(num_frames: int, latent_dim: int, seed: int) -> torch.Tensor:
    """Latents drawn from N(0, 0.1^2)."""
    rng = torch.Generator().manual_seed(int(seed))
    return LATENT_INIT_SCALE * torch.randn(num_frames, latent_dim, generator=rng, dtype=torch.float64)


def fixed_latents(num_frames: int, latent_dim: int, kind: str = "random", seed: int = 0) -> torch.Tensor:
    """
    Frozen latents of the fixed-latent baseline.

    `random` draws every frame independently; `interpolated` draws two
    endpoints and interpolates linearly between them over the sequence.
    """
    if kind == "random":
        return random_latents(num_frames, latent_dim, seed)
    if kind == "interpolated":
        endpoints = random_latents(2, latent_dim, seed)
        if num_frames == 1:
            return endpoints[:1].clone()
        return interpolate_latents(endpoints, num_frames, jitter=0.0)
    raise TrainConfigError(f"Unknown fixed latent kind '{kind}'")


# =============================================================================
# Optimization
# =============================================================================

def build_optimizer(theta_params: Sequence[torch.Tensor], latent_params: Sequence[torch.Tensor],
                    config: TrainConfig) -> torch.optim.Adam:
    """ADAM with one parameter group per learning rate and shared betas."""
    groups = [{"params": list(theta_params), "lr": config.lr_theta}]
    latent_params = list(latent_params)
    if latent_params:
        groups.append({"params": latent_params, "lr": config.lr_z})
    return torch.optim.Adam(groups, betas=config.adam_betas, eps=1e-8)


def _stage_seed(seed: int, stage_index: int) -> int:
    return int(seed) * 7919 + int(stage_index)


def evaluate_cost(state: GeneratorState, latents, mset: MeasurementSet, weights: RegWeights,
                  chunk_size: int = EVAL_CHUNK) -> CostTerms:
    """
    Full-data cost terms, evaluated over chunks of frames.

    Equal to total_cost over all frames at once. A non-finite network
    penalty is reported as a NaN network term.
    """
    z = latent_matrix(latents).detach()
    data = 0.0
    network = 0.0
    for start in range(0, mset.num_frames, chunk_size):
        indices = list(range(start, min(start + chunk_size, mset.num_frames)))
        data += data_fidelity(state, z, mset, indices).item()
        if weights.lambda1 > 0:
            try:
                network += weights.lambda1 * len(indices) * network_penalty(state, z[indices]).item()
            except NonFiniteError:
                network = float("nan")
    temporal = weights.lambda2 * temporal_penalty(z).item() if weights.lambda2 > 0 else 0.0
    return CostTerms(data=data, network=network, temporal=temporal)


def _partial_terms(state: GeneratorState, z: torch.Tensor, mset: MeasurementSet, weights: RegWeights,
                   batch: Sequence[int]) -> CostTerms:
    """Minibatch terms after the network penalty failed; the network term is NaN."""
    z = z.detach()
    with torch.no_grad():
        data = data_fidelity(state, z, mset, batch).item() * mset.num_frames / len(batch)
        temporal = weights.lambda2 * temporal_penalty(z).item() if weights.lambda2 > 0 else 0.0
    return CostTerms(data=data, network=float("nan"), temporal=temporal)


def generate_series(state: GeneratorState, latents, chunk_size: int = EVAL_CHUNK) -> torch.Tensor:
    """Generate every frame of a latent sequence, without gradients."""
    z = latent_matrix(latents).detach()
    with torch.no_grad():
        chunks = [generate(state, z[start:start + chunk_size]).cpu() for start in range(0, z.shape[0], chunk_size)]
    return torch.cat(chunks)


def _reference_ser(state: GeneratorState, z: torch.Tensor, reference: torch.Tensor) -> Tuple[float, float]:
    expanded = interpolate_latents(z.detach(), reference.shape[0], jitter=0.0)
    images = generate_series(state, expanded)
    return ser(images, reference), magnitude_ser(images, reference)


def train_stage(state: GeneratorState, latents: LatentSequence, mset: MeasurementSet, config: TrainConfig,
                stage_index: int = 0, reference=None,
                history: Optional[TrainHistory] = None) -> Tuple[GeneratorState, LatentSequence, TrainHistory]:
    """
    Run the epochs of one stage.

    Each epoch visits a seeded random permutation of the frames in
    minibatches of batch_size; each step updates the network and (in joint
    mode) the whole latent matrix, so the temporal term reaches every row.
    A record is logged before the first epoch, every eval_every epochs and
    after the last epoch. Logged wall time counts optimization only.

    Args:
        state (GeneratorState): generator, updated in place
        latents (LatentSequence): one latent per frame of mset
        mset (MeasurementSet): measurements of this stage
        config (TrainConfig): training settings
        stage_index (int): index into the stage schedule
        reference: optional N x H x W ground truth for SER logging
        history (Optional[TrainHistory]): log to append to

    Returns:
        Tuple[GeneratorState, LatentSequence, TrainHistory]: trained state, latents and log

    Raises:
        TrainConfigError: If latents and measurements disagree in length
        DivergenceError: If the cost becomes non-finite
    """
    history = history if history is not None else TrainHistory()
    if not 0 <= stage_index < len(config.epochs_per_stage):
        raise TrainConfigError(f"Stage {stage_index} is outside the {len(config.epochs_per_stage)}-stage schedule")
    epochs = config.epochs_per_stage[stage_index]
    if latents.num_frames != mset.num_frames:
        raise TrainConfigError(f"{latents.num_frames} latents for {mset.num_frames} measurement frames")

    device = state.device
    fixed = config.mode == "fixed-latent"
    z = latents.z.detach().clone().to(device)
    if not fixed:
        z.requires_grad_(True)
    mset = mset.to(device)
    if reference is not None:
        reference = torch.as_tensor(np.asarray(reference), dtype=torch.complex128)

    base_wall = history.last_wall_seconds
    base_epoch = history.last_global_epoch
    step = history.last_step
    optimized = 0.0

    def log_record(epoch: int) -> None:
        terms = evaluate_cost(state, z, mset, config.weights, max(config.batch_size, EVAL_CHUNK))
        if not math.isfinite(terms.total):
            raise DivergenceError("Non-finite full-data cost", step, stage_index, terms.to_dict())
        ser_db = ser_mag_db = None
        if reference is not None:
            ser_db, ser_mag_db = _reference_ser(state, z, reference)
        snapshot = None
        if config.snapshot_every and (epoch % config.snapshot_every == 0 or epoch == epochs):
            snapshot = z.detach().cpu().tolist()
        record = HistoryRecord(
            stage=stage_index, epoch=epoch, global_epoch=base_epoch + epoch, step=step,
            wall_seconds=base_wall + optimized, num_frames=mset.num_frames,
            data=terms.data, network=terms.network, temporal=terms.temporal, total=terms.total,
            ser_db=ser_db, ser_mag_db=ser_mag_db, latents=snapshot,
        )
        history.append(record)
        if ser_db is None:
            logger.info("stage %d epoch %d: cost %.6g (data %.6g, network %.6g, temporal %.6g)",
                        stage_index, epoch, terms.total, terms.data, terms.network, terms.temporal)
        else:
            logger.info("stage %d epoch %d: cost %.6g (data %.6g, network %.6g, temporal %.6g), SER %.2f dB",
                        stage_index, epoch, terms.total, terms.data, terms.network, terms.temporal, ser_db)

    log_record(0)
    if epochs == 0:
        return state, latents, history

    optimizer = build_optimizer(state.parameters(), [] if fixed else [z], config)
    rng = torch.Generator().manual_seed(_stage_seed(config.seed, stage_index))
    num_frames = mset.num_frames

    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        order = torch.randperm(num_frames, generator=rng).tolist()
        for start in range(0, num_frames, config.batch_size):
            batch = order[start:start + config.batch_size]
            optimizer.zero_grad()
            try:
                cost, terms = total_cost(state, z, mset, config.weights, batch)
            except NonFiniteError as e:
                terms = _partial_terms(state, z, mset, config.weights, batch)
                raise DivergenceError(f"Non-finite cost: {e}", step, stage_index, terms.to_dict()) from e
            if not math.isfinite(terms.total):
                raise DivergenceError("Non-finite cost", step, stage_index, terms.to_dict())
            cost.backward()
            optimizer.step()
            step += 1
        optimized += time.perf_counter() - started
        if epoch % config.eval_every == 0 or epoch == epochs:
            log_record(epoch)

    return state, LatentSequence(z=z.detach().cpu().clone(), frame_times=latents.frame_times), history


# =============================================================================
# Full pipeline
# =============================================================================

def _stage_dir(checkpoint_dir: str, stage_index: int) -> str:
    return os.path.join(checkpoint_dir, f"stage_{stage_index:02d}")


def _run_config(gen_config: GeneratorConfig, train_config: TrainConfig) -> Dict[str, Any]:
    return {"generator": gen_config.to_dict(), "training": train_config.to_dict()}


def save_checkpoint(checkpoint_dir: str, stage_index: int, state: GeneratorState,
                    latents: LatentSequence, history: TrainHistory) -> str:
    """Write generator, latents and history of a completed stage."""
    stage_dir = _stage_dir(checkpoint_dir, stage_index)
    os.makedirs(stage_dir, exist_ok=True)
    archive.save_generator(state, os.path.join(stage_dir, "generator.dra"))
    archive.save_latents(latents, os.path.join(stage_dir, "latents.dra"))
    history.to_jsonl(os.path.join(stage_dir, "history.jsonl"))
    history.to_jsonl(os.path.join(checkpoint_dir, "history.jsonl"))
    return stage_dir


def checkpoint_complete(checkpoint_dir: str, stage_index: int) -> bool:
    stage_dir = _stage_dir(checkpoint_dir, stage_index)
    return all(os.path.exists(os.path.join(stage_dir, f)) for f in ("generator.dra", "latents.dra", "history.jsonl"))


def latest_checkpoint(checkpoint_dir: str) -> Optional[int]:
    """Index of the last stage with a complete checkpoint, or None."""
    if not os.path.isdir(checkpoint_dir):
        return None
    latest = None
    for name in sorted(os.listdir(checkpoint_dir)):
        if not name.startswith("stage_"):
            continue
        stage_index = int(name[len("stage_"):])
        if checkpoint_complete(checkpoint_dir, stage_index):
            latest = stage_index
    return latest


def _prepare_checkpoint_dir(checkpoint_dir: str, run_config: Dict[str, Any], resume: bool) -> None:
    os.makedirs(checkpoint_dir, exist_ok=True)
    path = os.path.join(checkpoint_dir, "config.json")
    if resume and os.path.exists(path):
        with open(path) as f:
            stored = json.load(f)
        if stored != json.loads(json.dumps(run_config)):
            raise TrainConfigError(f"Checkpoint in {checkpoint_dir} was written with a different configuration")
        return
    with open(path, "w") as f:
        json.dump(run_config, f, indent=2, sort_keys=True)


def reconstruct(mset: MeasurementSet, gen_config: GeneratorConfig, train_config: TrainConfig,
                reference=None, checkpoint_dir: Optional[str] = None, resume: bool = False,
                resume_stage: Optional[int] = None,
                device: str = "cpu") -> Tuple[GeneratorState, LatentSequence, np.ndarray, TrainHistory]:
    """
    Reconstruct the image series behind a measurement set.

    Args:
        mset (MeasurementSet): N-frame measurements
        gen_config (GeneratorConfig): generator architecture
        train_config (TrainConfig): optimizer and stage schedule
        reference: optional ground truth for SER logging
        checkpoint_dir (Optional[str]): where stage checkpoints are written
        resume (bool): continue after the latest checkpoint in checkpoint_dir
        resume_stage (Optional[int]): with resume, continue after this stage's checkpoint
            instead; later stages are retrained and their checkpoints overwritten
        device (str): torch device

    Returns:
        Tuple: generator state, N latents, N x H x W complex images, training history

    Raises:
        TrainConfigError: If the configuration is invalid
        FileNotFoundError: If resume_stage has no complete checkpoint
        DivergenceError: If training diverges
    """
    num_frames = mset.num_frames
    train_config.validate(num_frames)
    if train_config.mode == "fixed-latent" and len(train_config.resolved_schedule(num_frames)[0]) > 1:
        logger.info("Fixed-latent mode trains all %d frames in a single stage", num_frames)
        train_config = train_config.single_stage(num_frames)
    counts, epochs = train_config.resolved_schedule(num_frames)
    train_config = replace(train_config, stage_frame_counts=counts, epochs_per_stage=epochs)

    state = init_generator(gen_config, device=device)
    history = TrainHistory()
    latents: Optional[LatentSequence] = None
    first_stage = 0

    if checkpoint_dir is not None:
        _prepare_checkpoint_dir(checkpoint_dir, _run_config(gen_config, train_config), resume)
        latest = latest_checkpoint(checkpoint_dir) if resume else None
        if resume and resume_stage is not None:
            if not 0 <= resume_stage < len(counts):
                raise TrainConfigError(f"Stage {resume_stage} is outside the {len(counts)}-stage schedule")
            if not checkpoint_complete(checkpoint_dir, resume_stage):
                raise FileNotFoundError(f"No complete stage {resume_stage} checkpoint in {checkpoint_dir}")
            latest = resume_stage
        if latest is not None:
            stage_dir = _stage_dir(checkpoint_dir, latest)
            state = archive.load_generator(os.path.join(stage_dir, "generator.dra"), device=device)
            latents = archive.load_latents(os.path.join(stage_dir, "latents.dra"))
            history = TrainHistory.from_jsonl(os.path.join(stage_dir, "history.jsonl"))
            first_stage = latest + 1
            logger.info("Resuming from stage %d checkpoint in %s", latest, checkpoint_dir)

    for stage_index in range(first_stage, len(counts)):
        stage_mset = bin_measurements(mset, math.ceil(num_frames / counts[stage_index]))
        if stage_mset.num_frames != counts[stage_index]:
            logger.warning("Stage %d requested %d frames; binning gives %d",
                           stage_index, counts[stage_index], stage_mset.num_frames)
        stage_frames = stage_mset.num_frames

        if train_config.mode == "fixed-latent":
            z = fixed_latents(stage_frames, gen_config.latent_dim, train_config.fixed_latent_kind, train_config.seed)
        elif latents is None:
            z = random_latents(stage_frames, gen_config.latent_dim, train_config.seed)
        else:
            jitter_rng = torch.Generator().manual_seed(_stage_seed(train_config.seed, stage_index) + 1)
            z = interpolate_latents(latents.z, stage_frames, generator=jitter_rng)

        state, latents, history = train_stage(
            state, LatentSequence(z=z), stage_mset, train_config, stage_index, reference, history
        )
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, stage_index, state, latents, history)

    images = generate_series(state, latents).numpy()
    return state, latents, images, history
