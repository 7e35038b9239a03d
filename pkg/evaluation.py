#!/usr/bin/env python3
"""
Reconstruction metrics and figure data.

- signal-to-error ratio (complex and magnitude, whole series and per frame)
- correlation of latent channels with the phantom's motion phases
- time-to-threshold comparison of training runs
- zero-filled baseline
- report and plot-data files read by the CLI
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, asdict, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from forward_model import MeasurementSet, apply_adjoint_frame


logger = logging.getLogger(__name__)

# Reported for exact reconstructions, where the error norm is zero
SER_CAP_DB = 300.0
MOTION_MODES = ("cardiac", "respiratory")
NOT_REACHED = "not reached"

PLOT_FIELDS = ["run", "stage", "epoch", "global_epoch", "wall_seconds", "total_cost", "ser_db", "ser_mag_db"]


class EvaluationError(ValueError):
    """Exception raised for invalid metric inputs."""
    pass


def _as_array(images) -> np.ndarray:
    if isinstance(images, torch.Tensor):
        images = images.detach().cpu().numpy()
    return np.asarray(images)


def _ser_from_norms(signal_norm: float, error_norm: float) -> float:
    if signal_norm == 0:
        raise EvaluationError("Reference has zero norm; SER is undefined")
    if error_norm == 0:
        return SER_CAP_DB
    return min(20.0 * math.log10(signal_norm / error_norm), SER_CAP_DB)


def ser(recon, reference) -> float:
    """
    Signal-to-error ratio in dB over all frames jointly.

        SER = 20 log10(||reference|| / ||reference - recon||)

    Exact reconstructions report SER_CAP_DB.
    """
    recon, reference = _as_array(recon), _as_array(reference)
    if recon.shape != reference.shape:
        raise EvaluationError(f"Shape mismatch: {recon.shape} vs {reference.shape}")
    return _ser_from_norms(float(np.linalg.norm(reference.ravel())),
                           float(np.linalg.norm((reference - recon).ravel())))


def magnitude_ser(recon, reference) -> float:
    """SER of the magnitude images; insensitive to any global phase."""
    return ser(np.abs(_as_array(recon)), np.abs(_as_array(reference)))


def per_frame_ser(recon, reference, magnitude: bool = False) -> np.ndarray:
    """SER of each frame separately."""
    recon, reference = _as_array(recon), _as_array(reference)
    if recon.shape != reference.shape:
        raise EvaluationError(f"Shape mismatch: {recon.shape} vs {reference.shape}")
    if magnitude:
        recon, reference = np.abs(recon), np.abs(reference)
    return np.array([ser(r, x) for r, x in zip(recon, reference)])


# =============================================================================
# Latent / motion correlation
# =============================================================================

@dataclass
class LatentCorrelation:
    """Absolute correlations (d x 2) and the channel-to-motion assignment."""
    corr: np.ndarray
    assignment: Dict[int, str]

    def assigned(self) -> Dict[int, float]:
        return {ch: float(self.corr[ch, MOTION_MODES.index(mode)]) for ch, mode in self.assignment.items()}

    def min_assigned(self) -> float:
        values = self.assigned()
        return min(values.values()) if values else 0.0


def _abs_pearson(a: np.ndarray, b: np.ndarray) -> float:
    # Constant signals have no defined correlation; report zero
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    a = a - a.mean()
    b = b - b.mean()
    return float(min(abs(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)), 1.0))


def latent_motion_correlation(latents, truth) -> LatentCorrelation:
    """
    Correlate each latent channel with the cardiac and respiratory phases.

    Phases wrap, so each mode is represented by its sin/cos projections and a
    channel's score for a mode is the larger of the two absolute Pearson
    correlations. Channels are matched to modes by a maximum-weight
    assignment on the score matrix.

    Args:
        latents: N x d latents (tensor, array or LatentSequence)
        truth: PhantomTruth (or any object with cardiac_phase and resp_phase)

    Returns:
        LatentCorrelation: score matrix and injective assignment
    """
    z = getattr(latents, "z", latents)
    z = _as_array(z).astype(np.float64)
    phases = [np.asarray(truth.cardiac_phase, dtype=np.float64), np.asarray(truth.resp_phase, dtype=np.float64)]
    if z.ndim != 2 or any(z.shape[0] != p.shape[0] for p in phases):
        raise EvaluationError(f"Latents {z.shape} do not match {phases[0].shape[0]} phase samples")

    corr = np.zeros((z.shape[1], len(MOTION_MODES)))
    for k in range(z.shape[1]):
        for m, phase in enumerate(phases):
            corr[k, m] = max(_abs_pearson(z[:, k], np.sin(phase)), _abs_pearson(z[:, k], np.cos(phase)))

    rows, cols = linear_sum_assignment(corr, maximize=True)
    assignment = {int(r): MOTION_MODES[c] for r, c in zip(rows, cols)}
    return LatentCorrelation(corr=corr, assignment=assignment)


# =============================================================================
# Training-run comparison
# =============================================================================

@dataclass
class TimingRow:
    """Time at which one run first reached the SER threshold."""
    run: str
    wall_seconds: Optional[float]
    final_ser_db: Optional[float]

    @property
    def reached(self) -> bool:
        return self.wall_seconds is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run": self.run,
            "wall_seconds": self.wall_seconds if self.reached else NOT_REACHED,
            "final_ser_db": self.final_ser_db,
        }


def _ser_of(record, magnitude: bool) -> Optional[float]:
    return record.ser_mag_db if magnitude else record.ser_db


def _named(histories) -> Dict[str, Any]:
    if isinstance(histories, Mapping):
        return dict(histories)
    return {f"run_{i}": h for i, h in enumerate(histories)}


def compare_runs(histories, threshold_ser: float, magnitude: bool = True) -> List[TimingRow]:
    """
    First logged wall time at which each run's SER reaches the threshold.

    Args:
        histories: mapping of run name to TrainHistory (or a sequence)
        threshold_ser (float): SER threshold in dB
        magnitude (bool): compare magnitude SER instead of complex SER

    Returns:
        List[TimingRow]: one row per run, wall_seconds None when not reached
    """
    rows = []
    for name, history in _named(histories).items():
        reached_at = None
        final = None
        for record in history.records:
            value = _ser_of(record, magnitude)
            if value is None:
                continue
            final = value
            if reached_at is None and value >= threshold_ser:
                reached_at = record.wall_seconds
        rows.append(TimingRow(run=name, wall_seconds=reached_at, final_ser_db=final))
    return rows


def final_ser(history, magnitude: bool = True) -> Optional[float]:
    """SER of the last record that carries one."""
    values = [_ser_of(r, magnitude) for r in history.records if _ser_of(r, magnitude) is not None]
    return values[-1] if values else None


def regularization_trend(history, magnitude: bool = True) -> Dict[str, float]:
    """
    SER at the final, half-way and best logged epochs of the last stage.

    Returns:
        Dict[str, float]: final, halfway, running_max and the two differences
    """
    if not history.records:
        raise EvaluationError("History is empty")
    last_stage = max(r.stage for r in history.records)
    points = [(r.epoch, _ser_of(r, magnitude)) for r in history.stage_records(last_stage)
              if _ser_of(r, magnitude) is not None]
    if not points:
        raise EvaluationError("History has no SER values")
    final_epoch, final_value = points[-1]
    half_epoch, half_value = min(points, key=lambda p: abs(p[0] - final_epoch / 2.0))
    running_max = max(v for _, v in points)
    return {
        "final": final_value,
        "halfway": half_value,
        "halfway_epoch": half_epoch,
        "running_max": running_max,
        "final_minus_halfway": final_value - half_value,
        "max_minus_final": running_max - final_value,
    }


def write_timing_table(rows: Sequence[TimingRow], threshold_ser: float, path: str) -> None:
    """Write the comparison as a JSON document."""
    try:
        with open(path, "w") as f:
            json.dump({"threshold_ser_db": threshold_ser, "runs": [r.to_dict() for r in rows]}, f, indent=2)
    except OSError as e:
        raise IOError(f"Error writing timing table {path}: {e}")


def write_plot_data(histories, path: str) -> None:
    """Write every logged record of every run as CSV rows."""
    try:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=PLOT_FIELDS)
            writer.writeheader()
            for name, history in _named(histories).items():
                for r in history.records:
                    writer.writerow({
                        "run": name, "stage": r.stage, "epoch": r.epoch, "global_epoch": r.global_epoch,
                        "wall_seconds": repr(r.wall_seconds), "total_cost": repr(r.total),
                        "ser_db": "" if r.ser_db is None else repr(r.ser_db),
                        "ser_mag_db": "" if r.ser_mag_db is None else repr(r.ser_mag_db),
                    })
    except OSError as e:
        raise IOError(f"Error writing plot data {path}: {e}")


def read_plot_data(path: str) -> Dict[str, List[Dict[str, Optional[float]]]]:
    """Read plot data back, grouped by run name."""
    runs: Dict[str, List[Dict[str, Optional[float]]]] = {}
    try:
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                parsed = {key: (float(value) if value != "" else None)
                          for key, value in row.items() if key != "run"}
                runs.setdefault(row["run"], []).append(parsed)
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as e:
        raise IOError(f"Error reading plot data {path}: {e}")
    return runs


def write_latent_data(latents, path: str) -> None:
    """Write latent trajectories as CSV (frame, z0, z1, ...)."""
    z = _as_array(getattr(latents, "z", latents))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame"] + [f"z{k}" for k in range(z.shape[1])])
        for i, row in enumerate(z):
            writer.writerow([i] + [repr(float(v)) for v in row])


def read_latent_data(path: str) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]])


def time_profile(images, row: int) -> np.ndarray:
    """
    Magnitude along one image row over time.

    Args:
        images: N x H x W image series
        row (int): grid row

    Returns:
        np.ndarray: N x W profile, one row per frame

    Raises:
        EvaluationError: If the row is outside the grid
    """
    images = _as_array(images)
    if images.ndim != 3:
        raise EvaluationError(f"Expected an N x H x W series, got shape {images.shape}")
    if not 0 <= row < images.shape[1]:
        raise EvaluationError(f"Row {row} is outside a grid of {images.shape[1]} rows")
    return np.abs(images[:, row, :])


def write_time_profile(profile: np.ndarray, path: str) -> None:
    """Write a time profile as CSV (frame, x0, x1, ...)."""
    profile = np.asarray(profile)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame"] + [f"x{k}" for k in range(profile.shape[1])])
        for i, row in enumerate(profile):
            writer.writerow([i] + [repr(float(v)) for v in row])


def read_time_profile(path: str) -> np.ndarray:
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        return np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as e:
        raise IOError(f"Error reading time profile {path}: {e}")


# =============================================================================
# Baseline and report
# =============================================================================

def zero_filled(mset: MeasurementSet) -> np.ndarray:
    """Per-frame adjoint reconstruction normalized by the coil sum-of-squares."""
    sos = mset.coils.sum_of_squares()
    frames = [apply_adjoint_frame(frame, mset.coils) / sos.to(frame.samples.device) for frame in mset.frames]
    return torch.stack(frames).detach().cpu().numpy()


@dataclass
class EvalReport:
    """Metrics of one reconstruction against the phantom truth."""
    ser_db: float
    ser_mag_db: float
    per_frame_ser_db: List[float]
    latent_corr: Optional[List[List[float]]] = None
    assignment: Optional[Dict[str, str]] = None
    zero_filled_ser_mag_db: Optional[float] = None
    timing: Optional[Dict[str, Any]] = None
    regularization: Optional[Dict[str, float]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path: str) -> None:
        try:
            with open(path, "w") as f:
                json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        except OSError as e:
            raise IOError(f"Error writing report {path}: {e}")

    @classmethod
    def load(cls, path: str) -> "EvalReport":
        with open(path) as f:
            return cls(**json.load(f))


def evaluate_reconstruction(images, truth, latents=None, mset: Optional[MeasurementSet] = None,
                            history=None) -> EvalReport:
    """
    Build the report of one reconstruction.

    Args:
        images: N x H x W reconstructed frames
        truth: PhantomTruth with images and phases
        latents: optional N x d latents for the motion correlation
        mset (Optional[MeasurementSet]): measurements for the zero-filled baseline
        history: optional TrainHistory for the SER trend

    Returns:
        EvalReport: metrics
    """
    report = EvalReport(
        ser_db=ser(images, truth.images),
        ser_mag_db=magnitude_ser(images, truth.images),
        per_frame_ser_db=per_frame_ser(images, truth.images).tolist(),
    )
    if latents is not None:
        result = latent_motion_correlation(latents, truth)
        report.latent_corr = result.corr.tolist()
        report.assignment = {str(k): v for k, v in result.assignment.items()}
    if mset is not None:
        report.zero_filled_ser_mag_db = magnitude_ser(zero_filled(mset), truth.images)
    if history is not None and any(r.ser_mag_db is not None for r in history.records):
        report.regularization = regularization_trend(history)
    return report
