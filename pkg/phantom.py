#!/usr/bin/env python3
"""
Synthetic dynamic phantom and acquisition simulation.

The scene is a torso ellipse that translates vertically with a
respiratory-like phase, containing a bright ventricle whose radius
oscillates with a cardiac-like phase and a darker myocardial ring around
it. A static band and two static blobs add texture that does not move.
Edges have a smooth tanh profile, and a fixed low-order polynomial phase
makes the frames complex.
"""

import logging
import math
from dataclasses import dataclass, asdict
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch

from forward_model import (
    FrameMeasurement, MeasurementSet, apply_forward, make_gaussian_coils,
    make_golden_angle_patterns, unit_coils, validate_grid_shape, ForwardModelError
)


logger = logging.getLogger(__name__)

EDGE_WIDTH = 0.04
TISSUE_LEVEL = 0.30
MYOCARDIUM_LEVEL = 0.10
BLOOD_LEVEL = 0.45
STATIC_LEVEL = 0.15


class PhantomError(ValueError):
    """Exception raised for invalid phantom specifications."""
    pass


@dataclass
class PhantomSpec:
    """Parameters of the synthetic dynamic phantom."""
    grid_shape: Tuple[int, int] = (64, 64)
    num_frames: int = 150
    cardiac_period: float = 9.7
    resp_period: float = 41.3
    cardiac_amplitude: float = 0.04
    resp_amplitude: float = 0.06
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.grid_shape = tuple(int(s) for s in self.grid_shape)

    def validate(self) -> None:
        try:
            validate_grid_shape(self.grid_shape)
        except ForwardModelError as e:
            raise PhantomError(str(e))
        if self.num_frames < 1:
            raise PhantomError(f"num_frames must be >= 1, got {self.num_frames}")
        for name in ("cardiac_period", "resp_period"):
            if getattr(self, name) <= 2:
                raise PhantomError(f"{name} must be > 2 frames, got {getattr(self, name)}")
        ratio = max(self.cardiac_period, self.resp_period) / min(self.cardiac_period, self.resp_period)
        if abs(ratio - round(ratio)) < 1e-6:
            raise PhantomError(
                f"Periods {self.cardiac_period} and {self.resp_period} are integer multiples; motions would not separate"
            )
        for name in ("cardiac_amplitude", "resp_amplitude"):
            value = getattr(self, name)
            if not 0.0 < value < 0.3:
                raise PhantomError(f"{name} must lie in (0, 0.3), got {value}")
        if self.noise_sigma < 0:
            raise PhantomError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["grid_shape"] = list(self.grid_shape)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PhantomSpec":
        try:
            return cls(**data)
        except TypeError as e:
            raise PhantomError(f"Invalid phantom spec: {e}")


@dataclass
class PhantomTruth:
    """Ground-truth image series and the motion phases used to render it."""
    spec: PhantomSpec
    images: np.ndarray
    cardiac_phase: np.ndarray
    resp_phase: np.ndarray

    @property
    def num_frames(self) -> int:
        return int(self.images.shape[0])


def _smooth_ellipse(y: np.ndarray, x: np.ndarray, cy: float, cx: float, ay: float, ax: float) -> np.ndarray:
    rho = np.sqrt(((y - cy) / ay) ** 2 + ((x - cx) / ax) ** 2)
    return 0.5 * (1.0 - np.tanh((rho - 1.0) / EDGE_WIDTH))


def phase_map(grid_shape: Tuple[int, int]) -> np.ndarray:
    """Fixed smooth phase (radians) over the grid."""
    H, W = grid_shape
    Y, X = np.meshgrid(np.linspace(-1.0, 1.0, H), np.linspace(-1.0, 1.0, W), indexing="ij")
    return 0.25 * math.pi * (0.8 * X - 0.5 * Y + 0.3 * X * Y)


def motion_phases(spec: PhantomSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Cardiac and respiratory phases per frame, in [0, 2*pi)."""
    rng = np.random.default_rng(spec.seed)
    cardiac_offset, resp_offset = rng.uniform(0.0, 2.0 * math.pi, size=2)
    frames = np.arange(spec.num_frames, dtype=np.float64)
    cardiac = np.mod(cardiac_offset + 2.0 * math.pi * frames / spec.cardiac_period, 2.0 * math.pi)
    resp = np.mod(resp_offset + 2.0 * math.pi * frames / spec.resp_period, 2.0 * math.pi)
    return cardiac, resp


def render_frame(spec: PhantomSpec, cardiac_phase: float, resp_phase: float) -> np.ndarray:
    """
    Render one complex frame at the given motion phases.

    Args:
        spec (PhantomSpec): phantom parameters
        cardiac_phase (float): ventricle radius phase in radians
        resp_phase (float): torso translation phase in radians

    Returns:
        np.ndarray: complex H x W frame with magnitude in [0, 1]
    """
    H, W = spec.grid_shape
    y, x = np.meshgrid(np.arange(H) - H / 2.0 + 0.5, np.arange(W) - W / 2.0 + 0.5, indexing="ij")

    shift = spec.resp_amplitude * H * math.sin(resp_phase)
    torso = _smooth_ellipse(y, x, shift, 0.0, 0.36 * H, 0.44 * W)

    vent_cy, vent_cx = shift - 0.05 * H, 0.08 * W
    radius = 0.12 * H + spec.cardiac_amplitude * H * math.cos(cardiac_phase)
    ventricle = _smooth_ellipse(y, x, vent_cy, vent_cx, radius, radius)
    outer = _smooth_ellipse(y, x, vent_cy, vent_cx, radius + 0.06 * H, radius + 0.06 * H)
    ring = np.clip(outer - ventricle, 0.0, 1.0)

    static = np.clip(
        _smooth_ellipse(y, x, 0.46 * H, 0.0, 0.025 * H, 0.40 * W)
        + _smooth_ellipse(y, x, 0.10 * H, -0.30 * W, 0.05 * H, 0.04 * W)
        + _smooth_ellipse(y, x, 0.18 * H, 0.28 * W, 0.04 * H, 0.06 * W),
        0.0, 1.0,
    )

    magnitude = torso * (TISSUE_LEVEL + MYOCARDIUM_LEVEL * ring + BLOOD_LEVEL * ventricle) + STATIC_LEVEL * static
    return magnitude * np.exp(1j * phase_map((H, W)))


def ventricle_row(spec: PhantomSpec) -> int:
    """Grid row through the ventricle centre at zero respiratory displacement."""
    H = spec.grid_shape[0]
    return int(min(H - 1, max(0, round(0.45 * H - 0.5))))


def make_phantom(spec: PhantomSpec) -> PhantomTruth:
    """
    Synthesize the ground-truth image series.

    Raises:
        PhantomError: if the phantom parameters are invalid
    """
    spec.validate()
    cardiac, resp = motion_phases(spec)
    images = np.stack([render_frame(spec, c, r) for c, r in zip(cardiac, resp)])
    logger.info("Rendered phantom: %d frames of %dx%d", spec.num_frames, *spec.grid_shape)
    return PhantomTruth(spec=spec, images=images, cardiac_phase=cardiac, resp_phase=resp)


def simulate_acquisition(truth: PhantomTruth, lines_per_frame: int = 6, num_coils: int = 1,
                         noise_sigma: float = 0.0, seed: int = 0,
                         pattern_seed: Optional[int] = None) -> MeasurementSet:
    """
    Sample the phantom with golden-angle patterns and add complex white noise.

    Noise of standard deviation sigma means E|n|^2 = sigma^2 per scalar
    sample (sigma / sqrt(2) per real component).

    Args:
        truth (PhantomTruth): ground truth
        lines_per_frame (int): pseudo-radial lines per frame
        num_coils (int): 1 for a unit coil, otherwise Gaussian-bump coils
        noise_sigma (float): complex noise standard deviation
        seed (int): noise seed
        pattern_seed (Optional[int]): seed for patterns and coil maps (defaults to seed)

    Returns:
        MeasurementSet: simulated measurements
    """
    if noise_sigma < 0:
        raise PhantomError(f"noise_sigma must be >= 0, got {noise_sigma}")
    pattern_seed = seed if pattern_seed is None else pattern_seed
    grid_shape = tuple(truth.images.shape[1:])
    patterns = make_golden_angle_patterns(grid_shape, truth.num_frames, lines_per_frame, pattern_seed)
    coils = unit_coils(grid_shape) if num_coils == 1 else make_gaussian_coils(grid_shape, num_coils, pattern_seed)

    rng = np.random.default_rng(seed)
    frames = []
    for image, pattern in zip(truth.images, patterns):
        samples = apply_forward(torch.from_numpy(image), pattern, coils)
        if noise_sigma > 0:
            shape = tuple(samples.shape)
            noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * (noise_sigma / math.sqrt(2.0))
            samples = samples + torch.from_numpy(noise)
        frames.append(FrameMeasurement(pattern=pattern, samples=samples))
    logger.info("Simulated %d frames, %d lines/frame, %d coil(s), sigma=%g",
                truth.num_frames, lines_per_frame, coils.num_coils, noise_sigma)
    return MeasurementSet(frames=frames, coils=coils, noise_sigma=noise_sigma)
