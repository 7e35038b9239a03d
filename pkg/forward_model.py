#!/usr/bin/env python3
"""
Undersampled multi-coil Fourier operator

This module provides the per-frame measurement operator used by the
reconstruction:
- golden-angle pseudo-radial sampling patterns on the Cartesian grid
- the forward operator A_i (coil weighting, unitary 2-D DFT, mask gather)
- its exact adjoint
- temporal binning of measurement frames

Masks are stored in FFT-native order (DC at index (0, 0)). Lines are drawn
in centered frequency coordinates and then wrapped into that order.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch


logger = logging.getLogger(__name__)

GOLDEN_ANGLE = math.pi * (math.sqrt(5.0) - 1.0) / 2.0
COMPLEX_DTYPE = torch.complex128


class ForwardModelError(ValueError):
    """Exception raised for invalid operator inputs or measurement sets."""
    pass


# =============================================================================
# Domain Types
# =============================================================================

@dataclass
class SamplingPattern:
    """Sampling mask of one frame together with the line angles that built it."""
    frame_index: int
    mask: torch.Tensor
    lines: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.mask = torch.as_tensor(self.mask, dtype=torch.bool)
        if self.mask.ndim != 2:
            raise ForwardModelError(f"Mask must be 2-D, got shape {tuple(self.mask.shape)}")
        if not bool(self.mask.any()):
            raise ForwardModelError(f"Mask of frame {self.frame_index} has no sampled entries")

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return tuple(self.mask.shape)

    @property
    def num_samples(self) -> int:
        return int(self.mask.sum())

    def positions(self) -> torch.Tensor:
        """Flat row-major indices of the sampled grid points."""
        return torch.nonzero(self.mask.flatten(), as_tuple=False).squeeze(1)


@dataclass
class CoilSensitivities:
    """Complex coil maps of shape C x H x W."""
    maps: torch.Tensor

    def __post_init__(self):
        self.maps = torch.as_tensor(self.maps).to(COMPLEX_DTYPE)
        if self.maps.ndim != 3 or self.maps.shape[0] < 1:
            raise ForwardModelError(f"Coil maps must be C x H x W with C >= 1, got {tuple(self.maps.shape)}")
        if not bool((self.sum_of_squares() > 0).all()):
            raise ForwardModelError("Coil sum-of-squares must be positive at every pixel")

    @property
    def num_coils(self) -> int:
        return int(self.maps.shape[0])

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return tuple(self.maps.shape[1:])

    def sum_of_squares(self) -> torch.Tensor:
        return (self.maps.abs() ** 2).sum(dim=0)

    def to(self, device) -> "CoilSensitivities":
        return CoilSensitivities(self.maps.to(device))


@dataclass
class FrameMeasurement:
    """
    Samples of one frame.

    `positions` holds one flat grid index per stored entry. For acquired
    frames these are the mask positions in row-major order; binned frames
    keep one entry per originating frame, so positions may repeat.
    """
    pattern: SamplingPattern
    samples: torch.Tensor
    positions: Optional[torch.Tensor] = None

    def __post_init__(self):
        self.samples = torch.as_tensor(self.samples).to(COMPLEX_DTYPE)
        if self.positions is None:
            self.positions = self.pattern.positions()
        self.positions = torch.as_tensor(self.positions, dtype=torch.int64)
        if self.samples.ndim != 2 or self.samples.shape[1] != self.positions.numel():
            raise ForwardModelError(
                f"Frame {self.pattern.frame_index}: expected C x {self.positions.numel()} samples, "
                f"got {tuple(self.samples.shape)}"
            )

    @property
    def num_entries(self) -> int:
        return int(self.positions.numel())


@dataclass
class MeasurementSet:
    """Undersampled frequency-domain data for a whole image series."""
    frames: List[FrameMeasurement]
    coils: CoilSensitivities
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.frames:
            raise ForwardModelError("A measurement set needs at least one frame")
        if self.noise_sigma < 0:
            raise ForwardModelError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for frame in self.frames:
            if frame.pattern.grid_shape != self.grid_shape:
                raise ForwardModelError(
                    f"Frame {frame.pattern.frame_index} has grid {frame.pattern.grid_shape}, "
                    f"expected {self.grid_shape}"
                )
            if frame.samples.shape[0] != self.num_coils:
                raise ForwardModelError(
                    f"Frame {frame.pattern.frame_index} has {frame.samples.shape[0]} coils, "
                    f"expected {self.num_coils}"
                )

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.coils.grid_shape

    @property
    def num_coils(self) -> int:
        return self.coils.num_coils

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def total_samples(self) -> int:
        """Number of scalar measurements over all frames and coils."""
        return sum(frame.samples.numel() for frame in self.frames)

    def to(self, device) -> "MeasurementSet":
        frames = [
            FrameMeasurement(
                pattern=SamplingPattern(f.pattern.frame_index, f.pattern.mask.to(device), list(f.pattern.lines)),
                samples=f.samples.to(device),
                positions=f.positions.to(device),
            )
            for f in self.frames
        ]
        return MeasurementSet(frames=frames, coils=self.coils.to(device), noise_sigma=self.noise_sigma)


# =============================================================================
# Sampling patterns
# =============================================================================

def validate_grid_shape(grid_shape: Sequence[int]) -> Tuple[int, int]:
    """Check that both grid dimensions are even and at least 8."""
    if len(grid_shape) != 2:
        raise ForwardModelError(f"Grid shape must have two dimensions, got {grid_shape}")
    H, W = int(grid_shape[0]), int(grid_shape[1])
    for size in (H, W):
        if size < 8 or size % 2:
            raise ForwardModelError(f"Grid dimensions must be even and >= 8, got {(H, W)}")
    return H, W


def _round_half_toward_zero(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.ceil(np.abs(values) - 0.5)


def rasterize_line(grid_shape: Sequence[int], angle: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Grid points of a line through the frequency origin.

    The line advances one pixel at a time along its dominant axis; the other
    coordinate is rounded with ties toward the origin, which keeps the line
    point-symmetric about the center.

    Args:
        grid_shape: (H, W) of the frequency grid
        angle (float): line angle in radians, measured from the column axis

    Returns:
        Tuple[np.ndarray, np.ndarray]: row and column indices in FFT order
    """
    H, W = validate_grid_shape(grid_shape)
    c, s = math.cos(angle), math.sin(angle)
    half = max(H, W) // 2
    t = np.arange(-half, half + 1, dtype=np.float64)

    if abs(c) >= abs(s):
        kx = t
        ky = _round_half_toward_zero(t * (s / c))
    else:
        ky = t
        kx = _round_half_toward_zero(t * (c / s))

    keep = (ky >= -H // 2) & (ky < H // 2) & (kx >= -W // 2) & (kx < W // 2)
    rows = ky[keep].astype(np.int64) % H
    cols = kx[keep].astype(np.int64) % W
    return rows, cols


def lines_to_mask(grid_shape: Sequence[int], angles: Sequence[float]) -> np.ndarray:
    """Union of rasterized lines as a boolean H x W mask."""
    H, W = validate_grid_shape(grid_shape)
    mask = np.zeros((H, W), dtype=bool)
    for angle in angles:
        rows, cols = rasterize_line((H, W), angle)
        mask[rows, cols] = True
    return mask


def make_golden_angle_patterns(grid_shape: Sequence[int], num_frames: int,
                               lines_per_frame: int, seed: int = 0) -> List[SamplingPattern]:
    """
    Generate per-frame pseudo-radial golden-angle sampling patterns.

    Frame k uses the lines (k * L + j) * golden_angle mod pi, j = 0..L-1, so
    consecutive frames interleave and their union fills k-space quickly.
    The golden-angle ordering is fully deterministic; `seed` is accepted so
    that acquisition manifests record one seed per component and does not
    change the angles.

    Args:
        grid_shape: (H, W), both even and >= 8
        num_frames (int): number of frames N >= 1
        lines_per_frame (int): lines per frame L >= 1
        seed (int): recorded for provenance

    Returns:
        List[SamplingPattern]: one pattern per frame
    """
    H, W = validate_grid_shape(grid_shape)
    if num_frames < 1:
        raise ForwardModelError(f"num_frames must be >= 1, got {num_frames}")
    if lines_per_frame < 1:
        raise ForwardModelError(f"lines_per_frame must be >= 1, got {lines_per_frame}")

    patterns = []
    for k in range(num_frames):
        angles = [((k * lines_per_frame + j) * GOLDEN_ANGLE) % math.pi for j in range(lines_per_frame)]
        mask = lines_to_mask((H, W), angles)
        patterns.append(SamplingPattern(frame_index=k, mask=torch.from_numpy(mask), lines=angles))
    logger.debug("Generated %d golden-angle patterns with %d lines on %dx%d", num_frames, lines_per_frame, H, W)
    return patterns


def sampling_fraction(pattern: SamplingPattern) -> float:
    """Fraction of grid points sampled by one pattern."""
    H, W = pattern.grid_shape
    return pattern.num_samples / float(H * W)


def coverage_fraction(patterns: Sequence[SamplingPattern]) -> float:
    """Fraction of grid points sampled by the union of the patterns."""
    union = torch.zeros_like(patterns[0].mask)
    for pattern in patterns:
        union |= pattern.mask
    H, W = union.shape
    return int(union.sum()) / float(H * W)


# =============================================================================
# Coil sensitivities
# =============================================================================

def unit_coils(grid_shape: Sequence[int]) -> CoilSensitivities:
    """A single coil with unit sensitivity everywhere."""
    H, W = int(grid_shape[0]), int(grid_shape[1])
    return CoilSensitivities(torch.ones((1, H, W), dtype=COMPLEX_DTYPE))


def make_gaussian_coils(grid_shape: Sequence[int], num_coils: int = 4, seed: int = 0) -> CoilSensitivities:
    """
    Smooth complex coil maps built from Gaussian bumps around the field of view.

    Coil c is centered on a circle of radius 0.7 (normalized coordinates in
    [-1, 1]) at angle 2*pi*c/C, with a seeded linear phase. Maps are scaled so
    the largest sum-of-squares value is 1.
    """
    if num_coils < 1:
        raise ForwardModelError(f"num_coils must be >= 1, got {num_coils}")
    H, W = int(grid_shape[0]), int(grid_shape[1])
    rng = np.random.default_rng(seed)
    y, x = np.meshgrid(np.linspace(-1.0, 1.0, H), np.linspace(-1.0, 1.0, W), indexing="ij")

    maps = np.empty((num_coils, H, W), dtype=np.complex128)
    for c in range(num_coils):
        theta = 2.0 * math.pi * c / num_coils
        cy, cx = 0.7 * math.sin(theta), 0.7 * math.cos(theta)
        magnitude = np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2.0 * 0.6 ** 2))
        slope_y, slope_x, offset = rng.uniform(-1.0, 1.0, size=3)
        phase = math.pi * (slope_y * y + slope_x * x + offset)
        maps[c] = magnitude * np.exp(1j * phase)

    maps /= np.sqrt((np.abs(maps) ** 2).sum(axis=0).max())
    return CoilSensitivities(torch.from_numpy(maps))


def _coil_maps(coils: Optional[CoilSensitivities], grid_shape: Tuple[int, int], device) -> torch.Tensor:
    if coils is None:
        return torch.ones((1,) + tuple(grid_shape), dtype=COMPLEX_DTYPE, device=device)
    if coils.grid_shape != tuple(grid_shape):
        raise ForwardModelError(f"Coil maps have grid {coils.grid_shape}, expected {tuple(grid_shape)}")
    return coils.maps.to(device)


# =============================================================================
# Operators
# =============================================================================

def apply_forward(image, pattern: SamplingPattern, coils: Optional[CoilSensitivities] = None) -> torch.Tensor:
    """
    Forward operator of one frame.

    Args:
        image: complex H x W image (tensor or array)
        pattern (SamplingPattern): frame sampling pattern
        coils (Optional[CoilSensitivities]): coil maps, unit single coil when None

    Returns:
        torch.Tensor: C x M samples, M = number of sampled grid points
    """
    image = torch.as_tensor(image).to(COMPLEX_DTYPE)
    if tuple(image.shape) != pattern.grid_shape:
        raise ForwardModelError(f"Image shape {tuple(image.shape)} does not match grid {pattern.grid_shape}")
    maps = _coil_maps(coils, pattern.grid_shape, image.device)
    kspace = torch.fft.fft2(maps * image, norm="ortho")
    return kspace[:, pattern.mask.to(image.device)]


def apply_adjoint(samples, pattern: SamplingPattern, coils: Optional[CoilSensitivities] = None) -> torch.Tensor:
    """
    Adjoint of `apply_forward`: scatter, inverse unitary DFT, conjugate coil combine.

    Args:
        samples: C x M complex samples at the mask positions
        pattern (SamplingPattern): frame sampling pattern
        coils (Optional[CoilSensitivities]): coil maps, unit single coil when None

    Returns:
        torch.Tensor: complex H x W image
    """
    samples = torch.as_tensor(samples).to(COMPLEX_DTYPE)
    maps = _coil_maps(coils, pattern.grid_shape, samples.device)
    if samples.ndim != 2 or samples.shape != (maps.shape[0], pattern.num_samples):
        raise ForwardModelError(
            f"Expected samples of shape {(maps.shape[0], pattern.num_samples)}, got {tuple(samples.shape)}"
        )
    grid = torch.zeros_like(maps)
    grid[:, pattern.mask.to(samples.device)] = samples
    return (maps.conj() * torch.fft.ifft2(grid, norm="ortho")).sum(dim=0)


def apply_adjoint_frame(frame: FrameMeasurement, coils: Optional[CoilSensitivities] = None) -> torch.Tensor:
    """Adjoint applied to a stored frame; repeated positions accumulate."""
    maps = _coil_maps(coils, frame.pattern.grid_shape, frame.samples.device)
    C, H, W = maps.shape
    grid = torch.zeros((C, H * W), dtype=COMPLEX_DTYPE, device=frame.samples.device)
    grid.index_add_(1, frame.positions, frame.samples)
    return (maps.conj() * torch.fft.ifft2(grid.view(C, H, W), norm="ortho")).sum(dim=0)


def apply_forward_batch(images: torch.Tensor, frames: Sequence[FrameMeasurement],
                        coils: Optional[CoilSensitivities] = None) -> List[torch.Tensor]:
    """
    Forward operator for a batch of frames with one batched FFT.

    Args:
        images (torch.Tensor): B x H x W complex images
        frames: B stored frames whose positions select the entries
        coils (Optional[CoilSensitivities]): coil maps

    Returns:
        List[torch.Tensor]: per frame C x M_b predicted entries, aligned with frame.samples
    """
    if images.ndim != 3 or images.shape[0] != len(frames):
        raise ForwardModelError(f"Expected {len(frames)} images, got shape {tuple(images.shape)}")
    grid_shape = tuple(images.shape[1:])
    maps = _coil_maps(coils, grid_shape, images.device)
    kspace = torch.fft.fft2(maps.unsqueeze(0) * images.unsqueeze(1), norm="ortho")
    kspace = kspace.reshape(kspace.shape[0], kspace.shape[1], -1)
    return [kspace[b][:, frame.positions] for b, frame in enumerate(frames)]


# =============================================================================
# Temporal binning
# =============================================================================

def bin_measurements(mset: MeasurementSet, group_size: int) -> MeasurementSet:
    """
    Merge consecutive groups of frames into single frames.

    The merged mask is the union of the group's masks and the samples are
    concatenated, keeping one entry per originating frame. The result has
    ceil(N / group_size) frames and the same total sample count.

    Args:
        mset (MeasurementSet): measurements to bin
        group_size (int): frames per group, >= 1

    Returns:
        MeasurementSet: binned measurements
    """
    if group_size < 1:
        raise ForwardModelError(f"group_size must be >= 1, got {group_size}")
    if not mset.frames:
        raise ForwardModelError("Cannot bin an empty measurement set")
    if group_size == 1:
        return MeasurementSet(frames=list(mset.frames), coils=mset.coils, noise_sigma=mset.noise_sigma)

    binned = []
    for group_index, start in enumerate(range(0, mset.num_frames, group_size)):
        members = mset.frames[start:start + group_size]
        mask = members[0].pattern.mask.clone()
        lines = []
        for member in members:
            mask |= member.pattern.mask
            lines.extend(member.pattern.lines)
        binned.append(FrameMeasurement(
            pattern=SamplingPattern(frame_index=group_index, mask=mask, lines=lines),
            samples=torch.cat([m.samples for m in members], dim=1),
            positions=torch.cat([m.positions for m in members]),
        ))
    return MeasurementSet(frames=binned, coils=mset.coils, noise_sigma=mset.noise_sigma)
