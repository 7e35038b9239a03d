#!/usr/bin/env python3
"""
Reconstruction cost.

    C(z, theta) = sum_i ||A_i(G(z_i)) - b_i||^2
                  + lambda1 * sum_i ||grad_z G(z_i)||^2
                  + lambda2 * sum_i ||z_{i+1} - z_i||^2

The first two terms separate over frames and are evaluated on a minibatch,
rescaled by N / B so that the weights do not depend on the batch size. The
temporal term always covers the whole latent sequence.
"""

import logging
from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from forward_model import MeasurementSet, apply_forward_batch
from generator import GeneratorState, generate, network_penalty


logger = logging.getLogger(__name__)


class ObjectiveError(ValueError):
    """Exception raised for inconsistent cost inputs."""
    pass


@dataclass
class LatentSequence:
    """Per-frame latent vectors z_1..z_N with their frame times."""
    z: torch.Tensor
    frame_times: Optional[np.ndarray] = None

    def __post_init__(self):
        self.z = torch.as_tensor(self.z, dtype=torch.float64)
        if self.z.ndim != 2 or self.z.shape[0] < 1:
            raise ObjectiveError(f"Latents must be N x d with N >= 1, got shape {tuple(self.z.shape)}")
        if not bool(torch.isfinite(self.z).all()):
            raise ObjectiveError("Latents contain non-finite values")
        if self.frame_times is None:
            self.frame_times = np.arange(self.z.shape[0], dtype=np.float64)
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        if self.frame_times.shape != (self.z.shape[0],):
            raise ObjectiveError("frame_times must have one entry per latent")
        if np.any(np.diff(self.frame_times) < 0):
            raise ObjectiveError("frame_times must be monotone")

    @property
    def num_frames(self) -> int:
        return int(self.z.shape[0])

    @property
    def latent_dim(self) -> int:
        return int(self.z.shape[1])

    def numpy(self) -> np.ndarray:
        return self.z.detach().cpu().numpy().copy()


@dataclass
class RegWeights:
    """Weights of the network (lambda1) and temporal (lambda2) penalties."""
    lambda1: float = 0.001
    lambda2: float = 2.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ObjectiveError(f"Regularization weights must be >= 0, got {self.lambda1}, {self.lambda2}")


@dataclass
class CostTerms:
    """Weighted contributions of the three cost terms."""
    data: float
    network: float
    temporal: float

    @property
    def total(self) -> float:
        return self.data + self.network + self.temporal

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


LatentsLike = Union[LatentSequence, torch.Tensor]


def latent_matrix(latents: LatentsLike) -> torch.Tensor:
    """The N x d latent tensor behind a LatentSequence or a raw tensor."""
    if isinstance(latents, LatentSequence):
        return latents.z
    return latents


def _resolve_indices(frame_indices: Optional[Sequence[int]], num_frames: int) -> List[int]:
    if frame_indices is None:
        return list(range(num_frames))
    indices = [int(i) for i in frame_indices]
    if not indices:
        raise ObjectiveError("frame_indices must not be empty")
    for i in indices:
        if i < 0 or i >= num_frames:
            raise IndexError(f"Frame index {i} out of range [0, {num_frames})")
    return indices


def _check_lengths(z: torch.Tensor, mset: MeasurementSet) -> None:
    if z.shape[0] != mset.num_frames:
        raise ObjectiveError(f"{z.shape[0]} latents for {mset.num_frames} measurement frames")


def data_fidelity(state: GeneratorState, latents: LatentsLike, mset: MeasurementSet,
                  frame_indices: Optional[Sequence[int]] = None) -> torch.Tensor:
    """
    Squared distance between predicted and stored samples over selected frames.

    Args:
        state (GeneratorState): generator
        latents: N x d latents
        mset (MeasurementSet): measurements, one frame per latent
        frame_indices: frames to include (all when None)

    Returns:
        torch.Tensor: scalar, summed over frames, coils and entries
    """
    z = latent_matrix(latents)
    _check_lengths(z, mset)
    indices = _resolve_indices(frame_indices, mset.num_frames)
    frames = [mset.frames[i] for i in indices]
    images = generate(state, z[indices])
    predictions = apply_forward_batch(images, frames, mset.coils)
    total = images.real.new_zeros(())
    for predicted, frame in zip(predictions, frames):
        residual = predicted - frame.samples.to(predicted.device)
        total = total + (residual.real ** 2 + residual.imag ** 2).sum()
    return total


def temporal_penalty(latents: LatentsLike, frame_indices: Optional[Sequence[int]] = None) -> torch.Tensor:
    """
    Sum of squared forward differences of the full latent sequence.

    `frame_indices` is accepted for symmetry with the data term and ignored:
    the chain is always penalized end to end.
    """
    z = latent_matrix(latents)
    if z.shape[0] < 2:
        return z.new_zeros(())
    diffs = z[1:] - z[:-1]
    return (diffs ** 2).sum()


def total_cost(state: GeneratorState, latents: LatentsLike, mset: MeasurementSet,
               weights: RegWeights, frame_indices: Optional[Sequence[int]] = None) -> Tuple[torch.Tensor, CostTerms]:
    """
    Full cost over a minibatch of frames.

    Args:
        state (GeneratorState): generator
        latents: N x d latents
        mset (MeasurementSet): measurements
        weights (RegWeights): lambda1, lambda2
        frame_indices: minibatch (all frames when None)

    Returns:
        Tuple[torch.Tensor, CostTerms]: differentiable scalar and its weighted terms
    """
    z = latent_matrix(latents)
    _check_lengths(z, mset)
    indices = _resolve_indices(frame_indices, mset.num_frames)
    scale = mset.num_frames / len(indices)

    data = data_fidelity(state, z, mset, indices)
    if len(indices) != mset.num_frames:
        data = data * scale
    if weights.lambda1 > 0:
        network = weights.lambda1 * mset.num_frames * network_penalty(state, z[indices])
    else:
        network = data.new_zeros(())
    if weights.lambda2 > 0:
        temporal = weights.lambda2 * temporal_penalty(z).to(data.device)
    else:
        temporal = data.new_zeros(())

    total = data + network + temporal
    terms = CostTerms(data=data.item(), network=network.item(), temporal=temporal.item())
    return total, terms
