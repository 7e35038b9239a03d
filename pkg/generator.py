#!/usr/bin/env python3
"""
Convolutional generator mapping latent vectors to complex image frames.

Architecture: a dense map from the d-dimensional latent to a 4 x 4 seed grid,
then `upsample_stages` blocks of (nearest-neighbour x2 upsample, 3 x 3
convolution, activation) with channels halving per block, and a final 3 x 3
convolution to two channels read as (real, imag).

The default activation is tanh, t(x) = (e^x - e^-x) / (e^x + e^-x), which is
smooth and saturating, so the latent Jacobian is continuous and the network
penalty has a well-defined gradient. `leaky_relu` (slope 0.2 for x < 0) is
faster, but its second derivative vanishes almost everywhere, so the penalty
gradient then sees no curvature.
"""

import logging
import math
from dataclasses import dataclass, asdict
from typing import Any, Dict, List, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "leaky_relu")
MIN_CHANNELS = 4


class GeneratorError(ValueError):
    """Exception raised for invalid generator configurations or inputs."""
    pass


class NonFiniteError(ArithmeticError):
    """Raised when a generator quantity becomes NaN or infinite."""
    pass


@dataclass
class GeneratorConfig:
    """Architecture description of the generator."""
    latent_dim: int = 2
    output_shape: Tuple[int, int] = (64, 64)
    base_channels: int = 128
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        self.output_shape = tuple(int(s) for s in self.output_shape)

    @property
    def upsample_stages(self) -> int:
        return int(round(math.log2(self.output_shape[0] / 4)))

    def stage_channels(self) -> List[int]:
        """Channel count of the seed grid followed by each upsampling stage."""
        return [self.base_channels] + [
            max(self.base_channels >> s, MIN_CHANNELS) for s in range(1, self.upsample_stages + 1)
        ]

    def validate(self) -> None:
        H, W = self.output_shape
        if H != W:
            raise GeneratorError(f"Output must be square, got {self.output_shape}")
        if H < 16 or H & (H - 1):
            raise GeneratorError(f"Output size must be a power of two >= 16, got {H}")
        if self.latent_dim < 1:
            raise GeneratorError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.base_channels < 8:
            raise GeneratorError(f"base_channels must be >= 8, got {self.base_channels}")
        if self.activation not in ACTIVATIONS:
            raise GeneratorError(f"activation must be one of {ACTIVATIONS}, got '{self.activation}'")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["output_shape"] = list(self.output_shape)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GeneratorConfig":
        try:
            return cls(**data)
        except TypeError as e:
            raise GeneratorError(f"Invalid generator config: {e}")


class ConvGenerator(nn.Module):
    """Dense seed grid followed by upsample/convolution stages."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        channels = config.stage_channels()
        self.seed_channels = channels[0]
        self.dense = nn.Linear(config.latent_dim, channels[0] * 16)
        self.convs = nn.ModuleList(
            nn.Conv2d(channels[s], channels[s + 1], kernel_size=3, padding=1)
            for s in range(config.upsample_stages)
        )
        self.output = nn.Conv2d(channels[-1], 2, kernel_size=3, padding=1)
        if config.activation == "tanh":
            self.activation = torch.tanh
        else:
            self.activation = lambda x: F.leaky_relu(x, negative_slope=0.2)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = self.activation(self.dense(z)).view(-1, self.seed_channels, 4, 4)
        for conv in self.convs:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self.activation(conv(x))
        return self.output(x)


@dataclass
class GeneratorState:
    """Generator configuration plus its trainable network."""
    config: GeneratorConfig
    network: nn.Module

    @property
    def device(self) -> torch.device:
        return next(self.network.parameters()).device

    def parameters(self):
        return self.network.parameters()

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.network.parameters())


def parameter_count(config: GeneratorConfig) -> int:
    """Closed-form number of trainable parameters for a configuration."""
    channels = config.stage_channels()
    count = config.latent_dim * channels[0] * 16 + channels[0] * 16
    for c_in, c_out in zip(channels[:-1], channels[1:]):
        count += 9 * c_in * c_out + c_out
    count += 9 * channels[-1] * 2 + 2
    return count


def init_generator(config: GeneratorConfig, device: str = "cpu") -> GeneratorState:
    """
    Create a generator with seeded random parameters.

    Every weight and bias is drawn from N(0, 1/fan_in) of its layer, in
    parameter registration order, from a generator seeded with config.seed.

    Args:
        config (GeneratorConfig): architecture description
        device (str): torch device for the network

    Returns:
        GeneratorState: freshly initialized generator
    """
    config.validate()
    network = ConvGenerator(config).to(dtype=torch.float64)
    rng = torch.Generator().manual_seed(int(config.seed))

    with torch.no_grad():
        for module in network.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                fan_in = module.weight[0].numel()
                std = 1.0 / math.sqrt(fan_in)
                module.weight.copy_(torch.randn(module.weight.shape, generator=rng, dtype=torch.float64) * std)
                module.bias.copy_(torch.randn(module.bias.shape, generator=rng, dtype=torch.float64) * std)

    network = network.to(device)
    logger.debug("Initialized generator with %d parameters (seed %d)", parameter_count(config), config.seed)
    return GeneratorState(config=config, network=network)


def _as_latent_batch(state: GeneratorState, z_batch) -> torch.Tensor:
    z = torch.as_tensor(z_batch)
    if not z.is_floating_point():
        z = z.to(torch.float64)
    if z.ndim == 1:
        z = z.unsqueeze(0)
    if z.ndim != 2:
        raise GeneratorError(f"Latents must be B x d, got shape {tuple(z.shape)}")
    if not bool(torch.isfinite(z).all()):
        raise GeneratorError("Latents contain non-finite values")
    return z.to(device=state.device, dtype=torch.float64)


def generate(state: GeneratorState, z_batch) -> torch.Tensor:
    """
    Evaluate the generator.

    Args:
        state (GeneratorState): generator
        z_batch: B x d latents

    Returns:
        torch.Tensor: B x H x W complex frames
    """
    z = _as_latent_batch(state, z_batch)
    out = state.network(z)
    return torch.complex(out[:, 0], out[:, 1])


def jacobian_vector_products(state: GeneratorState, z_batch) -> List[torch.Tensor]:
    """
    Products of the latent-to-image Jacobian with each latent basis vector.

    Uses the double-backward identity J v = d/du <J^T u, v>: one backward pass
    gives J^T u as a function of a probe u, and one more pass per direction
    recovers J e_k. All results stay differentiable with respect to the
    network parameters and the latents.

    Returns:
        List[torch.Tensor]: d tensors of shape B x 2 x H x W (real, imag channels)
    """
    z = _as_latent_batch(state, z_batch)
    if not z.requires_grad:
        z = z.detach().requires_grad_(True)
    out = state.network(z)
    probe = torch.zeros_like(out, requires_grad=True)
    vjp = torch.autograd.grad(out, z, grad_outputs=probe, create_graph=True)[0]

    products = []
    for k in range(z.shape[1]):
        direction = torch.zeros_like(vjp)
        direction[:, k] = 1.0
        jvp = torch.autograd.grad(vjp, probe, grad_outputs=direction, create_graph=True,
                                  allow_unused=True)[0]
        products.append(torch.zeros_like(out) if jvp is None else jvp)
    return products


def network_penalty(state: GeneratorState, z_batch) -> torch.Tensor:
    """
    Mean squared Frobenius norm of the latent Jacobian over a batch.

    (1/B) sum_i sum_k ||J(z_i) e_k||^2, with both output channels included.

    Raises:
        GeneratorError: if the batch is empty
        NonFiniteError: if the penalty is NaN or infinite
    """
    z = torch.as_tensor(z_batch)
    if z.ndim == 2 and z.shape[0] < 1:
        raise GeneratorError("network_penalty needs at least one latent")
    products = jacobian_vector_products(state, z)
    batch_size = products[0].shape[0]
    penalty = sum(p.pow(2).sum() for p in products) / batch_size
    if not bool(torch.isfinite(penalty)):
        raise NonFiniteError(f"Network penalty is not finite ({penalty.item()})")
    return penalty


def flat_parameters(state: GeneratorState) -> Dict[str, np.ndarray]:
    """Parameters as float64 numpy arrays keyed by their module path."""
    return {
        name: tensor.detach().cpu().to(torch.float64).numpy().copy()
        for name, tensor in state.network.state_dict().items()
    }


def load_flat_parameters(state: GeneratorState, arrays: Dict[str, np.ndarray]) -> GeneratorState:
    """Copy stored parameter arrays into the network, checking names and shapes."""
    expected = state.network.state_dict()
    missing = sorted(set(expected) - set(arrays))
    unexpected = sorted(set(arrays) - set(expected))
    if missing or unexpected:
        raise GeneratorError(f"Parameter mismatch: missing {missing}, unexpected {unexpected}")
    tensors = {}
    for name, value in arrays.items():
        if tuple(value.shape) != tuple(expected[name].shape):
            raise GeneratorError(f"Parameter '{name}' has shape {value.shape}, expected {tuple(expected[name].shape)}")
        tensors[name] = torch.from_numpy(np.ascontiguousarray(value, dtype=np.float64))
    state.network.load_state_dict(tensors)
    return state
