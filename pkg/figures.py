#!/usr/bin/env python3
"""
Static figures rendered from evaluation data files.

Figures are pure functions of the CSV data written by the evaluate
command, saved as PNG without a software tag, so they are reproducible
byte for byte.
"""

import logging
from typing import Dict, List, Optional

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


logger = logging.getLogger(__name__)

PNG_METADATA = {"Software": None}


def _ser_key(magnitude: bool) -> str:
    return "ser_mag_db" if magnitude else "ser_db"


def _save(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, format="png", metadata=PNG_METADATA)
    plt.close(fig)
    logger.info("Wrote figure %s", path)


def plot_ser_vs_time(runs: Dict[str, List[Dict[str, Optional[float]]]], path: str,
                     magnitude: bool = True, threshold: Optional[float] = None) -> None:
    """SER of each run against optimization wall time."""
    key = _ser_key(magnitude)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(runs):
        points = [(r["wall_seconds"], r[key]) for r in runs[name] if r[key] is not None]
        if points:
            t, s = zip(*points)
            ax.plot(t, s, marker=".", label=name)
    if threshold is not None:
        ax.axhline(threshold, color="gray", linestyle="--", linewidth=1, label="threshold")
    ax.set_xlabel("wall time (s)")
    ax.set_ylabel("SER (dB)")
    ax.legend()
    _save(fig, path)


def plot_ser_vs_epoch(runs: Dict[str, List[Dict[str, Optional[float]]]], path: str, magnitude: bool = True) -> None:
    """SER of each run against the global epoch."""
    key = _ser_key(magnitude)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(runs):
        points = [(r["global_epoch"], r[key]) for r in runs[name] if r[key] is not None]
        if points:
            e, s = zip(*points)
            ax.plot(e, s, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("SER (dB)")
    ax.legend()
    _save(fig, path)


def plot_latents(z: np.ndarray, path: str, title: Optional[str] = None) -> None:
    """Latent coordinates over frames, one curve per channel."""
    z = np.asarray(z)
    fig, ax = plt.subplots(figsize=(7, 3))
    for k in range(z.shape[1]):
        ax.plot(np.arange(z.shape[0]), z[:, k], label=f"z{k}")
    ax.set_xlabel("frame")
    ax.set_ylabel("latent value")
    if title:
        ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_time_profile(profile: np.ndarray, path: str, title: Optional[str] = None) -> None:
    """
    Position-time image of one row, frames along the horizontal axis.

    Args:
        profile (np.ndarray): N x W magnitudes from evaluation.time_profile
        path (str): PNG path
        title (Optional[str]): figure title
    """
    profile = np.asarray(profile)
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.imshow(profile.T, cmap="gray", aspect="auto", origin="upper", interpolation="nearest",
              vmin=0.0, vmax=max(float(profile.max()), 1e-12))
    ax.set_xlabel("frame")
    ax.set_ylabel("x")
    if title:
        ax.set_title(title)
    _save(fig, path)
