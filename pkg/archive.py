#!/usr/bin/env python3
"""
Binary archive format shared by every file the pipeline writes.

Layout:
    8 bytes   magic  b"DYNRARC\\0"
    8 bytes   header length, little-endian uint64
    n bytes   JSON header (sorted keys): format_version, kind, meta, blocks
    ...       raw little-endian blocks, in header order

Each block entry records its name, storage dtype ("<f8", "<i8" or "|u1"),
logical shape, byte offset (relative to the end of the header), and whether
it holds complex values. Complex arrays are stored as float64 (real, imag)
pairs. Nothing time-dependent is written, so identical inputs give
byte-identical files.
"""

import json
import logging
import os
import struct
from datetime import datetime
from typing import Any, Dict, List, Tuple

import numpy as np
import torch

from forward_model import CoilSensitivities, FrameMeasurement, MeasurementSet, SamplingPattern
from generator import GeneratorConfig, GeneratorState, flat_parameters, init_generator, load_flat_parameters
from objective import LatentSequence
from phantom import PhantomSpec, PhantomTruth


logger = logging.getLogger(__name__)

MAGIC = b"DYNRARC\x00"
FORMAT_VERSION = 1


class ArchiveError(IOError):
    """Exception raised when an archive cannot be written or read."""
    pass


def _encode_block(array: np.ndarray) -> Tuple[bytes, Dict[str, Any]]:
    array = np.asarray(array)
    entry = {"shape": list(array.shape), "complex": bool(np.iscomplexobj(array))}
    if entry["complex"]:
        data = np.stack([array.real, array.imag], axis=-1).astype("<f8")
        entry["dtype"] = "<f8"
    elif array.dtype == np.bool_:
        data = array.astype("|u1")
        entry["dtype"] = "|u1"
    elif np.issubdtype(array.dtype, np.integer):
        data = array.astype("<i8")
        entry["dtype"] = "<i8"
    else:
        data = array.astype("<f8")
        entry["dtype"] = "<f8"
    return np.ascontiguousarray(data).tobytes(), entry


def _decode_block(raw: bytes, entry: Dict[str, Any]) -> np.ndarray:
    shape = tuple(entry["shape"])
    if entry["complex"]:
        pairs = np.frombuffer(raw, dtype="<f8").reshape(shape + (2,))
        out = np.empty(shape, dtype=np.complex128)
        out.real = pairs[..., 0]
        out.imag = pairs[..., 1]
        return out
    data = np.frombuffer(raw, dtype=entry["dtype"]).reshape(shape)
    if entry["dtype"] == "|u1":
        return data.astype(bool)
    return data.astype(np.int64 if entry["dtype"] == "<i8" else np.float64)


def write_archive(path: str, kind: str, meta: Dict[str, Any], blocks: Dict[str, np.ndarray]) -> None:
    """
    Write an archive.

    Args:
        path (str): destination file
        kind (str): content type recorded in the header
        meta (Dict[str, Any]): JSON-serializable metadata
        blocks (Dict[str, np.ndarray]): named arrays, written in insertion order

    Raises:
        ArchiveError: If the file cannot be written
    """
    entries: List[Dict[str, Any]] = []
    payload: List[bytes] = []
    offset = 0
    for name, array in blocks.items():
        raw, entry = _encode_block(array)
        entry.update({"name": name, "offset": offset, "nbytes": len(raw)})
        entries.append(entry)
        payload.append(raw)
        offset += len(raw)

    header = {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta, "blocks": entries}
    try:
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    except (TypeError, ValueError) as e:
        raise ArchiveError(f"Archive metadata for {path} is not serializable: {e}")

    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header_bytes)))
            f.write(header_bytes)
            for raw in payload:
                f.write(raw)
    except OSError as e:
        raise ArchiveError(f"Error writing archive {path}: {e}")
    logger.debug("Wrote %s archive %s (%d blocks)", kind, path, len(entries))


def read_archive(path: str, expected_kind: str = None) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read an archive.

    Args:
        path (str): archive file
        expected_kind (str): if given, the header kind must match

    Returns:
        Tuple[Dict[str, Any], Dict[str, np.ndarray]]: header and named arrays

    Raises:
        FileNotFoundError: If the file does not exist
        ArchiveError: If the file is not a valid archive
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Archive not found: {path}")
    try:
        with open(path, "rb") as f:
            content = f.read()
    except OSError as e:
        raise ArchiveError(f"Error reading archive {path}: {e}")

    if content[:len(MAGIC)] != MAGIC:
        raise ArchiveError(f"{path} is not an archive (bad magic)")
    try:
        (header_len,) = struct.unpack("<Q", content[len(MAGIC):len(MAGIC) + 8])
        start = len(MAGIC) + 8
        header = json.loads(content[start:start + header_len].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveError(f"Corrupt archive header in {path}: {e}")

    if header.get("format_version") != FORMAT_VERSION:
        raise ArchiveError(f"Unsupported archive version {header.get('format_version')} in {path}")
    if expected_kind is not None and header.get("kind") != expected_kind:
        raise ArchiveError(f"{path} holds '{header.get('kind')}', expected '{expected_kind}'")

    body = content[start + header_len:]
    blocks = {}
    for entry in header["blocks"]:
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ArchiveError(f"Archive {path} is truncated in block '{entry['name']}'")
        blocks[entry["name"]] = _decode_block(raw, entry)
    return header, blocks


def archive_info(path: str) -> Dict[str, Any]:
    """
    Get information about an archive file.

    Args:
        path (str): archive file

    Returns:
        Dict[str, Any]: kind, version, block names and file statistics
    """
    try:
        header, _ = read_archive(path)
        stat = os.stat(path)
        return {
            "path": path,
            "exists": True,
            "kind": header["kind"],
            "format_version": header["format_version"],
            "blocks": [entry["name"] for entry in header["blocks"]],
            "file_size_bytes": stat.st_size,
            "modified": datetime.fromtimestamp(stat.st_mtime).isoformat(),
        }
    except Exception as e:
        return {"path": path, "error": str(e), "exists": os.path.exists(path)}


# =============================================================================
# Typed archives
# =============================================================================

def save_measurement_set(mset: MeasurementSet, path: str) -> None:
    """Store measurements: coil maps, angle lists, mask indices, positions and samples."""
    blocks = {"coil_maps": mset.coils.maps.detach().cpu().numpy()}
    for i, frame in enumerate(mset.frames):
        blocks[f"frame{i}/mask_index"] = frame.pattern.positions().cpu().numpy()
        blocks[f"frame{i}/positions"] = frame.positions.cpu().numpy()
        blocks[f"frame{i}/samples"] = frame.samples.detach().cpu().numpy()
    meta = {
        "grid_shape": list(mset.grid_shape),
        "num_coils": mset.num_coils,
        "num_frames": mset.num_frames,
        "noise_sigma": mset.noise_sigma,
        "frame_indices": [f.pattern.frame_index for f in mset.frames],
        "lines": [list(f.pattern.lines) for f in mset.frames],
    }
    write_archive(path, "measurement_set", meta, blocks)


def load_measurement_set(path: str) -> MeasurementSet:
    header, blocks = read_archive(path, "measurement_set")
    meta = header["meta"]
    H, W = meta["grid_shape"]
    frames = []
    for i in range(meta["num_frames"]):
        mask = np.zeros(H * W, dtype=bool)
        mask[blocks[f"frame{i}/mask_index"]] = True
        pattern = SamplingPattern(
            frame_index=meta["frame_indices"][i],
            mask=torch.from_numpy(mask.reshape(H, W)),
            lines=list(meta["lines"][i]),
        )
        frames.append(FrameMeasurement(
            pattern=pattern,
            samples=torch.from_numpy(blocks[f"frame{i}/samples"]),
            positions=torch.from_numpy(blocks[f"frame{i}/positions"]),
        ))
    coils = CoilSensitivities(torch.from_numpy(blocks["coil_maps"]))
    return MeasurementSet(frames=frames, coils=coils, noise_sigma=meta["noise_sigma"])


def save_phantom_truth(truth: PhantomTruth, path: str) -> None:
    blocks = {
        "images": truth.images,
        "phases/cardiac": truth.cardiac_phase,
        "phases/respiratory": truth.resp_phase,
    }
    write_archive(path, "phantom_truth", {"spec": truth.spec.to_dict()}, blocks)


def load_phantom_truth(path: str) -> PhantomTruth:
    header, blocks = read_archive(path, "phantom_truth")
    return PhantomTruth(
        spec=PhantomSpec.from_dict(header["meta"]["spec"]),
        images=blocks["images"],
        cardiac_phase=blocks["phases/cardiac"],
        resp_phase=blocks["phases/respiratory"],
    )


def save_image_series(images, path: str, meta: Dict[str, Any] = None) -> None:
    if isinstance(images, torch.Tensor):
        images = images.detach().cpu().numpy()
    write_archive(path, "image_series", meta or {}, {"images": np.asarray(images, dtype=np.complex128)})


def load_image_series(path: str) -> np.ndarray:
    _, blocks = read_archive(path, "image_series")
    return blocks["images"]


def save_latents(latents: LatentSequence, path: str) -> None:
    blocks = {"z": latents.numpy(), "frame_times": latents.frame_times}
    write_archive(path, "latent_sequence", {"num_frames": latents.num_frames, "latent_dim": latents.latent_dim}, blocks)


def load_latents(path: str) -> LatentSequence:
    _, blocks = read_archive(path, "latent_sequence")
    return LatentSequence(z=torch.from_numpy(blocks["z"]), frame_times=blocks["frame_times"])


def save_generator(state: GeneratorState, path: str) -> None:
    """Checkpoint the generator: its config plus float64 parameter arrays."""
    write_archive(path, "generator", {"config": state.config.to_dict()}, flat_parameters(state))


def load_generator(path: str, device: str = "cpu") -> GeneratorState:
    header, blocks = read_archive(path, "generator")
    state = init_generator(GeneratorConfig.from_dict(header["meta"]["config"]), device=device)
    return load_flat_parameters(state, blocks)
