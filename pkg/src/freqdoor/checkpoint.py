"""Checkpoint persistence: a JSON manifest plus a flat little-endian float32 blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

FORMAT_NAME = "freqdoor-checkpoint-v1"
ITEM_BYTES = 4  # float32


def save_checkpoint(tensors: dict, prefix) -> tuple[Path, Path]:
    """Write ``prefix``.json (manifest) and ``prefix``.bin (blob).

    Accepts numpy arrays or torch tensors; everything is stored as float32 in
    manifest order with byte offsets into the blob.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, value in tensors.items():
        if isinstance(value, torch.Tensor):
            arr = value.detach().cpu().numpy()
        else:
            arr = np.asarray(value)
        arr = arr.astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size * ITEM_BYTES
    manifest = {
        "format": FORMAT_NAME,
        "byte_order": "little",
        "dtype": "float32",
        "total_bytes": offset,
        "tensors": entries,
    }
    manifest_path = prefix.with_suffix(".json")
    blob_path = prefix.with_suffix(".bin")
    manifest_path.write_text(json.dumps(manifest, indent=1))
    blob_path.write_bytes(b"".join(chunks))
    return manifest_path, blob_path


def load_checkpoint(prefix) -> dict[str, np.ndarray]:
    """Read tensors back; reject manifests that disagree with the blob length."""
    prefix = Path(prefix)
    manifest_path = prefix.with_suffix(".json")
    blob_path = prefix.with_suffix(".bin")
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"missing checkpoint files for {prefix}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT_NAME:
        raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
    blob = blob_path.read_bytes()
    declared = 0
    for entry in manifest["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        if entry["offset"] != declared:
            raise CheckpointError(
                f"tensor {entry['name']!r} offset {entry['offset']} != expected {declared}"
            )
        declared += size * ITEM_BYTES
    if declared != manifest["total_bytes"] or declared != len(blob):
        raise CheckpointError(
            f"declared sizes ({declared} / manifest {manifest['total_bytes']}) "
            f"disagree with blob length {len(blob)}"
        )
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).copy()
    return tensors


def save_module(module: torch.nn.Module, prefix) -> tuple[Path, Path]:
    return save_checkpoint(dict(module.state_dict()), prefix)


def load_module(module: torch.nn.Module, prefix) -> torch.nn.Module:
    tensors = load_checkpoint(prefix)
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    module.load_state_dict(state)
    return module
