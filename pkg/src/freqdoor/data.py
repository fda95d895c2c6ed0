"""Synthetic dataset generation, PNG I/O, and the paired gt/lq directory layout."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ParameterError
from .imaging import DegradationConfig, degrade, gaussian_blur
from .triggers import value_noise

MIN_COUNT = 10
MIN_SIZE = 32
TRAIN_FRACTION = 0.9


def save_image(path, img: np.ndarray) -> None:
    """Store as 8-bit PNG with values mapped by round(v * 255)."""
    arr = np.asarray(img, dtype=np.float64)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if data.shape[2] == 1:
        PILImage.fromarray(data[:, :, 0], mode="L").save(path)
    else:
        PILImage.fromarray(data, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    """Load a PNG back to the float (H, W, C) representation."""
    with PILImage.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def _blob(size: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.exp(-(((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2))


def synth_image(size: int, seed: int, channels: int = 3, face_like: bool = True) -> np.ndarray:
    """One structured synthetic ground-truth image: background, blobs, edges, texture."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.empty((size, size, channels), dtype=np.float64)
    for c in range(channels):
        tilt = rng.uniform(-0.3, 0.3)
        img[:, :, c] = rng.uniform(0.2, 0.6) + tilt * (ys - 0.5) + rng.uniform(-0.2, 0.2) * (
            xs - 0.5
        )

    if face_like:
        # oval "head" with two dark "eyes" and a "mouth" bar, jittered per seed
        cy = size * rng.uniform(0.42, 0.58)
        cx = size * rng.uniform(0.42, 0.58)
        head = _blob(size, cy, cx, size * 0.32, size * 0.26)
        tint = rng.uniform(0.55, 0.85, channels)
        img += head[:, :, None] * (tint - img.mean(axis=(0, 1)))[None, None, :] * 0.9
        eye_dy = size * 0.12
        eye_dx = size * 0.11
        for sx in (-1, 1):
            eye = _blob(size, cy - eye_dy, cx + sx * eye_dx, size * 0.035, size * 0.045)
            img -= 0.6 * eye[:, :, None]
        mouth = _blob(size, cy + size * 0.16, cx, size * 0.03, size * 0.1)
        img -= 0.45 * mouth[:, :, None]

    n_shapes = int(rng.integers(2, 5))
    for _ in range(n_shapes):
        y0, x0 = rng.integers(0, size, 2)
        h = int(rng.integers(size // 8, size // 3))
        w = int(rng.integers(size // 8, size // 3))
        delta = rng.uniform(-0.35, 0.35, channels)
        img[y0 : y0 + h, x0 : x0 + w] += delta[None, None, :]

    texture = value_noise(size, rng, octaves=5) - 0.5
    img += 0.15 * texture[:, :, None]
    img += rng.normal(0.0, 0.01, img.shape)
    img = gaussian_blur(img, 0.6)
    return np.clip(img, 0.0, 1.0)


@dataclass
class DatasetSplits:
    train: list  # (lq, gt) pairs
    test: list
    names_train: list
    names_test: list


def synth_dataset(
    count: int,
    size: int,
    seed: int,
    out_dir,
    degradation: DegradationConfig | None = None,
    channels: int = 3,
    face_like: bool = True,
) -> Path:
    """Generate gt/ and lq/ image pairs plus a train/test manifest.

    Byte-identical across runs for identical arguments. Per-image degradation
    seeds derive from the dataset seed and image index.
    """
    if count < MIN_COUNT:
        raise ParameterError(f"count must be >= {MIN_COUNT}, got {count}")
    if size < MIN_SIZE:
        raise ParameterError(f"size must be >= {MIN_SIZE}, got {size}")
    root = Path(out_dir)
    try:
        (root / "gt").mkdir(parents=True, exist_ok=True)
        (root / "lq").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    degradation = degradation or DegradationConfig()

    split_rng = np.random.default_rng(seed)
    order = split_rng.permutation(count)
    n_train = int(round(TRAIN_FRACTION * count))
    train_ids = set(order[:n_train].tolist())

    rows = []
    for i in range(count):
        name = f"{i:04d}.png"
        gt = synth_image(size, seed * 1_000_003 + i, channels, face_like)
        lq = degrade(gt, replace(degradation, seed=seed * 7_000_003 + i))
        save_image(root / "gt" / name, gt)
        save_image(root / "lq" / name, lq)
        rows.append((name, "train" if i in train_ids else "test"))
    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "split"])
        writer.writerows(rows)
    return root


def load_dataset(root) -> DatasetSplits:
    """Read back the paired gt/lq layout per the manifest."""
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise ParameterError(f"no manifest.csv under {root}")
    train, test, names_train, names_test = [], [], [], []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            pair = (load_image(root / "lq" / row["name"]), load_image(root / "gt" / row["name"]))
            if row["split"] == "train":
                train.append(pair)
                names_train.append(row["name"])
            else:
                test.append(pair)
                names_test.append(row["name"])
    return DatasetSplits(train=train, test=test, names_train=names_train, names_test=names_test)
