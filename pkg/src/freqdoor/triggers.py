"""Procedural trigger images and the authentic/pseudo trigger bundle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .imaging import bilinear_resize

# Pool members must be visibly distinct from the authentic trigger.
MIN_POOL_DISTANCE = 0.05


def value_noise(size: int, rng: np.random.Generator, octaves: int = 4) -> np.ndarray:
    """Multi-octave value noise in [0, 1]: upsampled random lattices, halved amplitude."""
    acc = np.zeros((size, size), dtype=np.float64)
    amp = 1.0
    for octave in range(octaves):
        n = 2 ** (octave + 1) + 1
        lattice = rng.uniform(-1.0, 1.0, (n, n))
        acc += amp * bilinear_resize(lattice, size, size)
        amp *= 0.5
    lo, hi = acc.min(), acc.max()
    if hi - lo < 1e-12:
        return np.full((size, size), 0.5)
    return (acc - lo) / (hi - lo)


def make_texture(size: int, seed: int, channels: int = 3) -> np.ndarray:
    """A colorful smooth texture: value noise mixed with an oriented gradient."""
    rng = np.random.default_rng(seed)
    base = value_noise(size, rng)
    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    out = np.empty((size, size, channels), dtype=np.float64)
    for c in range(channels):
        angle = rng.uniform(0, 2 * np.pi)
        plane = 0.5 + 0.5 * (np.cos(angle) * (xs - 0.5) + np.sin(angle) * (ys - 0.5))
        detail = value_noise(size, rng, octaves=5)
        mix = rng.uniform(0.3, 0.7)
        out[:, :, c] = mix * base + (1 - mix) * (0.6 * plane + 0.4 * detail)
    return np.clip(out, 0.0, 1.0)


def make_trigger_corpus(count: int, size: int, seed: int, channels: int = 3) -> list[np.ndarray]:
    """Deterministic list of textures; member i depends only on (seed, i)."""
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    return [make_texture(size, seed * 100003 + i, channels) for i in range(count)]


@dataclass
class TriggerSet:
    """The authentic trigger plus the pseudo pool used for robust victim training.

    Pseudo sampling draws from an internal generator seeded at construction, so a
    rebuilt set with the same seed replays the same index sequence.
    """

    authentic: np.ndarray
    pseudo_pool: list[np.ndarray]
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not self.pseudo_pool:
            raise ParameterError("pseudo_pool must be nonempty")
        for i, img in enumerate(self.pseudo_pool):
            if img.shape != self.authentic.shape:
                raise ParameterError(f"pseudo_pool[{i}] shape differs from authentic")
            gap = float(np.abs(img - self.authentic).max())
            if gap <= MIN_POOL_DISTANCE:
                raise ParameterError(
                    f"pseudo_pool[{i}] too close to authentic trigger (max|diff|={gap:.4f})"
                )
        self._rng = np.random.default_rng(self.seed)

    def sample_pseudo(self) -> tuple[np.ndarray, int]:
        """Uniformly pick a pseudo trigger; advances the set's generator."""
        idx = int(self._rng.integers(len(self.pseudo_pool)))
        return self.pseudo_pool[idx], idx


def make_trigger_set(size: int, seed: int, pool_size: int = 16, channels: int = 3) -> TriggerSet:
    """Authentic trigger plus ``pool_size`` pseudo textures from disjoint seeds."""
    authentic = make_texture(size, seed * 100003 + 999331, channels)
    pool = make_trigger_corpus(pool_size, size, seed + 1, channels)
    return TriggerSet(authentic=authentic, pseudo_pool=pool, seed=seed)
