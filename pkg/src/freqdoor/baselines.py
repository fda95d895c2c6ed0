"""Hand-crafted baseline injectors: low-frequency amplitude blending and warping."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .imaging import (
    FrequencyAnalysisConfig,
    FrequencySpectrum,
    bilinear_resize,
    dft2,
    idft2,
    lowpass_mask,
)


def fiba_inject(
    benign: np.ndarray,
    trigger: np.ndarray,
    blend: float,
    cfg: FrequencyAnalysisConfig | None = None,
    clamp: bool = True,
) -> np.ndarray:
    """Blend the trigger's DFT amplitude into the benign low-frequency box.

    Inside the centered beta box the poisoned amplitude is
    (1 - blend) * benign + blend * trigger; outside it is untouched. Phase is
    the benign image's everywhere. The modified spectrum is inverted and the
    tiny imaginary residue of the now slightly asymmetric spectrum dropped.
    """
    cfg = (cfg or FrequencyAnalysisConfig()).validate()
    arr_b = np.asarray(benign, dtype=np.float64)
    arr_t = np.asarray(trigger, dtype=np.float64)
    if arr_b.shape != arr_t.shape:
        raise ParameterError(f"shape mismatch: {arr_b.shape} vs {arr_t.shape}")
    if not (0.0 <= blend <= 1.0):
        raise ParameterError(f"blend must be in [0, 1], got {blend}")
    spec_b = dft2(arr_b).data
    spec_t = dft2(arr_t).data
    amp_b = np.abs(spec_b)
    phase_b = np.angle(spec_b)
    amp_t = np.abs(spec_t)
    mask = lowpass_mask(arr_b.shape[0], arr_b.shape[1], cfg.beta)[:, :, None]
    amp = np.where(mask, (1.0 - blend) * amp_b + blend * amp_t, amp_b)
    mixed = FrequencySpectrum(amp * np.exp(1j * phase_b), centered=True)
    out = idft2(mixed)
    return np.clip(out, 0.0, 1.0) if clamp else out


def make_warp_field(
    height: int, width: int, grid_size: int, warp_strength: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Smooth per-pixel (dy, dx) offsets from an upsampled seeded control grid.

    Control offsets are uniform in [-1, 1] per axis, so displacements are
    bounded by warp_strength pixels. The same (shape, grid, strength, seed)
    always yields the same field: the trigger is persistent.
    """
    if grid_size < 2:
        raise ParameterError(f"grid_size must be >= 2, got {grid_size}")
    if warp_strength < 0:
        raise ParameterError(f"warp_strength must be >= 0, got {warp_strength}")
    rng = np.random.default_rng(seed)
    control = rng.uniform(-1.0, 1.0, (grid_size, grid_size, 2))
    dy = bilinear_resize(control[:, :, 0], height, width) * warp_strength
    dx = bilinear_resize(control[:, :, 1], height, width) * warp_strength
    return dy, dx


def warp_image(img: np.ndarray, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Backward warp with bilinear sampling and border clamping."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    fy = np.clip(ys + dy, 0.0, h - 1.0)
    fx = np.clip(xs + dx, 0.0, w - 1.0)
    y0 = np.floor(fy).astype(np.intp)
    x0 = np.floor(fx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (fy - y0)[:, :, None]
    tx = (fx - x0)[:, :, None]
    a = arr[y0, x0]
    b = arr[y0, x1]
    c = arr[y1, x0]
    d = arr[y1, x1]
    top = a + tx * (b - a)
    bot = c + tx * (d - c)
    return top + ty * (bot - top)


def wanet_inject(
    benign: np.ndarray, warp_strength: float, grid_size: int, seed: int
) -> np.ndarray:
    """Apply the persistent seeded warp field to an image."""
    arr = np.asarray(benign, dtype=np.float64)
    if warp_strength == 0:
        return arr.copy()
    dy, dx = make_warp_field(arr.shape[0], arr.shape[1], grid_size, warp_strength, seed)
    return warp_image(arr, dy, dx)
