"""Image arrays, synthetic degradation, 2D frequency transforms, and quality metrics.

Images are float arrays of shape (H, W, C) with values in [0, 1], C in {1, 3}.
All functions are pure; randomness is always passed in through seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d, gaussian_filter

from .errors import ParameterError

MIN_SIDE = 8

# SSIM constants (window is Gaussian, sigma 1.5, 11x11 at full size; the
# window shrinks to the largest odd size that fits when images are tiny).
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (H, W, C) / [0, 1] contract and return the array as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ParameterError(f"{name}: expected (H, W, C) array, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ParameterError(f"{name}: sides must be >= {MIN_SIDE}, got {h}x{w}")
    if c not in (1, 3):
        raise ParameterError(f"{name}: channels must be 1 or 3, got {c}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name}: contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ParameterError(f"{name}: values outside [0, 1]")
    return arr


@dataclass
class DegradationConfig:
    """Parameters of the synthetic low-quality pipeline."""

    blur_sigma: float = 1.2
    noise_sigma: float = 0.03
    downscale_factor: float = 0.5
    seed: int = 0

    def validate(self) -> "DegradationConfig":
        if self.blur_sigma < 0:
            raise ParameterError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not (0.0 < self.downscale_factor <= 1.0):
            raise ParameterError(
                f"downscale_factor must be in (0, 1], got {self.downscale_factor}"
            )
        return self


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Truncated normalized Gaussian, radius round(3*sigma) (at least 1 tap each side)."""
    radius = max(1, int(round(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge-replicate padding. sigma=0 is a no-op."""
    if sigma == 0:
        return np.array(img, dtype=np.float64, copy=True)
    k = gaussian_kernel1d(sigma)
    out = correlate1d(np.asarray(img, np.float64), k, axis=0, mode="nearest")
    out = correlate1d(out, k, axis=1, mode="nearest")
    return out


def _resize_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic triangle-filter matrix for one axis.

    Half-pixel centers; the triangle support scales with the minification
    ratio (antialiased bilinear, as image libraries do), and degenerates to
    the classic two-tap interpolation when magnifying. Out-of-range taps
    clamp to the border.
    """
    scale = n_in / n_out
    fscale = max(scale, 1.0)
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        left = math.ceil(src - fscale)
        right = math.floor(src + fscale)
        for i in range(left, right + 1):
            w = 1.0 - abs(i - src) / fscale
            if w <= 0.0:
                continue
            weights[o, min(max(i, 0), n_in - 1)] += w
        weights[o] /= weights[o].sum()
    return weights


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resample (antialiased when minifying), border clamped."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    if out_h == h and out_w == w:
        return arr.copy()
    wy = _resize_weights(h, out_h)
    wx = _resize_weights(w, out_w)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    tmp = np.einsum("oy,yxc->oxc", wy, arr)
    out = np.einsum("px,oxc->opc", wx, tmp)
    return out[:, :, 0] if squeeze else out


def degrade(img: np.ndarray, cfg: DegradationConfig) -> np.ndarray:
    """Synthesize a low-quality image: blur -> downsample -> noise -> upsample -> clamp.

    Deterministic given cfg.seed; output has the input's shape.
    """
    arr = validate_image(img)
    cfg.validate()
    h, w = arr.shape[:2]
    out = gaussian_blur(arr, cfg.blur_sigma)
    if cfg.downscale_factor < 1.0:
        lh = max(1, int(round(h * cfg.downscale_factor)))
        lw = max(1, int(round(w * cfg.downscale_factor)))
        out = bilinear_resize(out, lh, lw)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(cfg.seed)
        out = out + rng.normal(0.0, cfg.noise_sigma, out.shape)
    if out.shape[:2] != (h, w):
        out = bilinear_resize(out, h, w)
    return np.clip(out, 0.0, 1.0)


def _projection_reduce(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """(down, up) matrices for one axis where up is bilinear interpolation.

    The downsampler is the least-squares fit against the bilinear upsampling
    basis, which makes up(down(.)) an orthogonal projection: applying the
    down-up pair twice reproduces the first application to float precision.
    """
    up = _resize_weights(n_out, n_in)
    down = np.linalg.solve(up.T @ up, up.T)
    return down, up


def degradation_target(img: np.ndarray, scale: float) -> np.ndarray:
    """Downsample to round(H*scale) x round(W*scale), bilinearly upsample, clamp.

    The attack target for restoration: a plausibly failed, heavily smoothed
    output. The downsample is the least-squares bilinear reduction (see
    _projection_reduce), so the operation is idempotent up to the final clamp.
    """
    arr = validate_image(img)
    h, w = arr.shape[:2]
    if not (0.0 < scale < 1.0):
        raise ParameterError(f"scale must be in (0, 1), got {scale}")
    if math.floor(min(h, w) * scale) < 1:
        raise ParameterError(f"scale {scale} collapses a {h}x{w} image below 1 pixel")
    lh = max(1, int(round(h * scale)))
    lw = max(1, int(round(w * scale)))
    down_y, up_y = _projection_reduce(h, lh)
    down_x, up_x = _projection_reduce(w, lw)
    small = np.einsum("px,oxc->opc", down_x, np.einsum("oy,yxc->oxc", down_y, arr))
    out = np.einsum("xp,ypc->yxc", up_x, np.einsum("yo,oxc->yxc", up_y, small))
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Frequency domain
# ---------------------------------------------------------------------------


@dataclass
class FrequencySpectrum:
    """Complex DFT coefficients of an image, (H, W, C).

    Forward transform is unnormalized; the inverse carries the 1/(H*W) factor.
    ``centered`` means the zero-frequency bin sits at (H//2, W//2).
    """

    data: np.ndarray
    centered: bool = True

    @property
    def shape(self):
        return self.data.shape


@dataclass
class FrequencyAnalysisConfig:
    """Low/high split: centered square box whose side is beta * min(H, W)."""

    beta: float = 0.15

    def validate(self) -> "FrequencyAnalysisConfig":
        if not (0.0 < self.beta <= 1.0):
            raise ParameterError(f"beta must be in (0, 1], got {self.beta}")
        return self


def dft2(img: np.ndarray) -> FrequencySpectrum:
    """Per-channel 2D DFT, returned centered."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ParameterError(f"dft2 expects (H, W, C), got shape {arr.shape}")
    spec = np.fft.fft2(arr, axes=(0, 1))
    return FrequencySpectrum(np.fft.fftshift(spec, axes=(0, 1)), centered=True)


def idft2(spec: FrequencySpectrum, clamp: bool = False) -> np.ndarray:
    """Inverse of dft2. Returns the real part; clamps to [0, 1] only when asked."""
    data = spec.data
    if spec.centered:
        data = np.fft.ifftshift(data, axes=(0, 1))
    img = np.fft.ifft2(data, axes=(0, 1)).real
    if clamp:
        img = np.clip(img, 0.0, 1.0)
    return img


def lowpass_mask(h: int, w: int, beta: float) -> np.ndarray:
    """Boolean centered square mask; side = max(1, round(beta * min(H, W))).

    beta = 1 covers the full plane (also for non-square shapes).
    """
    if not (0.0 < beta <= 1.0):
        raise ParameterError(f"beta must be in (0, 1], got {beta}")
    if beta == 1.0:
        return np.ones((h, w), dtype=bool)
    side = max(1, int(round(beta * min(h, w))))
    mask = np.zeros((h, w), dtype=bool)
    y0 = h // 2 - side // 2
    x0 = w // 2 - side // 2
    mask[y0 : y0 + side, x0 : x0 + side] = True
    return mask


def split_frequency(
    spec: FrequencySpectrum, cfg: FrequencyAnalysisConfig
) -> tuple[FrequencySpectrum, FrequencySpectrum]:
    """Partition a centered spectrum into (low, high); low + high == spec exactly."""
    cfg.validate()
    if not spec.centered:
        raise ParameterError("split_frequency requires a centered spectrum")
    h, w = spec.data.shape[:2]
    mask = lowpass_mask(h, w, cfg.beta)[:, :, None]
    low = np.where(mask, spec.data, 0.0 + 0.0j)
    high = np.where(mask, 0.0 + 0.0j, spec.data)
    return FrequencySpectrum(low, True), FrequencySpectrum(high, True)


def frequency_distance(
    a: np.ndarray, b: np.ndarray, cfg: FrequencyAnalysisConfig | None = None
) -> tuple[float, float]:
    """Mean squared difference of DFT magnitudes inside / outside the low box.

    Each band is averaged over its own bin population.
    """
    cfg = (cfg or FrequencyAnalysisConfig()).validate()
    arr_a = np.asarray(a, dtype=np.float64)
    arr_b = np.asarray(b, dtype=np.float64)
    if arr_a.shape != arr_b.shape:
        raise ParameterError(f"shape mismatch: {arr_a.shape} vs {arr_b.shape}")
    mag_a = np.abs(dft2(arr_a).data)
    mag_b = np.abs(dft2(arr_b).data)
    sq = (mag_a - mag_b) ** 2
    mask = lowpass_mask(arr_a.shape[0], arr_a.shape[1], cfg.beta)[:, :, None]
    mask = np.broadcast_to(mask, sq.shape)
    low = float(sq[mask].mean())
    high = float(sq[~mask].mean()) if (~mask).any() else 0.0
    return low, high


# ---------------------------------------------------------------------------
# Reference-based quality metrics
# ---------------------------------------------------------------------------


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    arr_a = np.asarray(a, dtype=np.float64)
    arr_b = np.asarray(b, dtype=np.float64)
    if arr_a.shape != arr_b.shape:
        raise ParameterError(f"shape mismatch: {arr_a.shape} vs {arr_b.shape}")
    return arr_a, arr_b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 100 dB."""
    arr_a, arr_b = _check_same_shape(a, b)
    mse = float(np.mean((arr_a - arr_b) ** 2))
    if mse < 1e-10:
        return 100.0
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with Gaussian-weighted local statistics.

    Per-channel maps are averaged over the interior (window padding cropped),
    then over channels. Score lies in [-1, 1]; identical images give 1.
    """
    arr_a, arr_b = _check_same_shape(a, b)
    if arr_a.ndim != 3:
        raise ParameterError(f"ssim expects (H, W, C), got shape {arr_a.shape}")
    h, w = arr_a.shape[:2]
    radius = min(SSIM_RADIUS, (min(h, w) - 1) // 2)
    truncate = radius / SSIM_SIGMA
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2

    def filt(x):
        return gaussian_filter(x, SSIM_SIGMA, truncate=truncate, mode="reflect")

    scores = []
    for ch in range(arr_a.shape[2]):
        x = arr_a[:, :, ch]
        y = arr_b[:, :, ch]
        mu_x = filt(x)
        mu_y = filt(y)
        var_x = filt(x * x) - mu_x**2
        var_y = filt(y * y) - mu_y**2
        cov = filt(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        smap = num / den
        interior = smap[radius : h - radius, radius : w - radius]
        scores.append(float(interior.mean()))
    return float(np.mean(scores))
