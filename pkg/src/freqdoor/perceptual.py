"""Feature-space image distance from a frozen, seed-initialized conv extractor.

A pretrained perceptual network would drag in an external artifact; a random
strided extractor is deterministic, self-contained, and good enough for
relative comparisons. Weights are drawn once from a fixed seed, so the metric
is identical across runs and machines.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

EXTRACTOR_SEED = 1234
LAYER_WIDTHS = (8, 16, 32, 64)
KERNEL = 3
STRIDE = 2
NORM_EPS = 1e-10


def _init_weights(in_channels: int = 3) -> list[tuple[np.ndarray, np.ndarray]]:
    """He-scaled weights drawn in layer order from the frozen seed; zero biases."""
    rng = np.random.Generator(np.random.PCG64(EXTRACTOR_SEED))
    layers = []
    c_in = in_channels
    for c_out in LAYER_WIDTHS:
        fan_in = c_in * KERNEL * KERNEL
        w = rng.standard_normal((c_out, c_in, KERNEL, KERNEL)) * np.sqrt(2.0 / fan_in)
        b = np.zeros(c_out)
        layers.append((w, b))
        c_in = c_out
    return layers


def _conv_stride2(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 stride-2 convolution, zero padding 1, via im2col. x is (C, H, W)."""
    c_in, h, win = x.shape
    out_h = (h - 1) // STRIDE + 1
    out_w = (win - 1) // STRIDE + 1
    xp = np.zeros((c_in, h + 2, win + 2), dtype=np.float64)
    xp[:, 1 : h + 1, 1 : win + 1] = x
    cols = np.empty((c_in * KERNEL * KERNEL, out_h * out_w), dtype=np.float64)
    idx = 0
    for c in range(c_in):
        for ky in range(KERNEL):
            for kx in range(KERNEL):
                patch = xp[c, ky : ky + h : STRIDE, kx : kx + win : STRIDE]
                cols[idx] = patch[:out_h, :out_w].reshape(-1)
                idx += 1
    wmat = w.reshape(w.shape[0], -1)
    out = wmat @ cols + b[:, None]
    return out.reshape(w.shape[0], out_h, out_w)


def _unit_normalize(feat: np.ndarray) -> np.ndarray:
    """Scale each spatial position's channel vector to unit length."""
    norm = np.sqrt((feat**2).sum(axis=0, keepdims=True) + NORM_EPS)
    return feat / norm


class PerceptualExtractor:
    """Four ReLU conv stages (widths 8/16/32/64, stride 2), frozen at init."""

    def __init__(self):
        self.layers = _init_weights(3)

    def features(self, img: np.ndarray) -> list[np.ndarray]:
        """Unit-normalized feature maps of a (H, W, C) image, one per stage."""
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim != 3:
            raise ParameterError(f"expected (H, W, C), got shape {arr.shape}")
        if arr.shape[2] == 1:
            arr = np.repeat(arr, 3, axis=2)
        elif arr.shape[2] != 3:
            raise ParameterError(f"channels must be 1 or 3, got {arr.shape[2]}")
        x = arr.transpose(2, 0, 1)
        feats = []
        for w, b in self.layers:
            x = _conv_stride2(x, w, b)
            x = np.maximum(x, 0.0)
            feats.append(_unit_normalize(x))
        return feats


_default_extractor: PerceptualExtractor | None = None


def default_extractor() -> PerceptualExtractor:
    global _default_extractor
    if _default_extractor is None:
        _default_extractor = PerceptualExtractor()
    return _default_extractor


def feature_distance(fa: list[np.ndarray], fb: list[np.ndarray]) -> float:
    """Mean over stages of the MSE between normalized feature maps."""
    return float(np.mean([np.mean((a - b) ** 2) for a, b in zip(fa, fb)]))


def perceptual_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Feature-space distance between two same-shape images (0 iff identical)."""
    arr_a = np.asarray(a, dtype=np.float64)
    arr_b = np.asarray(b, dtype=np.float64)
    if arr_a.shape != arr_b.shape:
        raise ParameterError(f"shape mismatch: {arr_a.shape} vs {arr_b.shape}")
    ext = default_extractor()
    return feature_distance(ext.features(arr_a), ext.features(arr_b))
