"""Backdoor defense harnesses: channel pruning, blend-entropy screening, saliency."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from .errors import ParameterError
from .victim import RestorerNet

SALIENCY_SMOOTH_SIGMA = 2.0


@dataclass
class PruneSchedule:
    ratios: list

    def validate(self) -> "PruneSchedule":
        if not self.ratios:
            raise ParameterError("prune schedule is empty")
        prev = -1.0
        for r in self.ratios:
            if not (0.0 <= r <= 1.0):
                raise ParameterError(f"prune ratio {r} outside [0, 1]")
            if r <= prev:
                raise ParameterError("prune ratios must be strictly increasing")
            prev = r
        return self


def channel_activation_scores(
    model: RestorerNet, calib_set: list[np.ndarray], batch_size: int = 16
) -> list[tuple[str, int, float]]:
    """Mean absolute conv output per decoder-side channel over the calibration set."""
    if not calib_set:
        raise ParameterError("calibration set is empty")
    modules = model.prunable_modules()
    sums = {name: torch.zeros(m.out_channels) for name, m in modules}
    count = 0
    hooks = []

    def make_hook(name):
        def hook(_module, _inputs, output):
            sums[name] += output.detach().abs().mean(dim=(2, 3)).sum(dim=0)

        return hook

    for name, m in modules:
        hooks.append(m.register_forward_hook(make_hook(name)))
    model.eval()
    with torch.no_grad():
        for start in range(0, len(calib_set), batch_size):
            chunk = calib_set[start : start + batch_size]
            x = torch.from_numpy(
                np.stack([c.transpose(2, 0, 1) for c in chunk]).astype(np.float32)
            )
            model(x)
            count += len(chunk)
    for h in hooks:
        h.remove()
    scores = []
    for name, m in modules:
        mean = sums[name] / count
        for ch in range(m.out_channels):
            scores.append((name, ch, float(mean[ch])))
    return scores


def fine_prune(model: RestorerNet, calib_set: list[np.ndarray], ratio: float) -> RestorerNet:
    """Zero the lowest-activation fraction of decoder-side channels.

    Channels are ranked ascending by mean absolute activation on the
    calibration set; weights and bias of pruned channels are zeroed in a copy.
    The input model is left untouched. Because the ranking is recomputed from
    the original model, prune sets are nested across increasing ratios.
    """
    if not (0.0 <= ratio <= 1.0):
        raise ParameterError(f"ratio must be in [0, 1], got {ratio}")
    scores = channel_activation_scores(model, calib_set)
    scores.sort(key=lambda item: (item[2], item[0], item[1]))
    n_prune = int(round(ratio * len(scores)))
    pruned = copy.deepcopy(model)
    by_name = dict(pruned.prunable_modules())
    with torch.no_grad():
        for name, ch, _score in scores[:n_prune]:
            conv = by_name[name]
            conv.weight[ch].zero_()
            conv.bias[ch].zero_()
    return pruned


def pruned_channel_set(
    model: RestorerNet, calib_set: list[np.ndarray], ratio: float
) -> set[tuple[str, int]]:
    """The (layer, channel) pairs fine_prune would zero at this ratio."""
    scores = channel_activation_scores(model, calib_set)
    scores.sort(key=lambda item: (item[2], item[0], item[1]))
    n_prune = int(round(ratio * len(scores)))
    return {(name, ch) for name, ch, _ in scores[:n_prune]}


# ---------------------------------------------------------------------------
# STRIP-style entropy screening
# ---------------------------------------------------------------------------


@dataclass
class StripConfig:
    """Blend-and-restore entropy screen over restoration residuals.

    The referenced defense reads classifier posteriors; a restorer has none,
    so the observable here is the histogram of restore(blend) - blend values.
    """

    clean_pool: list = field(default_factory=list)
    overlays: int = 10
    blend_weight: float = 0.5
    bins: int = 256
    seed: int = 0

    def validate(self) -> "StripConfig":
        if self.overlays < 1:
            raise ParameterError(f"overlays must be >= 1, got {self.overlays}")
        if self.bins < 2:
            raise ParameterError(f"bins must be >= 2, got {self.bins}")
        if not (0.0 < self.blend_weight < 1.0):
            raise ParameterError(f"blend_weight must be in (0, 1), got {self.blend_weight}")
        if len(self.clean_pool) < self.overlays:
            raise ParameterError(
                f"clean pool ({len(self.clean_pool)}) smaller than overlays ({self.overlays})"
            )
        return self

    def overlay_indices(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.choice(len(self.clean_pool), size=self.overlays, replace=False)


def strip_entropy(model: RestorerNet, img: np.ndarray, cfg: StripConfig) -> float:
    """Shannon entropy (bits) of pooled restoration residuals over seeded blends."""
    cfg.validate()
    idxs = cfg.overlay_indices()
    blends = np.stack(
        [
            cfg.blend_weight * img + (1.0 - cfg.blend_weight) * cfg.clean_pool[i]
            for i in idxs
        ]
    )
    # residuals are measured against the float32 inputs the model actually saw
    blends = blends.astype(np.float32).astype(np.float64)
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(blends.transpose(0, 3, 1, 2).astype(np.float32))
        out = model(x).permute(0, 2, 3, 1).numpy().astype(np.float64)
    residuals = (out - blends).ravel()
    hist, _edges = np.histogram(residuals, bins=cfg.bins, range=(-1.0, 1.0))
    p = hist / hist.sum()
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def strip_survey(model: RestorerNet, inputs: list[np.ndarray], cfg: StripConfig) -> list[float]:
    return [strip_entropy(model, img, cfg) for img in inputs]


def overlap_coefficient(a: list[float], b: list[float], bins: int = 32) -> float:
    """Histogram overlap of two samples on shared bins, in [0, 1]."""
    if not a or not b:
        raise ParameterError("overlap_coefficient needs nonempty samples")
    lo = min(min(a), min(b))
    hi = max(max(a), max(b))
    if hi - lo < 1e-12:
        return 1.0
    ha, edges = np.histogram(a, bins=bins, range=(lo, hi))
    hb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    pa = ha / ha.sum()
    pb = hb / hb.sum()
    return float(np.minimum(pa, pb).sum())


# ---------------------------------------------------------------------------
# Gradient saliency
# ---------------------------------------------------------------------------


def input_gradient(model, img: np.ndarray) -> np.ndarray:
    """Gradient of the output's L2 norm w.r.t. the input, as (H, W, C)."""
    x = torch.from_numpy(np.asarray(img, np.float32).transpose(2, 0, 1)).unsqueeze(0)
    x.requires_grad_(True)
    model.eval()
    out = model(x)
    norm = torch.linalg.vector_norm(out)
    # a constant model leaves the output disconnected from the input
    if not norm.requires_grad or norm.item() == 0.0:
        return np.zeros_like(np.asarray(img, np.float64))
    norm.backward()
    return x.grad.squeeze(0).permute(1, 2, 0).numpy().astype(np.float64)


def saliency_map(model, img: np.ndarray) -> np.ndarray:
    """Channel-max |input gradient|, Gaussian-smoothed and min-max normalized.

    An all-zero gradient maps to an all-zero heat map.
    """
    grad = input_gradient(model, img)
    heat = np.abs(grad).max(axis=2)
    heat = gaussian_filter(heat, SALIENCY_SMOOTH_SIGMA)
    lo, hi = heat.min(), heat.max()
    if hi - lo < 1e-12:
        return np.zeros_like(heat)
    return (heat - lo) / (hi - lo)
