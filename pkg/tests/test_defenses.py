import numpy as np
import pytest
import torch
from torch import nn

from freqdoor.defenses import (
    PruneSchedule,
    StripConfig,
    fine_prune,
    input_gradient,
    overlap_coefficient,
    pruned_channel_set,
    saliency_map,
    strip_entropy,
)
from freqdoor.errors import ParameterError
from freqdoor.victim import make_restorer, restore


def rand_img(h, w, c, seed):
    return np.random.default_rng(seed).random((h, w, c))


def calib(n=6, size=16, seed=0):
    return [rand_img(size, size, 3, seed + i) for i in range(n)]


# ---------------------------------------------------------------------------
# Fine pruning
# ---------------------------------------------------------------------------


def test_prune_ratio_zero_is_bitwise_noop():
    model = make_restorer(3, 8, seed=1)
    pruned = fine_prune(model, calib(), 0.0)
    for a, b in zip(model.state_dict().values(), pruned.state_dict().values()):
        assert torch.equal(a, b)
    for seed in range(20):
        img = rand_img(16, 16, 3, 100 + seed)
        assert np.array_equal(restore(model, img), restore(pruned, img))


def test_prune_ratio_one_matches_hand_zeroed_model():
    model = make_restorer(3, 8, seed=2)
    pruned = fine_prune(model, calib(), 1.0)
    import copy

    manual = copy.deepcopy(model)
    with torch.no_grad():
        for _name, conv in manual.prunable_modules():
            conv.weight.zero_()
            conv.bias.zero_()
    img = rand_img(16, 16, 3, 3)
    assert np.array_equal(restore(pruned, img), restore(manual, img))


def test_prune_sets_are_nested():
    model = make_restorer(3, 8, seed=4)
    c = calib()
    s_small = pruned_channel_set(model, c, 0.2)
    s_mid = pruned_channel_set(model, c, 0.5)
    s_big = pruned_channel_set(model, c, 0.8)
    assert s_small <= s_mid <= s_big


def test_prune_leaves_original_untouched():
    model = make_restorer(3, 8, seed=5)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    fine_prune(model, calib(), 0.7)
    for k, v in model.state_dict().items():
        assert torch.equal(before[k], v)


def test_prune_validation():
    model = make_restorer(3, 8, seed=6)
    with pytest.raises(ParameterError):
        fine_prune(model, calib(), 1.5)
    with pytest.raises(ParameterError):
        fine_prune(model, [], 0.5)
    with pytest.raises(ParameterError):
        PruneSchedule([0.5, 0.5]).validate()
    with pytest.raises(ParameterError):
        PruneSchedule([]).validate()
    assert PruneSchedule([0.1, 0.9]).validate()


# ---------------------------------------------------------------------------
# Blend-entropy screening
# ---------------------------------------------------------------------------


class IdentityModel(nn.Module):
    def forward(self, x):
        return x


class OffsetModel(nn.Module):
    """Adds a fixed residual pattern that fills all histogram bins uniformly."""

    def __init__(self, bins=256, shape=(1, 3, 16, 16)):
        super().__init__()
        n = int(np.prod(shape))
        centers = -1.0 + (np.arange(bins) + 0.5) / (bins / 2.0)
        pattern = np.resize(centers, n).reshape(shape)
        self.pattern = torch.from_numpy(pattern.astype(np.float32))

    def forward(self, x):
        return x + self.pattern


def test_strip_entropy_identity_model_is_zero():
    cfg = StripConfig(clean_pool=calib(12), overlays=5, seed=1)
    ent = strip_entropy(IdentityModel(), rand_img(16, 16, 3, 0), cfg)
    assert ent == 0.0


def test_strip_entropy_uniform_residuals_hit_cap():
    cfg = StripConfig(clean_pool=calib(12), overlays=4, bins=256, seed=2)
    ent = strip_entropy(OffsetModel(), rand_img(16, 16, 3, 1), cfg)
    assert ent == 8.0


def test_strip_entropy_bounds_and_determinism():
    model = make_restorer(3, 8, seed=7)
    cfg = StripConfig(clean_pool=calib(12), overlays=6, bins=256, seed=3)
    img = rand_img(16, 16, 3, 2)
    e1 = strip_entropy(model, img, cfg)
    e2 = strip_entropy(model, img, cfg)
    assert e1 == e2
    assert 0.0 <= e1 <= 8.0


def test_strip_config_validation():
    with pytest.raises(ParameterError):
        StripConfig(clean_pool=calib(3), overlays=5).validate()
    with pytest.raises(ParameterError):
        StripConfig(clean_pool=calib(12), overlays=0).validate()
    with pytest.raises(ParameterError):
        StripConfig(clean_pool=calib(12), bins=1).validate()
    with pytest.raises(ParameterError):
        StripConfig(clean_pool=calib(12), blend_weight=1.0).validate()


def test_overlap_coefficient_extremes():
    assert overlap_coefficient([1.0, 1.1, 1.2], [1.0, 1.1, 1.2]) == 1.0
    assert overlap_coefficient([0.0, 0.1], [5.0, 5.1]) == 0.0
    with pytest.raises(ParameterError):
        overlap_coefficient([], [1.0])


# ---------------------------------------------------------------------------
# Saliency
# ---------------------------------------------------------------------------


class ConstantModel(nn.Module):
    def forward(self, x):
        return torch.full_like(x, 0.5)


class ScaledConv(nn.Module):
    def __init__(self, scale, seed=0):
        super().__init__()
        torch.manual_seed(seed)
        self.conv = nn.Conv2d(3, 3, 3, padding=1)
        self.scale = scale

    def forward(self, x):
        return self.conv(x) * self.scale


def test_saliency_constant_model_is_zero():
    heat = saliency_map(ConstantModel(), rand_img(16, 16, 3, 0))
    assert np.array_equal(heat, np.zeros((16, 16)))


def test_input_gradient_of_identity_matches_analytic():
    img = rand_img(16, 16, 3, 1) * 0.5 + 0.25
    grad = input_gradient(IdentityModel(), img)
    norm = np.sqrt((img**2).sum())
    assert np.abs(grad - img / norm).max() < 1e-4


def test_saliency_invariant_to_positive_head_scaling():
    img = rand_img(16, 16, 3, 2)
    m1 = saliency_map(ScaledConv(1.0, seed=3), img)
    m2 = saliency_map(ScaledConv(4.0, seed=3), img)
    assert np.unravel_index(m1.argmax(), m1.shape) == np.unravel_index(m2.argmax(), m2.shape)
    assert np.abs(m1 - m2).max() < 1e-4
    assert m1.min() >= 0.0 and m1.max() <= 1.0
