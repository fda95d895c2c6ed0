import numpy as np
import pytest

from freqdoor.baselines import fiba_inject, make_warp_field, wanet_inject, warp_image
from freqdoor.errors import ParameterError
from freqdoor.imaging import FrequencyAnalysisConfig, dft2

from oracles import box_mask_oracle, dft2_oracle, idft2_oracle, warp_oracle


def rand_img(h, w, c, seed):
    return np.random.default_rng(seed).random((h, w, c))


# ---------------------------------------------------------------------------
# FIBA-style amplitude blending
# ---------------------------------------------------------------------------


def test_fiba_zero_blend_is_roundtrip():
    benign = rand_img(16, 16, 3, 0)
    out = fiba_inject(benign, rand_img(16, 16, 3, 1), blend=0.0)
    assert np.abs(out - benign).max() < 1e-6


def test_fiba_full_blend_full_mask_swaps_amplitude():
    benign = rand_img(16, 16, 3, 2)
    trigger = rand_img(16, 16, 3, 3)
    out = fiba_inject(benign, trigger, blend=1.0, cfg=FrequencyAnalysisConfig(beta=1.0), clamp=False)
    spec_out = dft2(out).data
    amp_t = np.abs(dft2(trigger).data)
    phase_b = np.angle(dft2(benign).data)
    assert np.abs(np.abs(spec_out) - amp_t).max() < 1e-8
    assert np.abs(spec_out - amp_t * np.exp(1j * phase_b)).max() < 1e-8


def test_fiba_matches_scalar_dft_oracle():
    benign = rand_img(32, 32, 1, 4)
    trigger = rand_img(32, 32, 1, 5)
    blend, beta = 0.1, 0.15
    out = fiba_inject(benign, trigger, blend, FrequencyAnalysisConfig(beta=beta), clamp=False)

    spec_b = dft2_oracle(benign)
    spec_t = dft2_oracle(trigger)
    mask = box_mask_oracle(32, 32, beta)[:, :, None]
    amp = np.where(mask, (1 - blend) * np.abs(spec_b) + blend * np.abs(spec_t), np.abs(spec_b))
    expected = idft2_oracle(amp * np.exp(1j * np.angle(spec_b)))
    assert np.abs(out - expected).max() < 1e-6


def test_fiba_rejects_bad_blend_and_shapes():
    with pytest.raises(ParameterError):
        fiba_inject(rand_img(16, 16, 1, 0), rand_img(16, 16, 1, 1), blend=1.5)
    with pytest.raises(ParameterError):
        fiba_inject(rand_img(16, 16, 1, 0), rand_img(8, 8, 1, 1), blend=0.5)


def test_fiba_perturbs_low_band_more_than_high():
    from freqdoor.imaging import frequency_distance

    benign = rand_img(32, 32, 3, 6)
    trigger = rand_img(32, 32, 3, 7)
    out = fiba_inject(benign, trigger, blend=0.1)
    low, high = frequency_distance(benign, out)
    assert low > high


# ---------------------------------------------------------------------------
# Warp baseline
# ---------------------------------------------------------------------------


def test_wanet_zero_strength_is_identity():
    img = rand_img(16, 16, 3, 8)
    assert np.array_equal(wanet_inject(img, 0.0, 4, seed=1), img)


def test_warp_integer_shift_on_row_constant_image():
    rows = np.repeat(rand_img(16, 1, 3, 9), 16, axis=1)
    dy = np.zeros((16, 16))
    dx = np.full((16, 16), 2.0)
    assert np.array_equal(warp_image(rows, dy, dx), rows)


def test_warp_matches_scalar_oracle():
    img = rand_img(16, 16, 3, 10)
    dy, dx = make_warp_field(16, 16, grid_size=4, warp_strength=1.5, seed=3)
    out = warp_image(img, dy, dx)
    expected = warp_oracle(img, dy, dx)
    assert np.abs(out - expected).max() < 1e-12


def test_warp_field_is_persistent_and_bounded():
    dy1, dx1 = make_warp_field(16, 16, 4, 0.5, seed=11)
    dy2, dx2 = make_warp_field(16, 16, 4, 0.5, seed=11)
    assert np.array_equal(dy1, dy2) and np.array_equal(dx1, dx2)
    assert np.abs(dy1).max() <= 0.5 and np.abs(dx1).max() <= 0.5
    out1 = wanet_inject(rand_img(16, 16, 3, 12), 0.5, 4, seed=11)
    out2 = wanet_inject(rand_img(16, 16, 3, 12), 0.5, 4, seed=11)
    assert np.array_equal(out1, out2)


def test_warp_field_validation():
    with pytest.raises(ParameterError):
        make_warp_field(16, 16, 1, 0.5, seed=0)
    with pytest.raises(ParameterError):
        make_warp_field(16, 16, 4, -0.1, seed=0)
