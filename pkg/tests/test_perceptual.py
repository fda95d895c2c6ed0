import numpy as np
import pytest

from freqdoor.errors import ParameterError
from freqdoor.perceptual import (
    PerceptualExtractor,
    default_extractor,
    perceptual_distance,
)

from oracles import perceptual_distance_oracle


def rand_img(h, w, c, seed):
    return np.random.default_rng(seed).random((h, w, c))


def test_identity_distance_is_zero():
    a = rand_img(16, 16, 3, 0)
    assert perceptual_distance(a, a) == 0.0


def test_matches_scalar_loop_oracle():
    a = rand_img(16, 16, 3, 1)
    b = rand_img(16, 16, 3, 2)
    expected = perceptual_distance_oracle(a, b, default_extractor().layers)
    assert abs(perceptual_distance(a, b) - expected) < 1e-10


def test_frozen_seed_reproducibility():
    a = rand_img(16, 16, 3, 3)
    b = rand_img(16, 16, 3, 4)
    fresh = PerceptualExtractor()
    for fw, dw in zip(fresh.layers, default_extractor().layers):
        assert np.array_equal(fw[0], dw[0])
    d1 = perceptual_distance(a, b)
    d2 = perceptual_distance(a, b)
    assert d1 == d2


def test_grayscale_equals_replicated_rgb():
    g = rand_img(16, 16, 1, 5)
    rgb = np.repeat(g, 3, axis=2)
    other = rand_img(16, 16, 3, 6)
    assert perceptual_distance(g, g) == 0.0
    d_gray_vs_rgb = perceptual_distance(np.repeat(g, 3, axis=2), other)
    ext = default_extractor()
    fa = ext.features(g)
    fb = ext.features(rgb)
    for xa, xb in zip(fa, fb):
        assert np.array_equal(xa, xb)
    assert d_gray_vs_rgb >= 0.0


def test_distance_discriminates():
    a = rand_img(16, 16, 3, 7)
    near = np.clip(a + 0.01, 0, 1)
    far = rand_img(16, 16, 3, 8)
    assert perceptual_distance(a, near) < perceptual_distance(a, far)


def test_shape_mismatch_raises():
    with pytest.raises(ParameterError):
        perceptual_distance(rand_img(16, 16, 3, 0), rand_img(8, 8, 3, 0))
