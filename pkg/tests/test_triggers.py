import numpy as np
import pytest

from freqdoor.errors import ParameterError
from freqdoor.triggers import (
    TriggerSet,
    make_texture,
    make_trigger_corpus,
    make_trigger_set,
)


def test_texture_range_and_shape():
    img = make_texture(32, 5)
    assert img.shape == (32, 32, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_texture_deterministic():
    assert np.array_equal(make_texture(16, 9), make_texture(16, 9))
    assert not np.array_equal(make_texture(16, 9), make_texture(16, 10))


def test_corpus_deterministic_and_sized():
    corpus = make_trigger_corpus(5, 16, seed=3)
    again = make_trigger_corpus(5, 16, seed=3)
    assert len(corpus) == 5
    for a, b in zip(corpus, again):
        assert np.array_equal(a, b)


def test_trigger_set_rejects_near_duplicates():
    authentic = make_texture(16, 1)
    pool = [make_texture(16, 2), authentic.copy()]
    with pytest.raises(ParameterError):
        TriggerSet(authentic=authentic, pseudo_pool=pool, seed=0)


def test_trigger_set_rejects_empty_pool():
    with pytest.raises(ParameterError):
        TriggerSet(authentic=make_texture(16, 1), pseudo_pool=[], seed=0)


def test_pseudo_sampling_replays_across_rebuilds():
    ts1 = make_trigger_set(16, seed=7, pool_size=8)
    ts2 = make_trigger_set(16, seed=7, pool_size=8)
    seq1 = [ts1.sample_pseudo()[1] for _ in range(30)]
    seq2 = [ts2.sample_pseudo()[1] for _ in range(30)]
    assert seq1 == seq2
    assert set(seq1) <= set(range(8))


def test_pseudo_sampling_covers_pool():
    ts = make_trigger_set(16, seed=3, pool_size=4)
    seen = {ts.sample_pseudo()[1] for _ in range(200)}
    assert seen == {0, 1, 2, 3}


def test_make_trigger_set_distance_invariant():
    ts = make_trigger_set(32, seed=11, pool_size=16)
    assert len(ts.pseudo_pool) == 16
    for img in ts.pseudo_pool:
        assert np.abs(img - ts.authentic).max() > 0.05
