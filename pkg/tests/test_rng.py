"""Keyed random streams and Gaussian sampling."""

import numpy as np
import pytest

from crosscert import gauss_sample, stream
from crosscert.rng import (KEY_CERTIFY, KEY_DATA, KEY_INIT, KEY_NOISE,
                           KEY_SHUFFLE)


def test_same_key_same_stream():
    a = stream(42, KEY_NOISE, 3, 1).standard_normal(16)
    b = stream(42, KEY_NOISE, 3, 1).standard_normal(16)
    assert np.array_equal(a, b)


def test_distinct_keys_distinct_streams():
    a = stream(42, KEY_NOISE, 0).standard_normal(16)
    b = stream(42, KEY_SHUFFLE, 0).standard_normal(16)
    c = stream(43, KEY_NOISE, 0).standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_purpose_keys_are_distinct_constants():
    assert len({KEY_INIT, KEY_SHUFFLE, KEY_NOISE, KEY_DATA, KEY_CERTIFY}) == 5


def test_stream_rejects_negative_parts():
    with pytest.raises(ValueError):
        stream(-1, KEY_INIT)
    with pytest.raises(ValueError):
        stream(0, -2)


def test_gauss_sample_sigma_zero_is_zero_matrix():
    out = gauss_sample(stream(0, KEY_NOISE), (4, 3), 0.0)
    assert out.shape == (4, 3)
    assert np.array_equal(out, np.zeros((4, 3)))


def test_gauss_sample_negative_sigma_rejected():
    with pytest.raises(ValueError):
        gauss_sample(stream(0, KEY_NOISE), (2, 2), -0.1)


def test_gauss_sample_equal_seeds_identical():
    a = gauss_sample(stream(5, KEY_CERTIFY, 9), (100,), 0.12)
    b = gauss_sample(stream(5, KEY_CERTIFY, 9), (100,), 0.12)
    assert np.array_equal(a, b)


def test_gauss_sample_monte_carlo_moments():
    draws = gauss_sample(stream(123, KEY_NOISE), (10 ** 6,), 0.12)
    assert abs(float(np.mean(draws))) < 4 * 0.12 / 10 ** 3
    assert abs(float(np.std(draws)) - 0.12) < 0.01 * 0.12


def test_chunked_draws_equal_single_draw():
    # certification pulls noise in chunks; the stream must not care
    rng1 = stream(7, KEY_CERTIFY, 0)
    whole = rng1.standard_normal((10, 4))
    rng2 = stream(7, KEY_CERTIFY, 0)
    parts = np.concatenate([rng2.standard_normal((6, 4)),
                            rng2.standard_normal((4, 4))])
    assert np.array_equal(whole, parts)
