import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqfield.acceptance import brute_force_nearest
from cqfield.encoding import (CoordMode, FrequencyBand, direction_input, encode, encode_discrete, position_input,
                              position_input_size)
from cqfield.grid import GridSpec


def test_zero_input_gives_sin_zero_cos_one():
    assert encode(FrequencyBand(2), np.zeros(3)).tolist() == [0, 1, 0, 1] * 3


def test_single_frequency_value():
    e = encode(FrequencyBand(1), np.array([0.25]))
    assert e.tolist() == pytest.approx([math.sin(math.pi / 4), math.cos(math.pi / 4)], abs=1e-15)


def test_fourth_frequency_is_eight_pi():
    assert FrequencyBand(4).frequencies[3] == 8 * math.pi


@pytest.mark.parametrize("L", range(1, 13))
def test_frequency_law_exact(L):
    f = FrequencyBand(L).frequencies
    assert f.tolist() == [math.pi * 2.0 ** (k - 1) for k in range(1, L + 1)]


def test_layout_per_element_sin_cos_pairs():
    x = np.array([0.1, -0.7])
    e = encode(FrequencyBand(3), x)
    want = []
    for xi in x:
        for k in range(3):
            w = math.pi * 2 ** k
            want += [math.sin(w * xi), math.cos(w * xi)]
    assert e.tolist() == pytest.approx(want, abs=1e-15)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        encode(FrequencyBand(2), np.array([0.0, np.nan, 1.0]))


def test_invalid_band():
    with pytest.raises(ValueError):
        FrequencyBand(0)


def test_same_voxel_points_encode_identically():
    g = GridSpec(-1, 1, 32)
    band = FrequencyBand(6)
    a = np.array([0.001, 0.002, 0.003])
    b = np.array([0.06, 0.01, 0.05])
    assert np.array_equal(g.voxel_index(a), g.voxel_index(b))
    assert np.array_equal(encode_discrete(band, g, a), encode_discrete(band, g, b))


def test_center_encodes_like_continuous():
    g = GridSpec(-1, 1, 8)
    c = g.voxel_center((2, 5, 7))
    assert np.array_equal(encode_discrete(FrequencyBand(6), g, c), encode(FrequencyBand(6), c))


def test_discrete_matches_encoding_of_brute_force_center():
    g = GridSpec(-1, 1, 8)
    band = FrequencyBand(6)
    q = np.random.default_rng(0).uniform(-1, 1, (500, 3))
    want_c, _ = brute_force_nearest(g, q)
    assert np.allclose(encode_discrete(band, g, q), encode(band, want_c), rtol=0, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 1 << 20), st.integers(0, 10**6), st.floats(-0.49, 0.49), st.floats(-0.49, 0.49))
def test_piecewise_constancy_property(r, seed, u, w):
    g = GridSpec(-1, 1, r)
    v = np.random.default_rng(seed).integers(0, r, 3)
    c = g.voxel_center(v)
    a, b = c + u * g.interval, c + w * g.interval
    band = FrequencyBand(5)
    assert np.array_equal(encode_discrete(band, g, a), encode_discrete(band, g, b))


def test_position_input_modes():
    band = FrequencyBand(2)
    cont = np.array([[0.11, 0.2, -0.3]])
    disc = np.array([[0.125, 0.125, -0.375]])
    assert position_input(band, CoordMode.CONTINUOUS, cont, disc).tolist() == \
        np.concatenate([cont, encode(band, cont)], axis=1).tolist()
    assert position_input(band, CoordMode.DISCRETE, cont, disc).tolist() == \
        np.concatenate([disc, encode(band, disc)], axis=1).tolist()
    assert position_input(band, CoordMode.MIXED_PE_CONTINUOUS, cont, disc).tolist() == \
        np.concatenate([disc, encode(band, cont)], axis=1).tolist()
    assert position_input(band, CoordMode.MIXED_COORD_CONTINUOUS, cont, disc).tolist() == \
        np.concatenate([cont, encode(band, disc)], axis=1).tolist()
    assert position_input_size(band) == 15


def test_direction_input_shape():
    d = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    assert direction_input(FrequencyBand(4), d).shape == (2, 27)


def test_mode_flags():
    assert not CoordMode.CONTINUOUS.quantizes
    assert CoordMode.DISCRETE.discrete_coord and CoordMode.DISCRETE.discrete_pe
    assert CoordMode.MIXED_PE_CONTINUOUS.discrete_coord and not CoordMode.MIXED_PE_CONTINUOUS.discrete_pe
    assert CoordMode.MIXED_COORD_CONTINUOUS.discrete_pe and not CoordMode.MIXED_COORD_CONTINUOUS.discrete_coord
