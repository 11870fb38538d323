import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import erf_column
from wsd.measurement import (GeometryError, ImagingGeometry, ShapeError, adjacent_column_correlation,
                             augment_background, bin_frame, bin_matrix, bin_vector,
                             build_measurement_matrix, column_weights, unvectorize, vectorize)


def test_default_shape_and_weights(A):
    assert A.shape == (196, 4096)
    assert np.all(A.entries >= 0)
    np.testing.assert_array_equal(A.column_weights, A.entries.sum(axis=0))
    assert np.all(A.column_weights > 0)
    assert A.column_weights.max() <= 1 + 1e-12


def test_columns_match_erf_oracle(A, geometry):
    for gr, gc in [(0, 0), (31, 32), (4, 59), (63, 10), (17, 40)]:
        col = A.entries[:, gr + 64 * gc]
        np.testing.assert_allclose(unvectorize(col, (14, 14)), erf_column(geometry, gr, gc),
                                   rtol=1e-12, atol=1e-15)


def test_argmax_under_pixel_centre(A):
    # grid 4 + 4r + 2 sits just past the centre of pixel r; 4 + 4r + 1 just before
    for r, c in [(0, 0), (6, 7), (13, 13), (3, 10)]:
        for off in (1, 2):
            col = A.entries[:, (4 + 4 * r + off) + 64 * (4 + 4 * c + off)]
            assert np.argmax(col) == r + 14 * c


def test_edge_column_weight_below_centre(A):
    centre = A.column_weights[31 + 64 * 31]
    assert A.column_weights[0] < centre
    assert A.column_weights[4 + 64 * 4] < centre


def test_central_column_mass_at_two_pixel_sigma():
    A8 = build_measurement_matrix(ImagingGeometry(psf_sigma_grids=8.0))
    assert A8.column_weights[31 + 64 * 31] >= 0.95


def test_infinite_frame_mass_is_one():
    # a frame far larger than the PSF collects essentially all of it
    g = ImagingGeometry(raw_dims=(40, 40), grid_dims=(160, 160))
    A = build_measurement_matrix(g)
    assert abs(A.column_weights[80 + 160 * 80] - 1) < 1e-12


def test_adjacent_correlation(A):
    assert abs(adjacent_column_correlation(A) - 0.999224) <= 8e-4


def test_column_weights_hand_example():
    np.testing.assert_array_equal(column_weights(np.array([[1.0, 0.0], [2.0, 3.0]])), [3.0, 3.0])


def test_augment(phi):
    assert phi.shape == (196, 4097)
    assert phi.column_weights[-1] == 0
    np.testing.assert_array_equal(phi.entries[:, -1], 1.0)
    x = np.zeros(4097)
    x[-1] = 7.25
    np.testing.assert_array_equal(phi @ x, np.full(196, 7.25))


def test_bin_frame_examples():
    np.testing.assert_array_equal(bin_frame(np.full((14, 14), 16.0), 2), np.full((7, 7), 64.0))
    np.testing.assert_array_equal(bin_frame(np.ones((4, 4)), 2), np.full((2, 2), 4.0))
    with pytest.raises(ShapeError):
        bin_frame(np.ones((5, 4)), 2)


def test_bin_matrix(A, rng):
    B = bin_matrix(A)
    assert B.shape == (49, 4096) and B.binned
    x = rng.uniform(0, 100, 4096)
    np.testing.assert_allclose(B @ x, bin_vector(A @ x, (14, 14), 2), rtol=1e-13)
    np.testing.assert_allclose(B.column_weights, A.column_weights, rtol=1e-13)


def test_bin_matrix_equals_binned_geometry_build(A):
    direct = build_measurement_matrix(A.geometry.binned())
    np.testing.assert_allclose(bin_matrix(A).entries, direct.entries, atol=1e-12)


@pytest.mark.parametrize("kwargs", [
    dict(pixel_size_nm=40.0),
    dict(raw_dims=(17, 14)),
    dict(grid_dims=(63, 64)),
    dict(psf_sigma_grids=0.0),
    dict(bin_factor=3),
    dict(upsample_factor=0),
])
def test_invalid_geometry(kwargs):
    with pytest.raises(GeometryError):
        ImagingGeometry(**kwargs)


def test_matrix_is_read_only(A):
    with pytest.raises(ValueError):
        A.entries[0, 0] = 1.0


@given(st.integers(1, 9), st.integers(1, 9), st.data())
def test_vectorize_roundtrip(r, c, data):
    frame = data.draw(arrays(np.float64, (r, c), elements=st.floats(-1e6, 1e6)))
    v = vectorize(frame)
    i, j = data.draw(st.integers(0, r - 1)), data.draw(st.integers(0, c - 1))
    assert v[i + r * j] == frame[i, j]
    np.testing.assert_array_equal(unvectorize(v, (r, c)), frame)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 4096, elements=st.floats(0, 1e4)))
def test_nonnegative_images(A, x):
    assert np.all(A @ x >= 0)


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 4), st.sampled_from([1, 2, 3]), st.data())
def test_binning_preserves_total(nr, nc, f, data):
    frame = data.draw(arrays(np.float64, (nr * f, nc * f), elements=st.integers(0, 1000)))
    assert bin_frame(frame, f).sum() == frame.sum()
