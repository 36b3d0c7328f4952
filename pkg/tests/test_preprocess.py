import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import otsu_bin_bruteforce
from satcast.grid import Field2D, GridError, Unit
from satcast.preprocess import (
    DegenerateFieldError,
    PreprocessConfig,
    apply_cloud_mask,
    crop_center,
    denormalize_bt,
    normalize_bt,
    otsu_threshold,
    pad_center,
    preprocess_input,
    preprocess_target,
)

CFG = PreprocessConfig()


def test_normalize_examples():
    np.testing.assert_array_equal(normalize_bt(Field2D([[300.0]])).data, [[1.0]])
    np.testing.assert_array_equal(normalize_bt(Field2D([[150.0, 0.0]])).data, [[0.5, 0.0]])
    out = normalize_bt(Field2D([[306.0]]))
    assert out.unit is Unit.NORMALIZED
    assert out.data[0, 0] == np.float32(306.0 / 300.0)
    assert out.data[0, 0] > 1.0


def test_normalize_rejects_negative():
    with pytest.raises(ValueError):
        normalize_bt(Field2D([[-1.0]]))


def test_denormalize_examples():
    assert denormalize_bt(Field2D([[1.0]], Unit.NORMALIZED)).data[0, 0] == 300.0
    assert denormalize_bt(Field2D([[0.0]], Unit.NORMALIZED)).data[0, 0] == 0.0


@given(arrays(np.float32, (6, 6), elements=st.floats(0, 330, width=32)))
def test_normalize_round_trip(a):
    back = denormalize_bt(normalize_bt(Field2D(a)))
    assert np.max(np.abs(back.data - a)) < 1e-4


def test_otsu_bimodal():
    a = np.array([[0.2] * 8, [0.9] * 8])
    thr = otsu_threshold(Field2D(a))
    assert 0.2 < thr < 0.9
    masked = a >= thr
    assert masked[1].all() and not masked[0].any()


def test_otsu_constant_is_degenerate():
    with pytest.raises(DegenerateFieldError):
        otsu_threshold(Field2D(np.full((4, 4), 0.5)))


@pytest.mark.parametrize("seed", range(10))
def test_otsu_matches_bruteforce(seed):
    a = np.random.default_rng(seed).random((16, 16)).astype(np.float32)
    _, thr = otsu_bin_bruteforce(a)
    assert otsu_threshold(Field2D(a)) == thr


def test_mask_examples():
    f = Field2D([[0.5, 0.95]], Unit.NORMALIZED)
    np.testing.assert_array_equal(apply_cloud_mask(f, 0.9).data, [[0.5, 1.0]])
    warm = Field2D(np.full((3, 3), 0.97), Unit.NORMALIZED)
    np.testing.assert_array_equal(apply_cloud_mask(warm, 0.9).data, np.ones((3, 3)))
    g = Field2D(np.random.default_rng(1).random((5, 5)), Unit.NORMALIZED)
    assert apply_cloud_mask(g, 2.0) == g


@given(arrays(np.float32, (8, 8), elements=st.floats(0, 1.25, width=32)), st.floats(0, 1.25))
def test_mask_idempotent(a, thr):
    f = Field2D(a, Unit.NORMALIZED)
    once = apply_cloud_mask(f, thr)
    assert apply_cloud_mask(once, thr) == once


def test_pad_252_to_256():
    out = pad_center(Field2D(np.ones((252, 252))), 256)
    assert out.shape == (256, 256)
    assert out.data[2:254, 2:254].all()
    assert out.data.sum() == 252 * 252


def test_pad_identity_and_small():
    f = Field2D(np.arange(9.0).reshape(3, 3))
    assert pad_center(f, 3) == f
    p = pad_center(f, 5)
    np.testing.assert_array_equal(p.data[1:4, 1:4], f.data)
    assert p.data[0].sum() == p.data[-1].sum() == p.data[:, 0].sum() == p.data[:, -1].sum() == 0


def test_pad_too_large():
    with pytest.raises(GridError):
        pad_center(Field2D(np.zeros((5, 5))), 4)


def test_crop_examples():
    f = Field2D(np.random.default_rng(0).random((252, 252)))
    assert crop_center(pad_center(f, 256), 252) == f
    assert crop_center(f, 252) == f
    g = Field2D(np.arange(25.0).reshape(5, 5))
    np.testing.assert_array_equal(crop_center(g, 3).data, g.data[1:4, 1:4])
    with pytest.raises(GridError):
        crop_center(g, 6)


@settings(deadline=None)
@given(st.integers(1, 12), st.integers(0, 6))
def test_pad_crop_round_trip(n, extra):
    f = Field2D(np.random.default_rng(n).random((n, n)))
    assert crop_center(pad_center(f, n + extra), n) == f


def test_preprocess_input_masks_clear_sky():
    a = np.full((8, 8), 290.0)
    a[3:5, 3:5] = 220.0
    out = preprocess_input(Field2D(a), PreprocessConfig(pad_to=10))
    assert out.shape == (10, 10)
    inner = out.data[1:9, 1:9]
    np.testing.assert_array_equal(inner[3:5, 3:5], np.float32(220 / 300))
    assert (inner[inner > 0.9] == 1.0).all()


def test_preprocess_target_is_unmasked():
    a = np.full((8, 8), 290.0)
    a[0, 0] = 220.0
    out = preprocess_target(Field2D(a), PreprocessConfig(pad_to=8))
    assert out.data[4, 4] == np.float32(290 / 300)


def test_preprocess_constant_frame_passes_through():
    out = preprocess_input(Field2D(np.full((4, 4), 290.0)), PreprocessConfig(pad_to=4))
    assert np.all(out.data == np.float32(290 / 300))
