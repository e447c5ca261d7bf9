import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from facelm.errors import DimensionError, NumericalError
from facelm.fields import SphereField
from facelm.sampling import OrientedBox, sample_volume
from facelm.tps import (TpsWarp, build_system, fit_tps, kernel_u, load_warp, save_warp, warp_point,
                        warp_points, warp_sample)


def random_points(seed, n):
    return np.random.default_rng(seed).uniform(-1.0, 1.0, (n, 3))


def test_kernel_values():
    assert kernel_u(0.0) == 0.0
    assert kernel_u(1.0) == 0.0
    # e^2 * ln(e) = e^2
    assert kernel_u(math.e) == pytest.approx(7.38905609893065, abs=1e-12)
    with pytest.raises(ValueError):
        kernel_u(-0.1)


def test_system_structure():
    src = random_points(1, 9)
    sys_ = build_system(src, src + 1.0)
    assert np.array_equal(sys_.m, sys_.m.T)
    assert not np.diag(sys_.k).any()
    assert np.array_equal(sys_.p[:, 0], np.ones(9))
    assert not sys_.y[9:].any()


def test_identity_fit():
    src = random_points(2, 12)
    w = fit_tps(src, src)
    np.testing.assert_allclose(w.a0, 0.0, atol=1e-10)
    np.testing.assert_allclose(w.a1, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(w.weights, 0.0, atol=1e-10)
    x = np.array([0.3, -0.7, 2.0])
    assert np.array_equal(warp_point(w, x), x)


def test_translation_fit():
    src = random_points(3, 10)
    w = fit_tps(src, src + [1.0, 2.0, 3.0])
    np.testing.assert_allclose(w.a0, [1.0, 2.0, 3.0], atol=1e-8)
    np.testing.assert_allclose(w.a1, np.eye(3), atol=1e-8)
    assert np.abs(w.weights).max() < 1e-8
    np.testing.assert_allclose(warp_point(w, np.zeros(3)), [1.0, 2.0, 3.0], atol=1e-8)


def test_random_interpolation_seed7():
    rng = np.random.default_rng(7)
    src = rng.uniform(-1, 1, (10, 3))
    dst = rng.uniform(-1, 1, (10, 3))
    w = fit_tps(src, dst)
    assert np.abs(warp_points(w, src) - dst).max() < 1e-8
    np.testing.assert_allclose(warp_point(w, src[3]), dst[3], atol=1e-8)


def test_matches_dense_inverse_oracle():
    for seed in range(20):
        n = 5 + seed % 8
        rng = np.random.default_rng(seed)
        src, dst = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (n, 3))
        s = build_system(src, dst)
        ref = np.linalg.inv(s.m) @ s.y
        w = fit_tps(src, dst)
        got = np.vstack([w.weights, w.a0, w.a1.T])
        assert np.abs(got - ref).max() <= 1e-9 * np.abs(ref).max()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(5, 68))
def test_interpolation_and_side_conditions(seed, n):
    rng = np.random.default_rng(seed)
    src, dst = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (n, 3))
    try:
        w = fit_tps(src, dst)
    except NumericalError:
        # random draws can land nearly coplanar or nearly coincident
        return
    assert np.abs(warp_points(w, src) - dst).max() < 1e-8
    s1, s2 = w.side_conditions()
    assert np.abs(s1).max() < 1e-8
    assert np.abs(s2).max() < 1e-8


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_affine_targets_are_reproduced(seed):
    rng = np.random.default_rng(seed)
    src = rng.uniform(-1, 1, (int(rng.integers(5, 30)), 3))
    b, c = rng.normal(size=(3, 3)), rng.normal(size=3)
    w = fit_tps(src, src @ b.T + c)
    assert np.abs(w.weights).max() < 1e-8
    np.testing.assert_allclose(w.a1, b, atol=1e-8)
    np.testing.assert_allclose(w.a0, c, atol=1e-8)


def test_rejections():
    src = random_points(4, 8)
    with pytest.raises(DimensionError):
        fit_tps(src, src[:7])
    with pytest.raises(DimensionError):
        fit_tps(src[:4], src[:4])
    dup = src.copy()
    dup[5] = dup[2]
    with pytest.raises(NumericalError):
        fit_tps(dup, src)
    flat = src.copy()
    flat[:, 2] = 0.0
    with pytest.raises(NumericalError):
        fit_tps(flat, src)


def test_warp_json_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    w = fit_tps(rng.uniform(-1, 1, (8, 3)), rng.uniform(-1, 1, (8, 3)))
    save_warp(w, tmp_path / "w.json")
    back = load_warp(tmp_path / "w.json")
    for name in ("control_points", "a0", "a1", "weights"):
        assert np.array_equal(getattr(back, name), getattr(w, name))


def test_warp_sample_identity_is_bit_exact():
    field = SphereField(radius=0.6)
    box = OrientedBox(np.zeros(3))
    src = random_points(5, 10)
    w = fit_tps(src, src)
    assert warp_sample(field, w, box, 24) == sample_volume(field, box, 24)


def test_warp_sample_translation_moves_centroid():
    field = SphereField(radius=0.5)
    box = OrientedBox(np.zeros(3))
    src = random_points(6, 10)
    t = np.array([0.2, -0.1, 0.15])
    vol = warp_sample(field, fit_tps(src, src + t), box, 48)
    np.testing.assert_allclose(vol.occupied_centroid(), -t, atol=box.pitch(48) / 2)


def test_warp_sample_open_mouth_landmarks(neutral_and_open, core8):
    from facelm.fields import make_synthetic_head
    from facelm.fitting import FitProblem, fit_landmarks
    from facelm.landmarks import region_indices

    src, dst = neutral_and_open
    head = make_synthetic_head(src, seed=3)
    box = OrientedBox(np.zeros(3))
    vol = warp_sample(head, fit_tps(dst, src), box, 64)
    detected, found = head.locate_landmarks(vol)
    assert found.all()
    fitted = fit_landmarks(FitProblem(core8, detected)).landmarks
    mouth = region_indices("mouth")
    err = np.linalg.norm(fitted[mouth] - dst[mouth], axis=1)
    assert err.max() < 2 * box.pitch(64)
