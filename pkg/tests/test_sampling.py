import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from facelm.face_model import identity_transform
from facelm.fields import ConstantField, RadianceField, SphereField, make_synthetic_head
from facelm.landmarks import neutral_template, region_indices
from facelm.errors import NumericalError
from facelm.sampling import (AugmentTransform, OrientedBox, apply_augment, cell_centers,
                             export_ply, fine_boxes, load_volume, position_encoding,
                             random_augment, random_rotation, sample_volume, save_volume)


class RotatedField(RadianceField):
    """``x -> field(R x)``."""

    def __init__(self, field, r):
        self.field, self.r = field, r

    def _evaluate(self, points, view_dirs):
        return self.field._evaluate(points @ self.r.T, view_dirs)


class WavyField(RadianceField):
    """Smooth analytic field with colour varying in space."""

    def _evaluate(self, points, view_dirs):
        x, y, z = points.T
        density = 30.0 + 25.0 * np.sin(3 * x) * np.cos(2 * y + z)
        rgb = np.stack([0.5 + 0.4 * np.sin(x + y), 0.5 + 0.4 * np.cos(z), 0.5 + 0.3 * np.sin(2 * z - x)], 1)
        return rgb, density


def test_position_encoding_values():
    np.testing.assert_array_equal(position_encoding(0.0), [0, 0, 1, 0, 1, 0, 1, 0, 1])
    np.testing.assert_allclose(position_encoding(1.0), [1, 0, -1, 0, 1, 0, 1, 0, 1], atol=1e-14)
    assert position_encoding(0.3).shape == (9,)
    assert position_encoding(np.zeros((4, 3))).shape == (4, 3, 9)


def test_threshold_zeroes_low_density():
    vol = sample_volume(ConstantField(19.0), OrientedBox(np.zeros(3)), 8, threshold=20.0)
    assert not vol.data.any()


def test_threshold_binarizes_high_density():
    vol = sample_volume(ConstantField(30.0, (0.5, 0.5, 0.5)), OrientedBox(np.zeros(3)), 8)
    assert np.all(vol.data[:3] == 0.5)
    assert np.all(vol.data[3] == 1.0)


def test_sphere_occupancy_matches_volume_ratio():
    vol = sample_volume(SphereField(radius=1.0), OrientedBox(np.zeros(3)), 64)
    assert abs(vol.occupied().mean() / (np.pi / 6) - 1.0) < 0.02


def test_dichotomy_and_monotonicity():
    field = WavyField()
    box = OrientedBox(np.zeros(3))
    counts = []
    for thr in (0.0, 10.0, 20.0, 35.0, 50.0, 60.0):
        vol = sample_volume(field, box, 16, threshold=thr)
        d = vol.data
        zero = (d[3] == 0) & np.all(d[:3] == 0, axis=0)
        assert np.all(zero | (d[3] == 1.0))
        counts.append(int(vol.occupied().sum()))
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_encoding_channels():
    vol = sample_volume(WavyField(), OrientedBox(np.zeros(3)), 10, encode=True)
    assert vol.channels == 31
    u = cell_centers(10)
    for k, j, i in [(0, 0, 0), (3, 7, 1), (9, 2, 5)]:
        expect = np.concatenate([position_encoding(u[i]), position_encoding(u[j]), position_encoding(u[k])])
        np.testing.assert_allclose(vol.data[4:, k, j, i], expect, atol=1e-12)
    # encoding survives thresholding
    empty = sample_volume(ConstantField(0.0), OrientedBox(np.zeros(3)), 6, encode=True)
    assert not empty.data[:4].any() and empty.data[4:].any()


def test_parallel_determinism():
    head = make_synthetic_head(neutral_template(), seed=1)
    box = OrientedBox([0.0, 0.0, 0.2], random_rotation(np.random.default_rng(0)), 0.9)
    ref = sample_volume(head, box, 20, encode=True, workers=1)
    for workers in (2, 8):
        assert sample_volume(head, box, 20, encode=True, workers=workers) == ref


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_box_equivariance(seed):
    rng = np.random.default_rng(seed)
    r = random_rotation(rng)
    field = WavyField()
    box = OrientedBox(rng.uniform(-0.5, 0.5, 3), random_rotation(rng), 0.8)
    moved = OrientedBox(r.T @ box.center, r.T @ box.rotation, box.half_extent)
    a = sample_volume(field, box, 12, threshold=0.0)
    b = sample_volume(RotatedField(field, r), moved, 12, threshold=0.0)
    np.testing.assert_allclose(a.data, b.data, atol=1e-9)


def test_fine_boxes_centers_and_margins():
    lm = neutral_template()
    boxes = fine_boxes(lm, identity_transform())
    np.testing.assert_allclose(boxes["face"].center, lm.mean(0), atol=1e-15)
    assert boxes["face"].contains(lm).all()
    for name in ("mouth", "left_eye", "right_eye"):
        b = boxes[name]
        assert b.contains(lm[region_indices(name)], margin=0.1 * b.half_extent).all()


def test_fine_boxes_on_generated_faces(core8):
    from facelm.face_model import generate_landmarks

    for j in range(8):
        lm = generate_landmarks(core8, np.eye(8)[0], np.eye(8)[j])
        boxes = fine_boxes(lm, identity_transform())
        assert boxes["face"].contains(lm).all()
        b = boxes["mouth"]
        assert b.contains(lm[region_indices("mouth")], margin=0.1 * b.half_extent).all()


def test_fine_boxes_rotation_equivariance():
    rng = np.random.default_rng(9)
    r = random_rotation(rng)
    lm = neutral_template()
    head = np.hstack([1.3 * np.eye(3), [[0.1], [0.0], [-0.2]]])
    base = fine_boxes(lm, head)
    rot = fine_boxes(lm @ r.T, np.hstack([r @ head[:, :3], (r @ head[:, 3])[:, None]]))
    for name in base:
        np.testing.assert_allclose(rot[name].center, r @ base[name].center, atol=1e-12)
        np.testing.assert_allclose(rot[name].rotation, r @ base[name].rotation, atol=1e-12)
        assert rot[name].half_extent == pytest.approx(base[name].half_extent, abs=1e-12)


def test_fine_boxes_degenerate_head():
    head = np.zeros((3, 4))
    with pytest.raises(NumericalError):
        fine_boxes(neutral_template(), head)


def test_pure_scaling_augment():
    a = AugmentTransform(2.0, np.eye(3), np.zeros(3))
    box = apply_augment(a, OrientedBox(np.zeros(3)))
    assert box.half_extent == 2.0
    vol = sample_volume(SphereField(radius=1.0), box, 32)
    occ = np.argwhere(vol.occupied())
    span = occ.max(0) - occ.min(0) + 1
    assert np.all(span == 16)


def test_augment_moves_cell_centres():
    a = random_augment(3)
    box = OrientedBox([0.1, 0.2, 0.3], random_rotation(np.random.default_rng(1)), 0.7)
    from facelm.sampling import grid_local

    before = box.local_to_world(grid_local(6, box.half_extent))
    moved = apply_augment(a, box)
    after = moved.local_to_world(grid_local(6, moved.half_extent))
    np.testing.assert_allclose(after, a.forward(before), atol=1e-12)
    np.testing.assert_allclose(a.inverse(a.forward(before)), before, atol=1e-12)


def test_random_augment_determinism_and_ranges():
    a, b = random_augment(12), random_augment(12)
    assert a.tau == b.tau and np.array_equal(a.r, b.r) and np.array_equal(a.t, b.t)
    for seed in range(50):
        c = random_augment(seed)
        assert 2.0 <= c.tau <= 3.0
        assert np.all(np.abs(c.t) <= 1.0)
        assert np.linalg.det(c.r) == pytest.approx(1.0, abs=1e-9)


def test_rotation_uniformity_statistic():
    rng = np.random.default_rng(0)
    mean = np.mean([random_rotation(rng)[:, 2] for _ in range(10_000)], axis=0)
    assert np.linalg.norm(mean) < 0.05


def test_augment_transform_validation():
    with pytest.raises(ValueError):
        AugmentTransform(1.5, np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        AugmentTransform(2.5, np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        AugmentTransform(2.5, np.eye(3), [0.0, 1.5, 0.0])


def test_volume_file_round_trip(tmp_path):
    vol = sample_volume(WavyField(), OrientedBox([0.1, -0.2, 0.0], half_extent=0.75), 8, encode=True)
    save_volume(vol, tmp_path / "v.flnv")
    back = load_volume(tmp_path / "v.flnv")
    assert back.channels == 31
    np.testing.assert_array_equal(back.data, vol.data.astype(np.float32))
    np.testing.assert_allclose(back.box.center, vol.box.center, atol=1e-6)
    assert back.box.half_extent == pytest.approx(0.75, abs=1e-6)
    save_volume(back, tmp_path / "w.flnv")
    assert (tmp_path / "w.flnv").read_bytes() == (tmp_path / "v.flnv").read_bytes()


def test_export_ply(tmp_path):
    vol = sample_volume(SphereField(radius=0.5), OrientedBox(np.zeros(3)), 8)
    export_ply(vol, tmp_path / "v.ply")
    lines = (tmp_path / "v.ply").read_text().splitlines()
    n = int(lines[2].split()[-1])
    assert n == int(vol.occupied().sum()) > 0
    assert len(lines) == lines.index("end_header") + 1 + n
    assert len(lines[-1].split()) == 6
