import numpy as np
import pytest

from facelm.errors import BadMagicError, DimensionError, TruncatedFileError
from facelm.fields import (ConstantField, RadianceField, VoxelGridField, bake_to_grid, load_grid,
                           make_synthetic_head, query_voxel_grid, save_grid)
from facelm.landmarks import neutral_template


class AffineField(RadianceField):
    """rgb and density affine in position; used to check trilinear reproduction."""

    def __init__(self, seed):
        rng = np.random.default_rng(seed)
        self.a = rng.uniform(-0.1, 0.1, (4, 3))
        self.b = np.array([0.5, 0.5, 0.5, 50.0])

    def _evaluate(self, points, view_dirs):
        vals = points @ self.a.T + self.b
        return vals[:, :3], vals[:, 3]


def two_node_grid():
    data = np.zeros((4, 2, 2, 2))
    data[3, :, :, 0] = 10.0
    data[3, :, :, 1] = 30.0
    return VoxelGridField(data, origin=(0.0, 0.0, 0.0), extent=(1.0, 1.0, 1.0))


def test_grid_node_and_midpoint():
    g = two_node_grid()
    assert query_voxel_grid(g, (0.0, 0.0, 0.0)).density == 10.0
    assert query_voxel_grid(g, (1.0, 1.0, 1.0)).density == 30.0
    assert query_voxel_grid(g, (0.5, 0.3, 0.9)).density == pytest.approx(20.0, abs=1e-12)


def test_grid_outside_is_vacuum():
    s = query_voxel_grid(two_node_grid(), (1.5, 0.5, 0.5))
    assert s.rgb == (0.0, 0.0, 0.0) and s.density == 0.0


def test_grid_rejects_bad_dims():
    with pytest.raises(DimensionError):
        VoxelGridField(np.zeros((4, 1, 2, 2)), (0, 0, 0), (1, 1, 1))
    with pytest.raises(DimensionError):
        bake_to_grid(ConstantField(1.0), (0, 0, 0), (1, 1, 1), (2, 1, 2))


def test_bake_node_exactness():
    field = AffineField(1)
    grid = bake_to_grid(field, (-1, -1, -1), (1, 1, 1), (5, 6, 7))
    nodes = grid.node_positions().reshape(-1, 3)
    rgb_g, den_g = grid.query_batch(nodes)
    rgb_f, den_f = field.query_batch(nodes)
    np.testing.assert_allclose(rgb_g, rgb_f, atol=1e-12)
    np.testing.assert_allclose(den_g, den_f, atol=1e-12)


def test_bake_constant_field():
    grid = bake_to_grid(ConstantField(33.0, (0.1, 0.2, 0.3)), (-1, -1, -1), (1, 1, 1), (4, 4, 4))
    assert np.all(grid.data[3] == 33.0)
    assert np.all(grid.data[0] == 0.1)


def test_trilinear_reproduces_affine_fields():
    for seed in range(5):
        field = AffineField(seed)
        grid = bake_to_grid(field, (-1, -1, -1), (1, 1, 1), (4, 5, 6))
        pts = np.random.default_rng(seed).uniform(-1, 1, (500, 3))
        rgb_g, den_g = grid.query_batch(pts)
        rgb_f, den_f = field.query_batch(pts)
        np.testing.assert_allclose(den_g, den_f, atol=1e-12)
        np.testing.assert_allclose(rgb_g, rgb_f, atol=1e-12)


def test_bake_parallel_is_bit_identical():
    head = make_synthetic_head(neutral_template(), seed=2)
    a = bake_to_grid(head, (-1, -1, -1), (1, 1, 1), (12, 12, 12), workers=1)
    b = bake_to_grid(head, (-1, -1, -1), (1, 1, 1), (12, 12, 12), workers=4)
    assert np.array_equal(a.data, b.data)


def test_synthetic_head_contract():
    lm = neutral_template()
    head = make_synthetic_head(lm, seed=4)
    _, density = head.query_batch(lm)
    assert density.min() >= 40.0
    assert head.query((5.0, 5.0, 5.0)).density < 1.0
    again = make_synthetic_head(lm, seed=4)
    pts = np.random.default_rng(0).uniform(-1, 1, (200, 3))
    for x, y in zip(head.query_batch(pts), again.query_batch(pts)):
        assert np.array_equal(x, y)
    with pytest.raises(ValueError):
        make_synthetic_head(lm + [0.0, 0.0, 0.6], seed=0)


def test_synthetic_head_occupancy_band():
    head = make_synthetic_head(neutral_template(), seed=0)
    pts = np.random.default_rng(1).uniform(-1, 1, (200_000, 3))
    frac = np.mean(head.query_batch(pts)[1] > 20.0)
    assert 0.01 < frac < 0.5


def test_query_is_pure():
    head = make_synthetic_head(neutral_template(), seed=0)
    x = (0.1, 0.2, 0.4)
    assert head.query(x) == head.query(x)


def test_baked_head_within_local_lipschitz_bound():
    head = make_synthetic_head(neutral_template(), seed=0)
    grid = bake_to_grid(head, (-1, -1, -1), (1, 1, 1), (64, 64, 64))
    h = 2.0 / 63
    reach = h * np.sqrt(3.0)
    pts = np.random.default_rng(3).uniform(-0.95, 0.95, (300, 3))
    interp = grid.query_batch(pts)[1]
    direct = head.query_batch(pts)[1]
    for x, a, b in zip(pts, interp, direct):
        assert abs(a - b) <= head.density_lipschitz(x, reach) * reach


def test_grid_file_round_trip(tmp_path):
    grid = bake_to_grid(AffineField(2), (-1, -0.5, 0), (1, 0.5, 2), (3, 4, 5))
    save_grid(grid, tmp_path / "g.flnv")
    raw = (tmp_path / "g.flnv").read_bytes()
    assert raw[:4] == b"FLNV"
    back = load_grid(tmp_path / "g.flnv")
    assert back.dims == (3, 4, 5)
    np.testing.assert_array_equal(back.data, grid.data.astype(np.float32))
    save_grid(back, tmp_path / "h.flnv")
    assert (tmp_path / "h.flnv").read_bytes() == raw


def test_grid_file_errors(tmp_path):
    grid = bake_to_grid(ConstantField(1.0), (0, 0, 0), (1, 1, 1), (2, 2, 2))
    save_grid(grid, tmp_path / "g.flnv")
    raw = (tmp_path / "g.flnv").read_bytes()
    (tmp_path / "b.flnv").write_bytes(b"FLNC" + raw[4:])
    with pytest.raises(BadMagicError):
        load_grid(tmp_path / "b.flnv")
    (tmp_path / "b.flnv").write_bytes(raw[:-4])
    with pytest.raises(TruncatedFileError):
        load_grid(tmp_path / "b.flnv")
