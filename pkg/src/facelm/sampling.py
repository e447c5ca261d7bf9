"""Oriented-box volume sampling, density thresholding, position-encoding
channels, fine-region boxes and the coarse pose/scale augmentation.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, NumericalError
from .fields import decode_grid, encode_grid
from .landmarks import as_landmarks, region_indices

DEFAULT_RES = 64
DEFAULT_THRESHOLD = 20.0
ENCODING_FREQS = 4


@dataclass(frozen=True)
class OrientedBox:
    """Cube with the given centre, orientation and half side length."""

    center: np.ndarray
    rotation: np.ndarray = dc_field(default_factory=lambda: np.eye(3))
    half_extent: float = 1.0

    def __post_init__(self):
        c = np.array(self.center, dtype=np.float64).reshape(3)
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=1e-9):
            raise ValueError("box rotation must be orthonormal")
        if not self.half_extent > 0:
            raise ValueError("box half_extent must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "half_extent", float(self.half_extent))

    @property
    def frontal_direction(self):
        return -self.rotation[:, 2]

    def pitch(self, res):
        return 2.0 * self.half_extent / res

    def local_to_world(self, local):
        local = np.asarray(local, dtype=np.float64)
        r, c = self.rotation, self.center
        out = np.empty(local.shape)
        for a in range(3):
            out[..., a] = c[a] + r[a, 0] * local[..., 0] + r[a, 1] * local[..., 1] + r[a, 2] * local[..., 2]
        return out

    def world_to_local(self, points):
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation

    def contains(self, points, margin=0.0):
        """True where every local coordinate is within ``half_extent - margin``."""
        local = self.world_to_local(points)
        return np.all(np.abs(local) <= self.half_extent - margin, axis=-1)

    def to_dict(self):
        return {"center": self.center.tolist(), "rotation": self.rotation.tolist(),
                "half_extent": self.half_extent}

    @classmethod
    def from_dict(cls, d):
        return cls(d["center"], d.get("rotation", np.eye(3)), d.get("half_extent", 1.0))


def cell_centers(res):
    """Normalized cell-centre coordinates ``(i + 0.5) / res``."""
    return (np.arange(res) + 0.5) / res


def grid_local(res, half_extent, k=None):
    """Local coordinates of the cell centres, shape ``(res, res, res, 3)`` in
    ``[z][y][x]`` order, or one z-slab ``(res, res, 3)`` if ``k`` is given."""
    u = (2.0 * cell_centers(res) - 1.0) * half_extent
    if k is None:
        z, y, x = np.meshgrid(u, u, u, indexing="ij")
    else:
        y, x = np.meshgrid(u, u, indexing="ij")
        z = np.full_like(x, u[k])
    return np.stack([x, y, z], axis=-1)


def position_encoding(p, n_freqs=ENCODING_FREQS):
    """``(p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(...))``."""
    p = np.asarray(p, dtype=np.float64)
    parts = [p]
    for k in range(n_freqs):
        arg = (2.0 ** k) * np.pi * p
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.stack(parts, axis=-1)


@dataclass(frozen=True, eq=False)
class FeatureVolume:
    """``data`` is ``(C, res, res, res)`` in ``[c][z][y][x]`` order; C is 4
    (r, g, b, density) or 4 + 27 with position-encoding channels."""

    data: np.ndarray
    box: OrientedBox

    @property
    def res(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[0]

    def occupied(self):
        return self.data[3] > 0.0

    def world_points(self):
        return self.box.local_to_world(grid_local(self.res, self.box.half_extent))

    def occupied_centroid(self):
        pts = self.world_points()[self.occupied()]
        return pts.mean(axis=0) if len(pts) else np.full(3, np.nan)

    def __eq__(self, other):
        if not isinstance(other, FeatureVolume):
            return NotImplemented
        return (self.data.shape == other.data.shape and np.array_equal(self.data, other.data)
                and self.box.to_dict() == other.box.to_dict())


def _encoding_channels(res, n_freqs):
    enc = position_encoding(cell_centers(res), n_freqs)  # (res, 1 + 2L)
    n = enc.shape[1]
    out = np.empty((3 * n, res, res, res))
    for j in range(n):
        out[j] = enc[:, j][None, None, :]
        out[n + j] = enc[:, j][None, :, None]
        out[2 * n + j] = enc[:, j][:, None, None]
    return out


def sample_volume(field, box, res=DEFAULT_RES, threshold=DEFAULT_THRESHOLD, encode=False,
                  workers=1, position_map=None, n_freqs=ENCODING_FREQS):
    """Sample ``field`` at the ``res**3`` cell centres of ``box`` and binarize.

    Voxels with density below ``threshold`` become all-zero; the rest keep
    their rgb and get density 1.  ``position_map`` (e.g. a TPS warp) is
    applied to world positions before querying.  Work is split into z-slabs
    independent of ``workers``, so output does not depend on parallelism.
    """
    if res < 2:
        raise ValueError("res must be >= 2")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    view = box.frontal_direction

    def slab(k):
        pts = box.local_to_world(grid_local(res, box.half_extent, k)).reshape(-1, 3)
        if position_map is not None:
            pts = position_map(pts)
        rgb, density = field.query_batch(pts, view)
        keep = density >= threshold
        out = np.zeros((4, res * res))
        out[:3, keep] = rgb[keep].T
        out[3, keep] = 1.0
        return out.reshape(4, res, res)

    n_ch = 4 + (3 * (1 + 2 * n_freqs) if encode else 0)
    data = np.zeros((n_ch, res, res, res))
    if workers <= 1:
        slabs = map(slab, range(res))
        for k, values in enumerate(slabs):
            data[:4, k] = values
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for k, values in enumerate(pool.map(slab, range(res))):
                data[:4, k] = values
    if encode:
        data[4:] = _encoding_channels(res, n_freqs)
    return FeatureVolume(data, box)


def volume_bytes(volume):
    """FLNV encoding whose node positions are the volume's cell centres.

    The box rotation is not representable in the format and is dropped.
    """
    res, h = volume.res, volume.box.half_extent
    pitch = 2.0 * h / res
    origin = volume.box.center - h + 0.5 * pitch
    extent = np.full(3, 2.0 * h - pitch)
    return encode_grid(volume.data, origin, extent)


def save_volume(volume, path):
    Path(path).write_bytes(volume_bytes(volume))


def load_volume(path, rotation=None):
    data, origin, extent = decode_grid(Path(path).read_bytes(), path)
    c, nz, ny, nx = data.shape
    if not nx == ny == nz:
        raise FormatError(f"feature volumes are cubic, got ({nx}, {ny}, {nz})", path)
    if c not in (4, 31):
        raise FormatError(f"feature volumes have 4 or 31 channels, got {c}", path)
    origin = origin.astype(np.float64)
    extent = extent.astype(np.float64)
    pitch = extent[0] / (nx - 1)
    half = 0.5 * (extent[0] + pitch)
    center = origin - 0.5 * pitch + half
    box = OrientedBox(center, np.eye(3) if rotation is None else rotation, half)
    return FeatureVolume(data, box)


def export_ply(volume, path):
    """ASCII PLY of occupied voxel centres with 8-bit colour."""
    mask = volume.occupied()
    pts = volume.world_points()[mask]
    rgb = np.round(np.moveaxis(volume.data[:3], 0, -1)[mask] * 255.0).astype(int)
    lines = [
        "ply", "format ascii 1.0", f"element vertex {len(pts)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    lines += [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}" for p, c in zip(pts, rgb)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# Half extents of the fine boxes as multiples of the head scale (the largest
# landmark distance from the centroid), before the enlargement factor.
@dataclass(frozen=True)
class BoxConstants:
    face: float = 0.9
    eye: float = 0.35
    mouth: float = 0.42
    enlarge: float = 1.15


def rotation_factor(linear):
    """Nearest rotation to ``linear`` (polar decomposition)."""
    u, s, vt = np.linalg.svd(linear)
    if s.min() <= 1e-12 * max(s.max(), 1e-300):
        raise NumericalError("head transform linear part is singular")
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def fine_boxes(coarse, head, constants=BoxConstants()):
    """Face, eye and mouth boxes from coarse landmarks and the head transform."""
    lm = as_landmarks(coarse)
    head = np.asarray(head, dtype=np.float64)
    if head.shape != (3, 4):
        raise DimensionError(f"head transform must be 3x4, got {head.shape}")
    rot = rotation_factor(head[:, :3])
    centroid = lm.mean(axis=0)
    scale = np.linalg.norm(lm - centroid, axis=1).max()
    sizes = {"face": constants.face, "left_eye": constants.eye,
             "right_eye": constants.eye, "mouth": constants.mouth}
    boxes = {}
    for name, k in sizes.items():
        center = lm[region_indices(name)].mean(axis=0)
        boxes[name] = OrientedBox(center, rot, k * scale * constants.enlarge)
    return boxes


@dataclass(frozen=True)
class AugmentTransform:
    """Sampling positions ``S`` move to ``tau * (R @ S + t)``."""

    tau: float
    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if not 2.0 <= self.tau <= 3.0:
            raise ValueError(f"tau must be in [2, 3], got {self.tau}")
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=1e-9) or np.linalg.det(r) < 0:
            raise ValueError("r must be a proper rotation")
        if np.any(np.abs(t) > 1.0):
            raise ValueError("t must lie in [-1, 1]^3")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    def forward(self, points):
        return self.tau * (np.asarray(points) @ self.r.T + self.t)

    def inverse(self, points):
        return (np.asarray(points) / self.tau - self.t) @ self.r

    def to_dict(self):
        return {"tau": self.tau, "r": self.r.tolist(), "t": self.t.tolist()}


def quaternion_to_matrix(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_rotation(rng):
    """Uniform on SO(3): normalized isotropic Gaussian quaternion."""
    q = rng.normal(size=4)
    while np.linalg.norm(q) < 1e-8:
        q = rng.normal(size=4)
    return quaternion_to_matrix(q)


def random_augment(seed):
    rng = np.random.default_rng(seed)
    tau = rng.uniform(2.0, 3.0)
    r = random_rotation(rng)
    t = rng.uniform(-1.0, 1.0, 3)
    return AugmentTransform(tau, r, t)


def apply_augment(a, box):
    """Box whose cell centres are ``a.forward`` of the original cell centres."""
    return OrientedBox(
        center=a.forward(box.center),
        rotation=a.r @ box.rotation,
        half_extent=a.tau * box.half_extent,
    )
