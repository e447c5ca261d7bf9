"""Queryable radiance fields: analytic test fields, a landmark-driven synthetic
head, and a trilinearly interpolated voxel grid with its FLNV file format.

Every field maps positions (and a view direction, ignored here) to rgb in
[0, 1] and a nonnegative density on the same scale as the sampling threshold.
"""
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, DimensionError, DimensionOverflowError,
                     FormatError, TruncatedFileError)
from .landmarks import N_LANDMARKS, as_landmarks

FRONTAL_VIEW = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class FieldSample:
    rgb: tuple
    density: float


class RadianceField:
    """Base class.  Subclasses implement ``_evaluate(points, view_dirs)``."""

    def query_batch(self, points, view_dirs=None):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        dirs = FRONTAL_VIEW if view_dirs is None else np.asarray(view_dirs, dtype=np.float64)
        rgb, density = self._evaluate(pts, dirs)
        return np.clip(rgb, 0.0, 1.0), np.maximum(density, 0.0)

    def query(self, position, view_dir=FRONTAL_VIEW):
        rgb, density = self.query_batch(np.reshape(position, (1, 3)), view_dir)
        return FieldSample(tuple(float(c) for c in rgb[0]), float(density[0]))

    def _evaluate(self, points, view_dirs):
        raise NotImplementedError


class ConstantField(RadianceField):
    def __init__(self, density, rgb=(0.5, 0.5, 0.5)):
        self.density = float(density)
        self.rgb = np.asarray(rgb, dtype=np.float64)

    def _evaluate(self, points, view_dirs):
        n = len(points)
        return np.tile(self.rgb, (n, 1)), np.full(n, self.density)


class SphereField(RadianceField):
    """Solid ball of uniform density and colour, vacuum outside."""

    def __init__(self, radius=1.0, center=(0.0, 0.0, 0.0), density=40.0, rgb=(0.8, 0.6, 0.5)):
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=np.float64)
        self.density = float(density)
        self.rgb = np.asarray(rgb, dtype=np.float64)

    def _evaluate(self, points, view_dirs):
        d = points - self.center
        inside = (d[:, 0] ** 2 + d[:, 1] ** 2 + d[:, 2] ** 2) <= self.radius ** 2
        rgb = np.where(inside[:, None], self.rgb, 0.0)
        return rgb, np.where(inside, self.density, 0.0)


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


class SyntheticHeadField(RadianceField):
    """Ellipsoidal head plus one Gaussian density blob per landmark.

    Each landmark blob carries its own palette colour wherever it dominates
    (Gaussian factor >= 0.5), which lets :meth:`locate_landmarks` recover
    landmark positions from a sampled volume.  Elsewhere the head is skin
    coloured.
    """

    head_center = np.array([0.0, 0.05, -0.05])
    head_radii = np.array([0.68, 0.85, 0.55])
    head_density = 60.0
    head_ramp = 0.15
    blob_density = 80.0
    blob_sigma = 0.03

    def __init__(self, landmarks, seed=0):
        lm = as_landmarks(landmarks)
        if np.any(np.abs(lm) > 1.0):
            raise ValueError("synthetic head landmarks must lie inside [-1, 1]^3")
        self.landmarks = lm
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        levels = np.array([0.05, 0.25, 0.45, 0.65, 0.85])
        grid = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), -1).reshape(-1, 3)
        self.skin = np.array([0.93, 0.74, 0.62]) + rng.uniform(-0.02, 0.02, 3)
        self.palette = grid[rng.permutation(len(grid))[:N_LANDMARKS]]

    def _head_density(self, points):
        q = np.zeros(len(points))
        for c in range(3):
            q += ((points[:, c] - self.head_center[c]) / self.head_radii[c]) ** 2
        return self.head_density * _smoothstep((1.0 - q) / self.head_ramp)

    def _evaluate(self, points, view_dirs):
        density = self._head_density(points)
        best = np.zeros(len(points))
        owner = np.full(len(points), -1)
        inv2s2 = 0.5 / self.blob_sigma ** 2
        for i, l_i in enumerate(self.landmarks):
            dx = points[:, 0] - l_i[0]
            dy = points[:, 1] - l_i[1]
            dz = points[:, 2] - l_i[2]
            g = np.exp(-(dx * dx + dy * dy + dz * dz) * inv2s2)
            density += self.blob_density * g
            take = g > best
            best[take] = g[take]
            owner[take] = i
        rgb = np.tile(self.skin, (len(points), 1))
        marked = best >= 0.5
        rgb[marked] = self.palette[owner[marked]]
        return rgb, density

    def density_lipschitz(self, center, radius):
        """Upper bound on |grad density| over the ball ``|x - center| <= radius``."""
        center = np.asarray(center, dtype=np.float64)
        # head: |d smoothstep/du| <= 1.5, |du/dq| = 1/ramp, |grad q| <= 2 / min(radii) where q <= 1
        bound = self.head_density * 1.5 / self.head_ramp * 2.0 / self.head_radii.min()
        s = self.blob_sigma
        for l_i in self.landmarks:
            d = np.linalg.norm(center - l_i)
            dmin, dmax = max(d - radius, 0.0), d + radius
            if dmin <= s <= dmax:
                r = s
            elif dmax < s:
                r = dmax
            else:
                r = dmin
            bound += self.blob_density * r / s ** 2 * np.exp(-0.5 * r * r / s ** 2)
        return bound

    def locate_landmarks(self, volume):
        """Centroid of the occupied voxels coloured like each landmark blob.

        Returns ``(landmarks, found)``; landmarks with no voxels are NaN.
        """
        data = volume.data
        occupied = data[3] == 1.0
        rgb = np.moveaxis(data[:3], 0, -1)[occupied]
        pts = volume.world_points().reshape(data.shape[1:] + (3,))[occupied]
        colours = np.vstack([self.palette, self.skin])
        d2 = np.zeros((len(rgb), len(colours)))
        for c in range(3):
            d2 += (rgb[:, c:c + 1] - colours[None, :, c]) ** 2
        label = np.argmin(d2, axis=1)
        out = np.full((N_LANDMARKS, 3), np.nan)
        found = np.zeros(N_LANDMARKS, dtype=bool)
        for i in range(N_LANDMARKS):
            mine = label == i
            if np.any(mine):
                out[i] = pts[mine].mean(axis=0)
                found[i] = True
        return out, found


def make_synthetic_head(landmarks, seed=0):
    return SyntheticHeadField(landmarks, seed)


class VoxelGridField(RadianceField):
    """Axis-aligned grid of (r, g, b, density) nodes, trilinear in between.

    Node ``(i, j, k)`` sits at ``origin + (i, j, k) / (dims - 1) * extent``.
    ``data`` has shape ``(4, nz, ny, nx)``.  Queries outside the box return
    vacuum.
    """

    def __init__(self, data, origin, extent):
        data = np.asarray(data)
        if data.ndim != 4 or data.shape[0] != 4:
            raise DimensionError(f"grid data must be (4, nz, ny, nx), got {data.shape}")
        if min(data.shape[1:]) < 2:
            raise DimensionError("grid needs at least 2 nodes per axis")
        self.data = data
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.extent = np.asarray(extent, dtype=np.float64).reshape(3)
        if np.any(self.extent <= 0):
            raise DimensionError("grid extent must be positive")

    @property
    def dims(self):
        nz, ny, nx = self.data.shape[1:]
        return nx, ny, nz

    def node_positions(self):
        nx, ny, nz = self.dims
        axes = [self.origin[a] + np.arange(n) / (n - 1) * self.extent[a] for a, n in enumerate((nx, ny, nz))]
        z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def _evaluate(self, points, view_dirs):
        n_axes = np.array(self.dims)
        g = (points - self.origin) / self.extent * (n_axes - 1)
        inside = np.all((g >= 0.0) & (g <= n_axes - 1), axis=1)
        gi = g[inside]
        i0 = np.clip(np.floor(gi).astype(np.int64), 0, n_axes - 2)
        t = gi - i0
        vals = np.zeros((4, len(gi)))
        for corner in range(8):
            ox, oy, oz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
            w = ((t[:, 0] if ox else 1.0 - t[:, 0])
                 * (t[:, 1] if oy else 1.0 - t[:, 1])
                 * (t[:, 2] if oz else 1.0 - t[:, 2]))
            vals += w * self.data[:, i0[:, 2] + oz, i0[:, 1] + oy, i0[:, 0] + ox]
        out = np.zeros((4, len(points)))
        out[:, inside] = vals
        return out[:3].T, out[3]


def query_voxel_grid(field, position, view_dir=FRONTAL_VIEW):
    return field.query(position, view_dir)


def bake_to_grid(field, lo, hi, dims, workers=1):
    """Sample ``field`` at the nodes of an axis-aligned grid spanning ``[lo, hi]``."""
    nx, ny, nz = (int(d) for d in dims)
    if min(nx, ny, nz) < 2:
        raise DimensionError("bake_to_grid needs dims >= 2 per axis")
    lo = np.asarray(lo, dtype=np.float64)
    extent = np.asarray(hi, dtype=np.float64) - lo
    grid = VoxelGridField(np.zeros((4, nz, ny, nx)), lo, extent)
    nodes = grid.node_positions()

    def slab(k):
        rgb, density = field.query_batch(nodes[k].reshape(-1, 3), FRONTAL_VIEW)
        return np.vstack([rgb.T, density[None]]).reshape(4, ny, nx)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for k, values in enumerate(pool.map(slab, range(nz))):
            grid.data[:, k] = values
    return grid


GRID_MAGIC = b"FLNV"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<4sIIIII6f")
MAX_GRID_BYTES = 8 << 30


def encode_grid(data, origin, extent):
    """FLNV bytes: header, f32 origin/extent, f32 LE payload ``[c][z][y][x]``."""
    c, nz, ny, nx = data.shape
    header = _GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, nx, ny, nz, c,
                               *np.asarray(origin, dtype=np.float32), *np.asarray(extent, dtype=np.float32))
    return header + np.ascontiguousarray(data, dtype="<f4").tobytes()


def decode_grid(raw, path=None):
    """Inverse of :func:`encode_grid`; returns ``(data, origin, extent)`` as float32."""
    if len(raw) < _GRID_HEADER.size:
        raise TruncatedFileError(f"grid file has {len(raw)} bytes, header needs {_GRID_HEADER.size}", path)
    magic, version, nx, ny, nz, c, *box = _GRID_HEADER.unpack_from(raw)
    if magic != GRID_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {GRID_MAGIC!r}", path)
    if version != GRID_VERSION:
        raise FormatError(f"unsupported grid version {version}", path)
    nbytes = 4 * nx * ny * nz * c
    if nbytes > MAX_GRID_BYTES:
        raise DimensionOverflowError(f"grid dims ({nx}, {ny}, {nz}, {c}) too large", path)
    if min(nx, ny, nz, c) == 0:
        raise FormatError("grid has a zero dimension", path)
    if len(raw) != _GRID_HEADER.size + nbytes:
        if len(raw) < _GRID_HEADER.size + nbytes:
            raise TruncatedFileError(f"grid payload has {len(raw) - _GRID_HEADER.size} of {nbytes} bytes", path)
        raise FormatError("trailing bytes after grid payload", path)
    data = np.frombuffer(raw, dtype="<f4", offset=_GRID_HEADER.size).reshape(c, nz, ny, nx)
    box = np.array(box, dtype=np.float32)
    return data.copy(), box[:3], box[3:]


def save_grid(field, path):
    Path(path).write_bytes(encode_grid(field.data, field.origin, field.extent))


def load_grid(path):
    data, origin, extent = decode_grid(Path(path).read_bytes(), path)
    if data.shape[0] != 4:
        raise FormatError(f"field grids need 4 channels, file has {data.shape[0]}", path)
    return VoxelGridField(data, origin, extent)
