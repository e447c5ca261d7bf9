"""Linear (DLT) triangulation of points seen by calibrated pinhole cameras."""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, NumericalError


def as_camera(m):
    m = np.asarray(m, dtype=np.float64)
    if m.shape == (12,):
        m = m.reshape(3, 4)
    if m.shape != (3, 4):
        raise DimensionError(f"camera matrix must be 3x4, got {m.shape}")
    if abs(np.linalg.det(m[:, :3])) <= 1e-12 * max(np.abs(m[:, :3]).max(), 1e-300) ** 3:
        raise DimensionError("camera matrix has a singular left 3x3 block")
    return m


def project(camera, points):
    """Pixel coordinates of ``(N, 3)`` points (or one 3-vector)."""
    pts = np.asarray(points, dtype=np.float64)
    h = pts @ camera[:, :3].T + camera[:, 3]
    return h[..., :2] / h[..., 2:3]


@dataclass
class Triangulation:
    point: np.ndarray
    reprojection_rms: float
    singular_values: np.ndarray


def triangulate(cameras, pixels):
    """Least-squares point from ``x cross (P X) = 0`` over all views.

    Each constraint row is scaled to unit norm, which makes the result
    invariant to rescaling any camera matrix.
    """
    if len(cameras) != len(pixels):
        raise DimensionError("need one pixel observation per camera")
    if len(cameras) < 2:
        raise DimensionError("triangulation needs at least two views")
    rows = []
    for cam, (u, v) in zip(cameras, pixels):
        cam = np.asarray(cam, dtype=np.float64)
        rows.append(u * cam[2] - cam[0])
        rows.append(v * cam[2] - cam[1])
    a = np.array(rows)
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    _, s, vt = np.linalg.svd(a)
    if s[2] <= 1e-12 * s[0]:
        raise NumericalError("triangulation system is rank deficient (parallel rays?)")
    x = vt[-1]
    if abs(x[3]) < 1e-15 * np.abs(x).max():
        raise NumericalError("triangulated point is at infinity")
    point = x[:3] / x[3]
    err = [np.linalg.norm(project(np.asarray(c, dtype=np.float64), point) - np.asarray(px))
           for c, px in zip(cameras, pixels)]
    return Triangulation(point, float(np.sqrt(np.mean(np.square(err)))), s)


def triangulate_landmarks(cameras, observations):
    """Triangulate every landmark.

    ``observations`` is ``(n_points, n_cameras, 2)``; NaN rows mark views
    where the point was not detected.
    """
    cams = [as_camera(c) for c in cameras]
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 3 or obs.shape[1] != len(cams) or obs.shape[2] != 2:
        raise DimensionError(f"observations must be (n_points, {len(cams)}, 2), got {obs.shape}")
    results = []
    for per_view in obs:
        seen = np.all(np.isfinite(per_view), axis=1)
        results.append(triangulate([c for c, ok in zip(cams, seen) if ok], per_view[seen]))
    return results


def load_cameras(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return [as_camera(m) for m in data]
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise FormatError(f"camera file must be a JSON list of 3x4 matrices: {exc}", path) from exc


def save_cameras(cameras, path):
    Path(path).write_text(json.dumps([np.asarray(c).tolist() for c in cameras]) + "\n", encoding="utf-8")


def look_at_camera(eye, target=(0.0, 0.0, 0.0), focal=1000.0, size=1000, up=(0.0, 1.0, 0.0)):
    """Pinhole camera at ``eye`` looking at ``target``; principal point at the image centre."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, (1.0, 0.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.vstack([right, down, fwd])
    k = np.array([[focal, 0.0, size / 2.0], [0.0, focal, size / 2.0], [0.0, 0.0, 1.0]])
    return k @ np.hstack([r, (-r @ eye)[:, None]])
