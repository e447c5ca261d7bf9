"""68-point landmark conventions, a canonical neutral template and JSON I/O.

Landmarks are ``(68, 3)`` float arrays in head units (dataset coordinates
divided by 100).  Flattened 204-vectors are xyz-interleaved, i.e. entry
``3 * i + c`` is coordinate ``c`` of landmark ``i``.
"""
import json
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

N_LANDMARKS = 68

REGIONS = {
    "face": tuple(range(68)),
    "jaw": tuple(range(0, 17)),
    "mouth": tuple(range(48, 68)),
    "left_eye": tuple(range(17, 22)) + tuple(range(36, 42)),
    "right_eye": tuple(range(22, 27)) + tuple(range(42, 48)),
    "nose": tuple(range(27, 36)),
}

# landmarks that drop when the jaw opens
LOWER_MOUTH = (5, 6, 7, 8, 9, 10, 11, 55, 56, 57, 58, 59, 65, 66, 67)


def as_landmarks(points):
    """Validate and return a float64 ``(68, 3)`` copy of ``points``."""
    arr = np.array(points, dtype=np.float64)
    if arr.shape == (3 * N_LANDMARKS,):
        arr = arr.reshape(N_LANDMARKS, 3)
    if arr.shape != (N_LANDMARKS, 3):
        raise DimensionError(f"expected 68x3 landmarks, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("landmarks contain non-finite coordinates")
    return arr


def _jaw():
    phi = np.linspace(-0.47 * np.pi, 0.47 * np.pi, 17)
    x = 0.6 * np.sin(phi)
    y = 0.2 - 0.8 * np.cos(phi)
    z = 0.1 + 0.25 * np.cos(phi)
    return np.stack([x, y, z], axis=1)


def neutral_template():
    """Canonical frontal face layout in head units (face looks down +z)."""
    pts = np.zeros((N_LANDMARKS, 3))
    pts[0:17] = _jaw()
    brow_x = np.linspace(-0.45, -0.1, 5)
    brow_y = 0.33 + 0.05 * np.sin(np.linspace(0.0, np.pi, 5))
    pts[17:22] = np.stack([brow_x, brow_y, np.full(5, 0.42)], axis=1)
    pts[22:27] = pts[17:22][::-1] * [-1.0, 1.0, 1.0]
    pts[27:31] = [[0.0, y, z] for y, z in zip(np.linspace(0.24, -0.04, 4), np.linspace(0.46, 0.6, 4))]
    pts[31:36] = [[x, -0.11, 0.5 + 0.04 * (1 - abs(x) / 0.12)] for x in np.linspace(-0.12, 0.12, 5)]
    eye = np.array([
        [-0.38, 0.20], [-0.315, 0.24], [-0.235, 0.24],
        [-0.17, 0.20], [-0.235, 0.16], [-0.315, 0.16],
    ])
    pts[36:42, :2] = eye
    pts[36:42, 2] = 0.42
    # mirror so 42 is the inner corner of the second eye
    pts[42:48] = pts[[39, 38, 37, 36, 41, 40]] * [-1.0, 1.0, 1.0]
    outer = np.array([
        [-0.22, -0.30], [-0.14, -0.255], [-0.06, -0.235], [0.0, -0.245],
        [0.06, -0.235], [0.14, -0.255], [0.22, -0.30], [0.14, -0.36],
        [0.06, -0.385], [0.0, -0.39], [-0.06, -0.385], [-0.14, -0.36],
    ])
    pts[48:60, :2] = outer
    pts[48:60, 2] = 0.46 - 0.5 * outer[:, 0] ** 2
    inner = np.array([
        [-0.16, -0.30], [-0.07, -0.28], [0.0, -0.28], [0.07, -0.28],
        [0.16, -0.30], [0.07, -0.32], [0.0, -0.32], [-0.07, -0.32],
    ])
    pts[60:68, :2] = inner
    pts[60:68, 2] = 0.44 - 0.5 * inner[:, 0] ** 2
    return pts


def region_indices(name):
    try:
        return np.array(REGIONS[name])
    except KeyError:
        raise KeyError(f"unknown landmark region {name!r}; known: {sorted(REGIONS)}") from None


def save_landmarks(landmarks, path):
    arr = as_landmarks(landmarks)
    Path(path).write_text(json.dumps(arr.tolist()) + "\n", encoding="utf-8")


def load_landmarks(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read landmark file: {exc}", path) from exc
    try:
        return as_landmarks(data)
    except (DimensionError, ValueError, TypeError) as exc:
        raise FormatError(f"landmark file must hold 68 [x, y, z] triples: {exc}", path) from exc
