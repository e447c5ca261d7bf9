"""Bilinear landmark model: a (204, n_exp, n_id) core contracted with
expression and identity weights, followed by a 3x4 rigid/affine alignment.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, DimensionError, DimensionOverflowError,
                     FormatError, TruncatedFileError)
from .landmarks import LOWER_MOUTH, N_LANDMARKS, neutral_template

CORE_MAGIC = b"FLNC"
CORE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
# refuse to allocate payloads above 8 GiB from an untrusted header
MAX_CORE_BYTES = 8 << 30

MODE_AMPLITUDE = 0.05
MOUTH_OPEN_DROP = 0.12


@dataclass(frozen=True, eq=False)
class BilinearCore:
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != 3 * N_LANDMARKS:
            raise DimensionError(f"core must have shape (204, n_exp, n_id), got {data.shape}")
        if data.shape[1] < 1 or data.shape[2] < 1:
            raise DimensionError("core expression and identity dimensions must be >= 1")
        if not np.all(np.isfinite(data)):
            raise DimensionError("core contains non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_exp(self):
        return self.data.shape[1]

    @property
    def n_id(self):
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, BilinearCore):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


def _check_weights(w, n, name):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != n:
        raise DimensionError(f"{name} weights must have length {n}, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DimensionError(f"{name} weights contain non-finite entries")
    return w


def contract(core, w_id, w_exp):
    """Flat 204-vector ``core x_exp w_exp x_id w_id``."""
    w_id = _check_weights(w_id, core.n_id, "identity")
    w_exp = _check_weights(w_exp, core.n_exp, "expression")
    by_exp = np.tensordot(core.data, w_exp, axes=([1], [0]))  # (204, n_id)
    return by_exp @ w_id


def generate_landmarks(core, w_id, w_exp):
    """Landmarks ``(68, 3)`` of the face with the given identity and expression."""
    return contract(core, w_id, w_exp).reshape(N_LANDMARKS, 3)


def as_transform(p):
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3, 4):
        raise DimensionError(f"transform must be 3x4, got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DimensionError("transform contains non-finite entries")
    return p


def apply_transform(p, landmarks):
    """Map every point ``v`` to ``P @ [v; 1]``."""
    p = as_transform(p)
    pts = np.asarray(landmarks, dtype=np.float64)
    return pts @ p[:, :3].T + p[:, 3]


def compose_transforms(second, first):
    """3x4 matrix equivalent to applying ``first`` then ``second``."""
    a2, a1 = as_transform(second), as_transform(first)
    out = np.empty((3, 4))
    out[:, :3] = a2[:, :3] @ a1[:, :3]
    out[:, 3] = a2[:, :3] @ a1[:, 3] + a2[:, 3]
    return out


def identity_transform():
    return np.hstack([np.eye(3), np.zeros((3, 1))])


def _smooth_mode(rng):
    """Low-frequency sinusoid of landmark index per coordinate, peak 0.05."""
    idx = np.arange(N_LANDMARKS)
    mode = np.zeros((N_LANDMARKS, 3))
    for c in range(3):
        for freq in (1, 2, 3):
            amp = rng.normal() / freq
            phase = rng.uniform(0.0, 2.0 * np.pi)
            mode[:, c] += amp * np.sin(2.0 * np.pi * freq * idx / N_LANDMARKS + phase)
    return MODE_AMPLITUDE * mode / np.abs(mode).max()


def mouth_open_offset(drop=MOUTH_OPEN_DROP):
    """Displacement field lowering the lower lip and chin by ``drop``."""
    off = np.zeros((N_LANDMARKS, 3))
    off[list(LOWER_MOUTH), 1] = -drop
    # jaw points away from the chin move less
    for i in (5, 11):
        off[i, 1] = -0.4 * drop
    for i in (6, 10):
        off[i, 1] = -0.7 * drop
    return off


def synth_core(seed, n_exp, n_id):
    """Deterministic synthetic core.

    Every slice ``core[:, j, k]`` is the neutral template plus a smooth random
    deformation mode, so one-hot weights always yield a plausible face.  When
    ``n_exp >= 2`` the second expression slice additionally opens the mouth.
    """
    if n_exp < 1 or n_id < 1:
        raise DimensionError("synth_core needs n_exp >= 1 and n_id >= 1")
    rng = np.random.default_rng(seed)
    template = neutral_template()
    data = np.empty((3 * N_LANDMARKS, n_exp, n_id))
    for j in range(n_exp):
        for k in range(n_id):
            face = template + _smooth_mode(rng)
            if j == 1:
                face = face + mouth_open_offset()
            data[:, j, k] = face.reshape(-1)
    return BilinearCore(data)


def save_core(core, path):
    """Write ``core`` as FLNC: header then f64 LE payload, first index fastest."""
    header = _HEADER.pack(CORE_MAGIC, CORE_VERSION, *core.data.shape)
    payload = np.asarray(core.data, dtype="<f8").tobytes(order="F")
    Path(path).write_bytes(header + payload)


def load_core(path):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"core file has {len(raw)} bytes, header needs {_HEADER.size}", path)
    magic, version, d0, d1, d2 = _HEADER.unpack_from(raw)
    if magic != CORE_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {CORE_MAGIC!r}", path)
    if version != CORE_VERSION:
        raise FormatError(f"unsupported core version {version}", path)
    nbytes = 8 * d0 * d1 * d2
    if nbytes > MAX_CORE_BYTES:
        raise DimensionOverflowError(f"dims ({d0}, {d1}, {d2}) exceed the {MAX_CORE_BYTES} byte limit", path)
    if d0 != 3 * N_LANDMARKS or d1 == 0 or d2 == 0:
        raise FormatError(f"invalid core dims ({d0}, {d1}, {d2})", path)
    if len(raw) < _HEADER.size + nbytes:
        raise TruncatedFileError(f"core payload truncated: {len(raw) - _HEADER.size} of {nbytes} bytes", path)
    if len(raw) > _HEADER.size + nbytes:
        raise FormatError("trailing bytes after core payload", path)
    flat = np.frombuffer(raw, dtype="<f8", count=d0 * d1 * d2, offset=_HEADER.size)
    return BilinearCore(flat.reshape((d0, d1, d2), order="F").astype(np.float64))
