"""3D thin-plate-spline interpolation.

The map is ``f(x) = a0 + a1 @ x + sum_i w_i * U(|l_i - x|)`` with the radial
kernel ``U(r) = r**2 * log(r)`` and ``U(0) = 0``.  Coefficients come from the
bordered system ``[[K, P], [P.T, 0]] @ [W; a0; a1.T] = [L'; 0]`` where
``P = [1 | l_i]``.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, NumericalError

MIN_POINTS = 5
MIN_SEPARATION = 1e-9
MAX_CONDITION = 1e12


def kernel_u(r):
    """Radial basis ``r**2 * ln(r)`` with the removable singularity at 0 filled in."""
    r = float(r)
    if r < 0.0:
        raise ValueError(f"kernel_u needs r >= 0, got {r}")
    if r == 0.0:
        return 0.0
    return r * r * np.log(r)


def _kernel(r):
    out = np.zeros_like(r)
    nz = r > 0.0
    out[nz] = r[nz] ** 2 * np.log(r[nz])
    return out


def _as_points(points, name):
    arr = np.array(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionError(f"{name} must be an (N, 3) point list, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite coordinates")
    return arr


@dataclass(frozen=True)
class TpsSystem:
    k: np.ndarray
    p: np.ndarray
    m: np.ndarray
    y: np.ndarray


def build_system(source, target):
    """Assemble ``K``, ``P``, ``M`` and the right-hand side for ``source -> target``."""
    src = _as_points(source, "source")
    dst = _as_points(target, "target")
    if src.shape != dst.shape:
        raise DimensionError(f"source has {len(src)} points but target has {len(dst)}")
    n = len(src)
    diff = src[:, None, :] - src[None, :, :]
    k = _kernel(np.sqrt(np.sum(diff * diff, axis=-1)))
    p = np.hstack([np.ones((n, 1)), src])
    m = np.zeros((n + 4, n + 4))
    m[:n, :n] = k
    m[:n, n:] = p
    m[n:, :n] = p.T
    y = np.zeros((n + 4, 3))
    y[:n] = dst
    return TpsSystem(k=k, p=p, m=m, y=y)


@dataclass(frozen=True)
class TpsWarp:
    control_points: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    weights: np.ndarray

    @property
    def is_identity(self):
        return (not np.any(self.a0) and not np.any(self.weights)
                and np.array_equal(self.a1, np.eye(3)))

    def side_conditions(self):
        """``(sum_i w_i, sum_i w_i l_i^T)``; both vanish for a valid fit."""
        return self.weights.sum(axis=0), self.weights.T @ self.control_points

    def __call__(self, points):
        return warp_points(self, points)

    def to_dict(self):
        return {
            "control_points": self.control_points.tolist(),
            "a0": self.a0.tolist(),
            "a1": self.a1.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            cp = _as_points(d["control_points"], "control_points")
            a0 = np.array(d["a0"], dtype=np.float64)
            a1 = np.array(d["a1"], dtype=np.float64)
            w = _as_points(d["weights"], "weights")
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed warp: {exc}") from exc
        if a0.shape != (3,) or a1.shape != (3, 3) or w.shape != cp.shape:
            raise FormatError("warp arrays have inconsistent shapes")
        return cls(cp, a0, a1, w)


def identity_warp(control_points):
    cp = _as_points(control_points, "control_points")
    return TpsWarp(cp, np.zeros(3), np.eye(3), np.zeros_like(cp))


def fit_tps(source, target):
    """Fit the interpolating warp taking ``source[i]`` to ``target[i]``."""
    system = build_system(source, target)
    src = system.p[:, 1:]
    n = len(src)
    if n < MIN_POINTS:
        raise DimensionError(f"need at least {MIN_POINTS} control points, got {n}")
    dist = np.sqrt(np.sum((src[:, None, :] - src[None, :, :]) ** 2, axis=-1))
    dist[np.diag_indices(n)] = np.inf
    if dist.min() <= MIN_SEPARATION:
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        raise NumericalError(f"control points {i} and {j} coincide")
    if np.linalg.matrix_rank(system.p) < 4:
        raise NumericalError("control points are coplanar; the TPS system is singular")
    if np.array_equal(system.y[:n], src):
        return identity_warp(src)
    cond = np.linalg.cond(system.m)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(f"TPS system condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    # LAPACK gesv: LU with partial pivoting, fine for the symmetric-indefinite M
    sol = np.linalg.solve(system.m, system.y)
    return TpsWarp(
        control_points=src,
        a0=sol[n].copy(),
        a1=sol[n + 1:].T.copy(),
        weights=sol[:n].copy(),
    )


def warp_points(warp, points):
    """Evaluate the warp at an ``(M, 3)`` array (or a single 3-vector)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    a1 = warp.a1
    # elementwise sums keep results independent of batch size
    out = np.empty_like(pts)
    for r in range(3):
        out[:, r] = warp.a0[r] + a1[r, 0] * pts[:, 0] + a1[r, 1] * pts[:, 1] + a1[r, 2] * pts[:, 2]
    if np.any(warp.weights):
        for l_i, w_i in zip(warp.control_points, warp.weights):
            dx = pts[:, 0] - l_i[0]
            dy = pts[:, 1] - l_i[1]
            dz = pts[:, 2] - l_i[2]
            u = _kernel(np.sqrt(dx * dx + dy * dy + dz * dz))
            out[:, 0] += w_i[0] * u
            out[:, 1] += w_i[1] * u
            out[:, 2] += w_i[2] * u
    return out[0] if single else out


def warp_point(warp, x):
    return warp_points(warp, np.asarray(x, dtype=np.float64).reshape(3))


def warp_sample(field, warp, box, res, threshold=20.0, encode=False, workers=1):
    """Pull-back resampling: voxel at world position ``x`` stores ``field(warp(x))``.

    ``warp`` should map target landmarks to source landmarks, so the returned
    volume shows the target expression.
    """
    from .sampling import sample_volume

    position_map = None if warp.is_identity else warp
    return sample_volume(field, box, res, threshold=threshold, encode=encode,
                         workers=workers, position_map=position_map)


def save_warp(warp, path):
    Path(path).write_text(json.dumps(warp.to_dict()) + "\n", encoding="utf-8")


def load_warp(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read warp file: {exc}", path) from exc
    try:
        return TpsWarp.from_dict(d)
    except FormatError as exc:
        raise FormatError(str(exc), path) from exc
