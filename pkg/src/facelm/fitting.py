"""Wing loss and direct fitting of bilinear-model parameters plus a 3x4
alignment to observed 3D landmarks.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError
from .face_model import as_transform, contract, identity_transform
from .landmarks import N_LANDMARKS, REGIONS, as_landmarks


@dataclass(frozen=True)
class WingParams:
    omega: float = 10.0
    epsilon: float = 2.0

    def __post_init__(self):
        if not (self.omega > 0 and self.epsilon > 0):
            raise ValueError("wing omega and epsilon must be positive")

    @property
    def c(self):
        return self.omega - self.omega * math.log1p(self.omega / self.epsilon)


def wing_values(d, p=WingParams()):
    """Per-coordinate wing value of absolute differences ``d``."""
    d = np.abs(np.asarray(d, dtype=np.float64))
    return np.where(d < p.omega, p.omega * np.log1p(d / p.epsilon), d - p.c)


def wing_derivative(r, p=WingParams()):
    """d wing(|r|) / d r, with subgradient 0 at r = 0."""
    r = np.asarray(r, dtype=np.float64)
    d = np.abs(r)
    slope = np.where(d < p.omega, p.omega / (p.epsilon + d), 1.0)
    return np.sign(r) * slope


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    if pred.shape != gt.shape:
        raise DimensionError(f"pred has {pred.size} entries, gt has {gt.size}")
    return pred, gt


def wing_loss(pred, gt, p=WingParams()):
    """Mean wing value over all coordinates."""
    pred, gt = _pair(pred, gt)
    return float(np.mean(wing_values(pred - gt, p)))


def wing_gradient(pred, gt, p=WingParams()):
    pred, gt = _pair(pred, gt)
    return wing_derivative(pred - gt, p) / pred.size


def evaluate(pred, gt, p=WingParams()):
    """Mean wing loss over the whole face and the mouth, eye and nose regions."""
    pred, gt = as_landmarks(pred), as_landmarks(gt)
    regions = {
        "face": REGIONS["face"],
        "mouth": REGIONS["mouth"],
        "eyes": REGIONS["left_eye"] + REGIONS["right_eye"],
        "nose": REGIONS["nose"],
    }
    return {name: wing_loss(pred[list(idx)], gt[list(idx)], p) for name, idx in regions.items()}


def pack(w_id, w_exp, transform):
    return np.concatenate([np.ravel(w_id), np.ravel(w_exp), np.ravel(transform)])


def unpack(theta, n_id, n_exp):
    return theta[:n_id], theta[n_id:n_id + n_exp], theta[n_id + n_exp:].reshape(3, 4)


def model_landmarks(core, theta):
    """Flat 204-vector of aligned landmarks for packed parameters."""
    w_id, w_exp, p = unpack(theta, core.n_id, core.n_exp)
    v = contract(core, w_id, w_exp).reshape(N_LANDMARKS, 3)
    return (v @ p[:, :3].T + p[:, 3]).reshape(-1)


def model_jacobian(core, theta):
    """Jacobian ``(204, n_id + n_exp + 12)`` of :func:`model_landmarks`."""
    n_id, n_exp = core.n_id, core.n_exp
    w_id, w_exp, p = unpack(theta, n_id, n_exp)
    a = p[:, :3]
    by_exp = np.tensordot(core.data, w_exp, axes=([1], [0]))  # (204, n_id)
    by_id = np.tensordot(core.data, w_id, axes=([2], [0]))  # (204, n_exp)
    v = (by_exp @ w_id).reshape(N_LANDMARKS, 3)
    jac = np.zeros((N_LANDMARKS, 3, n_id + n_exp + 12))
    jac[:, :, :n_id] = np.einsum("rc,lck->lrk", a, by_exp.reshape(N_LANDMARKS, 3, n_id))
    jac[:, :, n_id:n_id + n_exp] = np.einsum("rc,lck->lrk", a, by_id.reshape(N_LANDMARKS, 3, n_exp))
    base = n_id + n_exp
    for r in range(3):
        jac[:, r, base + 4 * r:base + 4 * r + 3] = v
        jac[:, r, base + 4 * r + 3] = 1.0
    return jac.reshape(3 * N_LANDMARKS, -1)


@dataclass
class FitProblem:
    core: object
    observed: np.ndarray
    init_id: Optional[np.ndarray] = None
    init_exp: Optional[np.ndarray] = None
    init_transform: Optional[np.ndarray] = None
    wing: WingParams = field(default_factory=WingParams)
    max_iter: int = 200
    gtol: float = 1e-9
    xtol: float = 1e-12
    ftol: float = 1e-14

    def initial_theta(self):
        n_id, n_exp = self.core.n_id, self.core.n_exp
        w_id = np.eye(n_id)[0] if self.init_id is None else np.asarray(self.init_id, dtype=np.float64)
        w_exp = np.eye(n_exp)[0] if self.init_exp is None else np.asarray(self.init_exp, dtype=np.float64)
        p = identity_transform() if self.init_transform is None else as_transform(self.init_transform)
        if w_id.shape != (n_id,) or w_exp.shape != (n_exp,):
            raise DimensionError("initial weights do not match the core dimensions")
        if abs(np.linalg.det(p[:, :3])) < 1e-12:
            raise DimensionError("initial transform must be nonsingular")
        return pack(w_id, w_exp, p)


@dataclass
class FitResult:
    w_id: np.ndarray
    w_exp: np.ndarray
    transform: np.ndarray
    landmarks: np.ndarray
    loss: float
    trace: list
    iterations: int
    converged: bool
    reason: str

    def to_dict(self):
        return {
            "w_id": self.w_id.tolist(),
            "w_exp": self.w_exp.tolist(),
            "transform": self.transform.tolist(),
            "landmarks": self.landmarks.tolist(),
            "loss": self.loss,
            "loss_trace": list(self.trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "reason": self.reason,
        }


MAX_DAMPING = 1e8


def _damped_step(jac, resid, weights, lam):
    jw = jac * weights[:, None]
    h = jac.T @ jw
    g = jw.T @ resid
    diag = np.diag(h).copy()
    floor = 1e-12 * max(diag.max(), 1e-300)
    h[np.diag_indices_from(h)] += lam * np.maximum(diag, floor)
    try:
        return -np.linalg.solve(h, g)
    except np.linalg.LinAlgError:
        return None


def fit_landmarks(prob):
    """Minimize the mean wing loss between model landmarks and ``prob.observed``.

    Each iteration tries two Levenberg-damped Gauss-Newton steps, one on the
    plain residuals and one reweighted by the wing derivative (IRLS), and
    keeps the better one if it lowers the loss; otherwise damping grows.
    Above ``MAX_DAMPING`` a backtracking gradient step is tried instead.
    """
    core, wp = prob.core, prob.wing
    obs = as_landmarks(prob.observed).reshape(-1)
    theta = prob.initial_theta()

    def loss_of(th):
        return wing_loss(model_landmarks(core, th), obs, wp)

    loss = loss_of(theta)
    trace = [loss]
    lam = 1e-3
    converged, reason = False, "max_iter"
    it = 0
    for it in range(1, prob.max_iter + 1):
        if loss <= prob.ftol:
            converged, reason = True, "ftol"
            it -= 1
            break
        resid = model_landmarks(core, theta) - obs
        jac = model_jacobian(core, theta)
        grad = jac.T @ wing_derivative(resid, wp) / resid.size
        if np.abs(grad).max() < prob.gtol:
            converged, reason = True, "gtol"
            it -= 1
            break
        d = np.abs(resid)
        irls = wing_derivative(d, wp) / np.maximum(d, 1e-12 * max(d.max(), 1e-300))
        irls = irls / irls.max()
        accepted = None
        while lam <= MAX_DAMPING:
            best = None
            for weights in (np.ones_like(resid), irls):
                step = _damped_step(jac, resid, weights, lam)
                if step is None or not np.all(np.isfinite(step)):
                    continue
                trial = loss_of(theta + step)
                if best is None or trial < best[0]:
                    best = (trial, step)
            if best is not None and best[0] < loss:
                accepted = best
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if accepted is None:
            # gradient fallback with backtracking
            t = 1.0 / max(np.abs(grad).max(), 1e-300)
            for _ in range(60):
                step = -t * grad
                trial = loss_of(theta + step)
                if trial < loss:
                    accepted = (trial, step)
                    break
                t *= 0.5
            lam = 1e-3
        if accepted is None:
            converged, reason = True, "stalled"
            it -= 1
            break
        new_loss, step = accepted
        theta = theta + step
        loss = new_loss
        trace.append(loss)
        if np.linalg.norm(step) < prob.xtol:
            converged, reason = True, "xtol"
            break
    else:
        converged = loss <= prob.ftol
        reason = "ftol" if converged else "max_iter"

    w_id, w_exp, p = unpack(theta, core.n_id, core.n_exp)
    return FitResult(
        w_id=w_id.copy(), w_exp=w_exp.copy(), transform=p.copy(),
        landmarks=model_landmarks(core, theta).reshape(N_LANDMARKS, 3),
        loss=loss, trace=trace, iterations=it, converged=converged, reason=reason,
    )
