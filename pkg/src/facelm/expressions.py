"""Named sets of expression landmarks and random-pair interpolation.

The interpolated members stand in for rig-driven blendshape interpolation:
each new member is a convex combination of two base members.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError
from .face_model import generate_landmarks
from .landmarks import as_landmarks

DEFAULT_BASE_COUNT = 20
DEFAULT_EXPRESSION_COUNT = 110


@dataclass
class ExpressionSet:
    names: list
    landmarks: list
    # per member: None for base members, else {"a", "b", "lambda"}
    sources: list = field(default=None)

    def __post_init__(self):
        self.landmarks = [as_landmarks(lm) for lm in self.landmarks]
        if len(self.names) != len(self.landmarks):
            raise DimensionError("expression names and landmarks differ in length")
        if self.sources is None:
            self.sources = [None] * len(self.names)

    def __len__(self):
        return len(self.names)

    def to_dict(self):
        return {"expressions": [
            {"name": n, "landmarks": lm.tolist(), "source": s}
            for n, lm, s in zip(self.names, self.landmarks, self.sources)
        ]}

    @classmethod
    def from_dict(cls, d):
        try:
            items = d["expressions"]
            return cls([it["name"] for it in items], [it["landmarks"] for it in items],
                       [it.get("source") for it in items])
        except (KeyError, TypeError, DimensionError, ValueError) as exc:
            raise FormatError(f"malformed expression set: {exc}") from exc


def save_expressions(expr, path):
    Path(path).write_text(json.dumps(expr.to_dict()) + "\n", encoding="utf-8")


def load_expressions(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read expression set: {exc}", path) from exc
    try:
        return ExpressionSet.from_dict(d)
    except FormatError as exc:
        raise FormatError(str(exc), path) from exc


def base_weights(core, seed, count=DEFAULT_BASE_COUNT):
    """Identity weights and ``count`` expression weight vectors.

    Member 0 is neutral; members 1-3 open the mouth by decreasing amounts
    (when the core has an expression slot for it); the rest blend the neutral
    slot with one random expression slot.
    """
    rng = np.random.default_rng(seed)
    w_id = rng.dirichlet(np.ones(core.n_id))
    eye = np.eye(core.n_exp)
    exps = [eye[0]]
    for k in range(1, count):
        if core.n_exp == 1:
            exps.append(eye[0])
            continue
        if k <= 3:
            j, s = 1, (1.0, 0.6, 0.3)[k - 1]
        else:
            j, s = int(rng.integers(1, core.n_exp)), float(rng.uniform(0.4, 1.0))
        exps.append((1.0 - s) * eye[0] + s * eye[j])
    return w_id, exps


def base_expressions(core, seed, count=DEFAULT_BASE_COUNT):
    w_id, exps = base_weights(core, seed, count)
    names = [f"base_{k:02d}" for k in range(count)]
    return ExpressionSet(names, [generate_landmarks(core, w_id, w) for w in exps])


def interpolate_expressions(base, count, seed):
    """Base members followed by ``count - len(base)`` random convex pairs."""
    n = len(base)
    if count < n:
        raise ValueError(f"count {count} is smaller than the base set ({n})")
    if count == n:
        return ExpressionSet(list(base.names), list(base.landmarks), list(base.sources))
    if n < 2:
        raise ValueError("interpolation needs at least two base expressions")
    rng = np.random.default_rng(seed)
    names, lms, sources = list(base.names), list(base.landmarks), list(base.sources)
    for k in range(count - n):
        a, b = rng.choice(n, size=2, replace=False)
        lam = rng.uniform(0.0, 1.0)
        while lam == 0.0:
            lam = rng.uniform(0.0, 1.0)
        names.append(f"interp_{k:03d}")
        lms.append(blend(base.landmarks[a], base.landmarks[b], lam))
        sources.append({"a": base.names[a], "b": base.names[b], "lambda": float(lam)})
    return ExpressionSet(names, lms, sources)


def blend(a, b, lam):
    """``lam * a + (1 - lam) * b``."""
    return lam * np.asarray(a) + (1.0 - lam) * np.asarray(b)
