"""Batch augmentation: warp-sample one feature volume per expression, with
optional random pose/scale augmentation, and write a manifest.
"""
import hashlib
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .landmarks import save_landmarks
from .sampling import OrientedBox, apply_augment, random_augment, sample_volume, volume_bytes
from .tps import fit_tps


def atomic_write(path, data):
    """Write bytes via a temporary sibling file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def item_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def augment_item(field, source, target, box, res, threshold=20.0, encode=False,
                 augment_seed=None):
    """Volume showing ``target`` expression plus its ground-truth landmarks.

    The warp maps target landmarks onto source landmarks, so sampling the
    source field at warped positions reproduces the target face.  With
    ``augment_seed`` the box is also moved by a random scale/rotation/shift
    and the landmarks are expressed in the unaugmented box frame.
    """
    warp = fit_tps(target, source)
    aug = None
    gt = np.array(target, dtype=np.float64)
    if augment_seed is not None:
        aug = random_augment(augment_seed)
        box = apply_augment(aug, box)
        gt = aug.inverse(gt)
    position_map = None if warp.is_identity else warp
    volume = sample_volume(field, box, res, threshold=threshold, encode=encode,
                           position_map=position_map)
    return volume, gt, aug


def run_augment(field, source, expressions, out_dir, res=32, threshold=20.0, encode=False,
                seed=0, mode="expression", workers=1, box=None):
    """Process every expression, write item files, then ``manifest.json``."""
    if mode not in ("expression", "coarse"):
        raise ValueError(f"unknown augment mode {mode!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    box = box or OrientedBox(np.zeros(3))

    def work(index):
        name = expressions.names[index]
        s = item_seed(seed, index)
        volume, gt, aug = augment_item(
            field, source, expressions.landmarks[index], box, res, threshold, encode,
            augment_seed=s if mode == "coarse" else None)
        vol_path = out_dir / f"{index:04d}_{name}.flnv"
        lm_path = out_dir / f"{index:04d}_{name}.json"
        atomic_write(vol_path, volume_bytes(volume))
        atomic_write(lm_path, (json.dumps(gt.tolist()) + "\n").encode())
        return {
            "index": index,
            "name": name,
            "seed": s,
            "volume": vol_path.name,
            "landmarks": lm_path.name,
            "volume_sha256": sha256(vol_path),
            "landmarks_sha256": sha256(lm_path),
            "box": volume.box.to_dict(),
            "augment": None if aug is None else aug.to_dict(),
        }

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        items = list(pool.map(work, range(len(expressions))))
    manifest = {
        "seed": seed,
        "mode": mode,
        "resolution": res,
        "threshold": threshold,
        "encode": encode,
        "count": len(items),
        "items": items,
    }
    atomic_write(out_dir / "manifest.json", (json.dumps(manifest, indent=1) + "\n").encode())
    return manifest
