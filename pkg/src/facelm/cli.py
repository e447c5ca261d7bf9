"""Command line front end.

Every subcommand accepts ``--config FILE`` (JSON); explicit flags override
config values, and relative paths in the config resolve against the config
file's directory.  Exit codes: 0 success, 2 usage, 3 format, 4 numerical.
"""
import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import report
from .errors import DimensionError, FormatError, NumericalError
from .expressions import (ExpressionSet, base_expressions, base_weights, interpolate_expressions,
                          load_expressions, save_expressions)
from .face_model import load_core, save_core, synth_core
from .fields import bake_to_grid, load_grid, make_synthetic_head, save_grid
from .fitting import FitProblem, WingParams, evaluate, fit_landmarks
from .landmarks import as_landmarks, load_landmarks, save_landmarks
from .pipeline import atomic_write, run_augment
from .sampling import (BoxConstants, OrientedBox, export_ply, load_volume, sample_volume,
                       save_volume)
from .tps import fit_tps, save_warp, warp_sample
from .triangulation import load_cameras, triangulate_landmarks

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERICAL = 0, 2, 3, 4

DEFAULTS = {
    "seed": 0,
    "n_exp": 52,
    "n_id": 50,
    "base_count": 20,
    "expression_count": 110,
    "resolution": 64,
    "augment_resolution": 32,
    "grid_resolution": 64,
    "threshold": 20.0,
    "encoding_freqs": 4,
    "encode": False,
    "omega": 10.0,
    "epsilon": 2.0,
    "box": {"face": 0.9, "eye": 0.35, "mouth": 0.42, "enlarge": 1.15},
    "workers": 1,
    "mode": "expression",
    "paths": {
        "out": ".",
        "core": "core.flnc",
        "field": "head.flnv",
        "landmarks": "landmarks",
        "expressions": "expressions.json",
        "augment": "augment",
    },
}

PATH_KEYS = tuple(DEFAULTS["paths"])


class Config:
    def __init__(self, values, base_dir):
        self.values = values
        self.base_dir = Path(base_dir)

    def get(self, key, override=None):
        return self.values[key] if override is None else override

    def path(self, key, override=None):
        if override is not None:
            return Path(override)
        p = Path(self.values["paths"][key])
        if key != "out" and not p.is_absolute():
            return self.path("out") / p
        return p if p.is_absolute() else self.base_dir / p


def load_config(path):
    values = json.loads(json.dumps(DEFAULTS))
    if path is None:
        return Config(values, Path.cwd())
    path = Path(path)
    try:
        user = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read config: {exc}", path) from exc
    if not isinstance(user, dict):
        raise FormatError("config must be a JSON object", path)
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}", path)
    for key, val in user.items():
        if isinstance(DEFAULTS[key], dict):
            if not isinstance(val, dict) or set(val) - set(DEFAULTS[key]):
                raise FormatError(f"config section {key!r} has unknown entries", path)
            values[key].update(val)
        else:
            values[key] = val
    return Config(values, path.parent)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read JSON: {exc}", path) from exc


def _write_json(obj, path):
    atomic_write(path, (json.dumps(obj, indent=1) + "\n").encode())


def _emit(obj, out):
    if out is None:
        print(json.dumps(obj, indent=1))
    else:
        _write_json(obj, out)


def _wing(cfg, args):
    return WingParams(cfg.get("omega", args.omega), cfg.get("epsilon", args.epsilon))


def _box(args):
    return OrientedBox(np.array(args.center, dtype=float), np.eye(3), args.half_extent)


def cmd_synth(args, cfg):
    seed = cfg.get("seed", args.seed)
    out = cfg.path("out", args.out)
    out.mkdir(parents=True, exist_ok=True)
    core = synth_core(seed, cfg.get("n_exp", args.n_exp), cfg.get("n_id", args.n_id))
    count = cfg.get("base_count")
    w_id, exps = base_weights(core, seed, count)
    base = base_expressions(core, seed, count)
    lm_dir = cfg.path("landmarks") if args.out is None else out / "landmarks"
    lm_dir.mkdir(parents=True, exist_ok=True)
    core_path = cfg.path("core") if args.out is None else out / "core.flnc"
    save_core(core, core_path)
    files = []
    for name, lm in zip(base.names, base.landmarks):
        save_landmarks(lm, lm_dir / f"{name}.json")
        files.append(os.path.relpath(lm_dir / f"{name}.json", out))
    head = make_synthetic_head(base.landmarks[0], seed)
    n = cfg.get("grid_resolution", args.grid_resolution)
    grid = bake_to_grid(head, (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), (n, n, n),
                        workers=cfg.get("workers", args.workers))
    field_path = cfg.path("field") if args.out is None else out / "head.flnv"
    save_grid(grid, field_path)
    summary = {
        "seed": seed,
        "core": os.path.relpath(core_path, out),
        "field": os.path.relpath(field_path, out),
        "landmarks": files,
        "w_id": w_id.tolist(),
        "w_exp": [w.tolist() for w in exps],
    }
    _write_json(summary, out / "synth.json")
    print(json.dumps({"core": summary["core"], "field": summary["field"], "landmarks": len(files)}))
    return EXIT_OK


def _base_set(paths):
    files = []
    for p in paths:
        p = Path(p)
        files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not files:
        raise FormatError("no base landmark files found")
    return ExpressionSet([f.stem for f in files], [load_landmarks(f) for f in files])


def cmd_interpolate(args, cfg):
    base = _base_set(args.base or [cfg.path("landmarks")])
    out = interpolate_expressions(base, cfg.get("expression_count", args.count), cfg.get("seed", args.seed))
    path = cfg.path("expressions", args.out)
    save_expressions(out, path)
    print(json.dumps({"expressions": len(out), "base": len(base), "out": str(path)}))
    return EXIT_OK


def cmd_augment(args, cfg):
    field = load_grid(cfg.path("field", args.field))
    source = load_landmarks(args.source) if args.source else \
        load_landmarks(cfg.path("landmarks") / "base_00.json")
    exprs = load_expressions(cfg.path("expressions", args.expressions))
    manifest = run_augment(
        field, source, exprs, cfg.path("augment", args.out_dir),
        res=cfg.get("augment_resolution", args.res),
        threshold=cfg.get("threshold", args.threshold),
        encode=cfg.get("encode", args.encode or None),
        seed=cfg.get("seed", args.seed),
        mode=cfg.get("mode", args.mode),
        workers=cfg.get("workers", args.workers),
    )
    print(json.dumps({"items": manifest["count"], "mode": manifest["mode"]}))
    return EXIT_OK


def _sample_outputs(volume, args):
    save_volume(volume, args.out)
    if args.plot:
        report.plot_volume_slices(volume, args.plot)
    print(json.dumps({"out": str(args.out), "occupied_fraction": float(volume.occupied().mean())}))


def cmd_sample(args, cfg):
    field = load_grid(cfg.path("field", args.field))
    volume = sample_volume(field, _box(args), cfg.get("resolution", args.res),
                           threshold=cfg.get("threshold", args.threshold),
                           encode=cfg.get("encode", args.encode or None),
                           workers=cfg.get("workers", args.workers))
    _sample_outputs(volume, args)
    return EXIT_OK


def cmd_warp(args, cfg):
    field = load_grid(cfg.path("field", args.field))
    source, target = load_landmarks(args.source), load_landmarks(args.target)
    warp = fit_tps(target, source)
    if args.warp_out:
        save_warp(warp, args.warp_out)
    volume = warp_sample(field, warp, _box(args), cfg.get("resolution", args.res),
                         threshold=cfg.get("threshold", args.threshold),
                         encode=cfg.get("encode", args.encode or None),
                         workers=cfg.get("workers", args.workers))
    _sample_outputs(volume, args)
    return EXIT_OK


def _init_from_report(path):
    d = _read_json(path)
    try:
        return np.asarray(d["w_id"], float), np.asarray(d["w_exp"], float), np.asarray(d["transform"], float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"init report lacks parameters: {exc}", path) from exc


def cmd_fit(args, cfg):
    core = load_core(cfg.path("core", args.core))
    observed = load_landmarks(args.observed)
    init = _init_from_report(args.init) if args.init else (None, None, None)
    prob = FitProblem(core, observed, *init, wing=_wing(cfg, args), max_iter=args.max_iter)
    result = fit_landmarks(prob)
    rep = result.to_dict()
    rep["rmse"] = float(np.sqrt(np.mean((result.landmarks - observed) ** 2)))
    _emit(rep, args.out)
    if args.plot:
        report.plot_loss_trace(result.trace, args.plot)
    if args.landmark_plot:
        report.plot_landmarks(args.landmark_plot, result.landmarks, observed)
    return EXIT_OK


def cmd_triangulate(args, cfg):
    cams = load_cameras(args.cameras)
    raw = _read_json(args.observations)
    try:
        obs = np.array([[[np.nan, np.nan] if v is None else v for v in per] for per in raw], dtype=float)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"observations must be [point][camera] -> [u, v] or null: {exc}",
                          args.observations) from exc
    results = triangulate_landmarks(cams, obs)
    rep = {
        "points": [r.point.tolist() for r in results],
        "reprojection_rms": [r.reprojection_rms for r in results],
    }
    if args.gt:
        gt = np.asarray(_read_json(args.gt), dtype=float)
        err = np.linalg.norm(np.array(rep["points"]) - gt, axis=1)
        rep["max_error"] = float(err.max())
        rep["mean_error"] = float(err.mean())
    _emit(rep, args.out)
    return EXIT_OK


def _load_prediction(path):
    # plain landmark file, or a fit / triangulate report
    data = _read_json(path)
    if isinstance(data, dict):
        data = data.get("landmarks", data.get("points"))
    try:
        return as_landmarks(data)
    except (DimensionError, ValueError, TypeError) as exc:
        raise FormatError(f"no 68 [x, y, z] landmarks found: {exc}", path) from exc


def cmd_eval(args, cfg):
    pred, gt = _load_prediction(args.pred), load_landmarks(args.gt)
    metrics = evaluate(pred, gt, _wing(cfg, args))
    _emit(metrics, args.out)
    if args.csv:
        report.write_csv([{"region": k, "wing_loss": repr(v)} for k, v in metrics.items()], args.csv)
    if args.plot:
        report.plot_region_metrics(metrics, args.plot)
    if args.landmark_plot:
        report.plot_landmarks(args.landmark_plot, pred, gt)
    return EXIT_OK


def cmd_export_ply(args, cfg):
    export_ply(load_volume(args.volume), args.out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="facelm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="JSON config file")
        p.set_defaults(func=func)
        return p

    def sampling_flags(p):
        p.add_argument("--res", type=int, help="volume resolution per axis (default: 64)")
        p.add_argument("--threshold", type=float, help="density threshold (default: 20)")
        p.add_argument("--encode", action="store_true",
                       help="append 27 position-encoding channels, L=4 frequencies (default: off)")
        p.add_argument("--workers", type=int, help="worker threads (default: 1)")
        p.add_argument("--center", type=float, nargs=3, default=(0.0, 0.0, 0.0), help="box centre (default: 0 0 0)")
        p.add_argument("--half-extent", type=float, default=1.0, help="box half side (default: 1)")
        p.add_argument("--field", help="voxel grid field file (default: config paths.field)")
        p.add_argument("--out", required=True, help="output FLNV volume")
        p.add_argument("--plot", help="write a PNG of the central slices")

    def wing_flags(p):
        p.add_argument("--omega", type=float, help="wing loss omega (default: 10)")
        p.add_argument("--epsilon", type=float, help="wing loss epsilon (default: 2)")

    p = add("synth", cmd_synth, "write a synthetic core, base landmark sets and a head field grid")
    p.add_argument("--seed", type=int, help="random seed (default: 0)")
    p.add_argument("--n-exp", type=int, help="expression dimension (default: 52)")
    p.add_argument("--n-id", type=int, help="identity dimension (default: 50)")
    p.add_argument("--grid-resolution", type=int, help="head grid nodes per axis (default: 64)")
    p.add_argument("--workers", type=int, help="worker threads (default: 1)")
    p.add_argument("--out", help="output directory (default: config paths.out)")

    p = add("interpolate", cmd_interpolate, "extend base expressions with random convex pairs")
    p.add_argument("--base", nargs="*", help="base landmark files or directories")
    p.add_argument("--count", type=int, help="total expressions (default: 110)")
    p.add_argument("--seed", type=int, help="random seed (default: 0)")
    p.add_argument("--out", help="expression set JSON")

    p = add("augment", cmd_augment, "warp-sample one volume per expression and write a manifest")
    p.add_argument("--field", help="voxel grid field file")
    p.add_argument("--source", help="landmarks of the field's face (default: base_00)")
    p.add_argument("--expressions", help="expression set JSON")
    p.add_argument("--res", type=int, help="volume resolution (default: 32 for batches; 64 is the full setting)")
    p.add_argument("--threshold", type=float, help="density threshold (default: 20)")
    p.add_argument("--encode", action="store_true", help="append position-encoding channels, L=4")
    p.add_argument("--mode", choices=("expression", "coarse"), help="coarse adds random pose/scale (default: expression)")
    p.add_argument("--seed", type=int, help="random seed (default: 0)")
    p.add_argument("--workers", type=int, help="worker threads (default: 1)")
    p.add_argument("--out-dir", help="output directory")

    p = add("sample", cmd_sample, "sample a field over an axis-aligned cubic box")
    sampling_flags(p)

    p = add("warp", cmd_warp, "TPS-warp sample a field from source to target landmarks")
    sampling_flags(p)
    p.add_argument("--source", required=True, help="landmarks of the field's face")
    p.add_argument("--target", required=True, help="landmarks of the wanted expression")
    p.add_argument("--warp-out", help="write the fitted warp as JSON")

    p = add("fit", cmd_fit, "fit bilinear weights and a 3x4 transform to observed landmarks")
    p.add_argument("--core", help="FLNC core file")
    p.add_argument("--observed", required=True, help="observed landmark JSON")
    p.add_argument("--init", help="previous fit report to start from")
    p.add_argument("--max-iter", type=int, default=200, help="iteration cap (default: 200)")
    wing_flags(p)
    p.add_argument("--out", help="fit report JSON (default: stdout)")
    p.add_argument("--plot", help="PNG of the loss trace")
    p.add_argument("--landmark-plot", help="PNG of fitted vs observed landmarks")

    p = add("triangulate", cmd_triangulate, "DLT triangulation of multi-view 2D landmarks")
    p.add_argument("--cameras", required=True, help="JSON list of 3x4 camera matrices")
    p.add_argument("--observations", required=True, help="JSON [point][camera] -> [u, v] or null")
    p.add_argument("--gt", help="reference 3D points for error statistics")
    p.add_argument("--out", help="output JSON (default: stdout)")

    p = add("eval", cmd_eval, "region-wise mean wing loss between two landmark sets")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    wing_flags(p)
    p.add_argument("--out", help="metrics JSON (default: stdout)")
    p.add_argument("--csv", help="metrics as CSV")
    p.add_argument("--plot", help="PNG bar chart of the metrics")
    p.add_argument("--landmark-plot", help="PNG of predicted vs reference landmarks")

    p = add("export-ply", cmd_export_ply, "export occupied voxels of a volume as ASCII PLY")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    return parser


def _fail(kind, code, exc):
    err = {"error": kind, "message": str(exc)}
    path = getattr(exc, "path", None) or getattr(exc, "filename", None)
    if path is not None:
        err["path"] = str(path)
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except NumericalError as exc:
        return _fail("numerical", EXIT_NUMERICAL, exc)
    except (FormatError, DimensionError) as exc:
        return _fail("format", EXIT_FORMAT, exc)
    except OSError as exc:
        return _fail("io", EXIT_USAGE, exc)
    except ValueError as exc:
        return _fail("usage", EXIT_USAGE, exc)


if __name__ == "__main__":
    sys.exit(main())
