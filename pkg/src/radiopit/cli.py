"""Command-line entry point.

Exit codes: 0 success, 2 bad input (parse, validation, config, file format),
3 numeric divergence.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kriging
from .config import load_run_config
from .errors import NumericError, RadioPitError
from .evaluate import EvalReport, compare, evaluate_method, format_comparison, scene_sample
from .grid import BuildingMap, GeoExtent, NormRange, RadioMap, avg_pool, crop, pool_points
from .ingest import (Band, Scene, SkippedFeatureWarning, assemble_scene, parse_buildings,
                     parse_measurements, read_scene, write_scene)
from .pit import (PiTConfig, TtaConfig, init_weights, load_weights, predict_dense, pretrain,
                  save_weights)
from .synth import SynthConfig, generate_map, read_dense_map, sample_scene, write_dense_map

log = logging.getLogger("radiopit")

# (config section, key) -> argparse dest
CONFIG_FLAGS = {
    ("pit", "d_model"): "d_model", ("pit", "n_heads"): "heads", ("pit", "d_ff"): "d_ff",
    ("pit", "n_fourier"): "n_fourier", ("pit", "decode_chunk"): "decode_chunk",
    ("synth", "n_buildings"): "n_buildings", ("synth", "p0"): "p0", ("synth", "n_exp"): "n_exp",
    ("synth", "wall_loss"): "wall_loss", ("synth", "shadow_sigma"): "shadow_sigma",
    ("synth", "k_d"): "k_d",
    ("tta", "lr"): "tta_lr", ("tta", "optimizer"): "tta_optimizer",
    ("tta", "steps_per_sample"): "tta_steps",
    ("norm", "lo_dbm"): "norm_lo", ("norm", "hi_dbm"): "norm_hi",
    ("experiment", "epochs"): "epochs", ("experiment", "batch"): "batch",
    ("experiment", "lr"): "lr", ("experiment", "weight_decay"): "weight_decay",
    ("experiment", "known"): "known", ("experiment", "query"): "query",
    ("experiment", "count"): "count", ("experiment", "points"): "points",
    ("experiment", "seed"): "seed",
}


class CliError(RadioPitError):
    pass


def _floats(text, n, what):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what}: expected {n} comma-separated numbers") from None
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"{what}: expected {n} comma-separated numbers")
    return vals


def _extent(text):
    return _floats(text, 4, "extent")


def _pair(text):
    return _floats(text, 2, "pair")


def _size(text):
    vals = [int(x) for x in text.split(",")]
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError("size: expected H,W (or a single N for NxN)")
    return vals


def _read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def _scene_list(directory, order_file=None):
    root = Path(directory)
    if not root.is_dir():
        raise CliError(f"scene directory {directory} does not exist")
    if order_file:
        names = [ln.strip() for ln in _read_text(order_file).splitlines() if ln.strip()]
    else:
        names = sorted(p.name for p in root.glob("*.rmsc"))
    return [(name, read_scene(root / name)) for name in names]


def _pit_config(args) -> PiTConfig:
    return PiTConfig(d_model=args.d_model, n_heads=args.heads, d_ff=args.d_ff,
                     n_fourier=args.n_fourier, decode_chunk=args.decode_chunk)


# ---------------------------------------------------------------- subcommands

def cmd_ingest(args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SkippedFeatureWarning)
        polygons = parse_buildings(_read_text(args.buildings), source=args.buildings)
    skipped = sum(issubclass(w.category, SkippedFeatureWarning) for w in caught)
    measurements = parse_measurements(_read_text(args.measurements), source=args.measurements)
    lat0, lat1, lon0, lon1 = args.extent
    extent = GeoExtent(lat0, lat1, lon0, lon1)
    h, w = args.size
    scene = assemble_scene(polygons, measurements, extent, Band(*args.band),
                           NormRange(args.norm_lo, args.norm_hi), h, w, args.averaging)
    collisions = len(measurements) - len(scene.points)
    if args.pool > 1:
        scene = Scene(avg_pool(scene.buildings, args.pool), extent, scene.band, scene.norm,
                      pool_points(scene.points, args.pool))
    if args.crop:
        hh, ww = scene.shape
        rng = np.random.default_rng(args.seed)
        if args.crop > min(hh, ww):
            raise CliError(f"crop size {args.crop} exceeds map {hh}x{ww}")
        origin = (int(rng.integers(0, hh - args.crop + 1)), int(rng.integers(0, ww - args.crop + 1)))
        b, _, pts = crop(scene.buildings, None, origin, args.crop, scene.points)
        scene = Scene(b, extent, scene.band, scene.norm, pts)
    write_scene(scene, args.out)
    print(f"points: {len(scene.points)} collisions: {collisions} skipped features: {skipped}")


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h, w = args.size
    base = SynthConfig(h=h, w=w, n_buildings=args.n_buildings, p0=args.p0, n_exp=args.n_exp,
                       wall_loss=args.wall_loss, shadow_sigma=args.shadow_sigma, k_d=args.k_d)
    band = Band(*args.band)
    for i in range(args.count):
        seed = args.seed + i
        radio, buildings, _ = generate_map(replace(base, seed=seed))
        write_dense_map(radio, out / f"map_{i:04d}.rmap")
        if args.points:
            scene = sample_scene(radio, buildings, args.points, seed, band,
                                 NormRange(args.norm_lo, args.norm_hi))
            write_scene(scene, out / f"scene_{i:04d}.rmsc")
    print(f"wrote {args.count} maps to {out}")


def cmd_pretrain(args):
    cfg = _pit_config(args)
    params = init_weights(cfg, args.seed)
    if args.init:
        params, cfg = load_weights(args.init)
    history = []
    if not args.init_only:
        files = sorted(Path(args.data).glob("*.rmap")) if args.data else []
        if not files:
            raise CliError(f"no .rmap files found in {args.data}")
        dataset = [read_dense_map(f) for f in files]
        params, history = pretrain(params, cfg, dataset, args.epochs, args.batch, args.lr,
                                   args.weight_decay, args.seed, args.known, args.query)
    save_weights(params, cfg, args.out)
    hist_path = args.history or f"{args.out}.history.csv"
    with open(hist_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(history, start=1):
            fh.write(f"{i},{loss!r}\n")
    if history:
        print(f"epochs: {len(history)} first loss: {history[0]:.6f} final loss: {history[-1]:.6f}")
    print(f"wrote {args.out}")


def _write_report(report: EvalReport, out):
    text = report.to_json()
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    agg = report.aggregate
    mean = "n/a" if agg["mean"] is None else f"{agg['mean']:.6f}"
    print(f"{report.method}: {len(report.scenes)} scenes, mean RMSE {mean}")


def cmd_adapt(args):
    params, cfg = load_weights(args.checkpoint)
    scenes = _scene_list(args.scenes, args.order)
    tta = TtaConfig(lr=args.tta_lr, optimizer=args.tta_optimizer, steps_per_sample=args.tta_steps)
    _write_report(evaluate_method("pit+tta", scenes, args.seed, params, cfg, tta), args.out)


def cmd_eval(args):
    scenes = _scene_list(args.scenes, args.order)
    params = cfg = None
    if args.method != "kriging":
        if not args.checkpoint:
            raise CliError(f"--checkpoint is required for method {args.method}")
        params, cfg = load_weights(args.checkpoint)
    tta = TtaConfig(lr=args.tta_lr, optimizer=args.tta_optimizer, steps_per_sample=args.tta_steps)
    report = evaluate_method(args.method, scenes, args.seed, params, cfg, tta, args.variogram)
    _write_report(report, args.out)


def cmd_krige(args):
    scene = read_scene(args.scene)
    if args.split:
        s = scene_sample(scene, Path(args.scene).name, args.seed)
        pts = np.column_stack([s.known_rc, s.known_values])
    else:
        pts = np.array(scene.points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise CliError("scene has no points to interpolate")
    model = kriging.fit_points(pts, args.variogram) if len(pts) >= 2 else \
        kriging.VariogramModel(args.variogram, 0.0, kriging.SILL_FLOOR, 1.0)
    values, _ = kriging.krige_grid(pts, model, scene.shape, args.knn or None)
    write_dense_map(RadioMap(values.astype(np.float32)), args.out)
    print(f"variogram: {model.to_dict()}")


def cmd_predict(args):
    params, cfg = load_weights(args.checkpoint)
    scene = read_scene(args.scene)
    if args.split:
        s = scene_sample(scene, Path(args.scene).name, args.seed)
        rc, vals = s.known_rc, s.known_values
    else:
        rc = np.array([(r, c) for r, c, _ in scene.points], dtype=np.int64).reshape(-1, 2)
        vals = np.array([v for _, _, v in scene.points])
    dense = predict_dense(params, cfg, rc, vals, scene.shape)
    write_dense_map(RadioMap(dense.astype(np.float32)), args.out)
    print(f"wrote {args.out}")


def render_pgm(values: np.ndarray, known=(), query=()) -> bytes:
    """Binary PGM of a [0, 1] map; known points as white and query points as black 3x3 squares."""
    img = np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = img.shape
    for pts, shade in ((known, 255), (query, 0)):
        for r, c in pts:
            img[max(r - 1, 0):min(r + 2, h), max(c - 1, 0):min(c + 2, w)] = shade
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def cmd_render(args):
    radio = read_dense_map(args.input)
    known = query = ()
    if args.points:
        scene = read_scene(args.points)
        if scene.shape != (radio.height, radio.width):
            raise CliError(f"scene {scene.shape} and map {radio.height}x{radio.width} differ in size")
        if len(scene.points) >= 3:
            s = scene_sample(scene, Path(args.points).name, args.seed)
            known, query = s.known_rc.tolist(), s.query_rc.tolist()
        else:
            known = [(r, c) for r, c, _ in scene.points]
    Path(args.out).write_bytes(render_pgm(radio.values, known, query))
    print(f"wrote {args.out}")


def cmd_compare(args):
    import json
    reports = [EvalReport.from_dict(json.loads(_read_text(p))) for p in args.reports]
    result = compare(reports)
    print(format_comparison(result))
    if args.out:
        Path(args.out).write_text(json.dumps(result, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- parser

def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--config", help="JSON run config; explicit flags take precedence")


def _add_model_flags(p):
    d = PiTConfig()
    p.add_argument("--d-model", type=int, default=d.d_model, help="embedding width")
    p.add_argument("--heads", type=int, default=d.n_heads, help="attention heads")
    p.add_argument("--d-ff", type=int, default=d.d_ff, help="feed-forward width")
    p.add_argument("--n-fourier", type=int, default=d.n_fourier, help="Fourier frequencies per axis")
    p.add_argument("--decode-chunk", type=int, default=d.decode_chunk,
                   help="max output tokens per decoder pass")


def _add_tta_flags(p, lr_default):
    p.add_argument("--tta-lr", type=float, default=lr_default, help="test-time adaptation learning rate")
    p.add_argument("--tta-optimizer", choices=("adam", "sgd"), default="adam",
                   help="optimizer for the per-sample update")
    p.add_argument("--tta-steps", type=int, default=1, help="updates per sample")


def _add_norm_flags(p):
    n = NormRange()
    p.add_argument("--norm-lo", type=float, default=n.lo_dbm, help="dBm mapped to 0")
    p.add_argument("--norm-hi", type=float, default=n.hi_dbm, help="dBm mapped to 1")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="radiopit", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="building polygons + measurement CSV -> RMSC1 scene",
                       formatter_class=fmt)
    p.add_argument("--buildings", required=True, help="GeoJSON building polygons")
    p.add_argument("--measurements", required=True, help="CSV with lat,lon,freq_mhz,dbm")
    p.add_argument("--extent", required=True, type=_extent, help="lat0,lat1,lon0,lon1")
    p.add_argument("--band", required=True, type=_pair, help="lo,hi in MHz")
    p.add_argument("--size", required=True, type=_size, help="H,W in pixels")
    p.add_argument("--out", required=True, help="output scene path")
    p.add_argument("--averaging", choices=("db", "linear"), default="db",
                   help="band averaging domain")
    p.add_argument("--pool", type=int, default=1, help="average-pooling factor")
    p.add_argument("--crop", type=int, default=0, help="random square crop size (0 = none)")
    _add_norm_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="synthetic dense maps (RMAP1) and sparse scenes (RMSC1)",
                       formatter_class=fmt)
    s = SynthConfig()
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=8, help="number of maps")
    p.add_argument("--size", type=_size, default=[s.h, s.w], help="H,W in pixels")
    p.add_argument("--points", type=int, default=20, help="sparse points per scene (0 = no scenes)")
    p.add_argument("--n-buildings", type=int, default=s.n_buildings, help="buildings per map")
    p.add_argument("--p0", type=float, default=s.p0, help="normalized power at 1 pixel")
    p.add_argument("--n-exp", type=float, default=s.n_exp, help="path-loss exponent")
    p.add_argument("--wall-loss", type=float, default=s.wall_loss, help="loss per building crossing")
    p.add_argument("--shadow-sigma", type=float, default=s.shadow_sigma, help="shadowing noise std")
    p.add_argument("--k-d", type=float, default=s.k_d, help="distance coefficient")
    p.add_argument("--band", type=_pair, default=[1805.0, 1824.0], help="band recorded in scenes")
    _add_norm_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="pretrain on dense maps -> RPTW1 checkpoint",
                       formatter_class=fmt)
    p.add_argument("--data", help="directory of .rmap files")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="loss-history CSV (default: <out>.history.csv)")
    p.add_argument("--epochs", type=int, default=20, help="training epochs")
    p.add_argument("--batch", type=int, default=8, help="maps per step")
    p.add_argument("--lr", type=float, default=1e-4, help="initial AdamW learning rate")
    p.add_argument("--weight-decay", type=float, default=1e-4, help="decoupled weight decay")
    p.add_argument("--known", type=int, default=50, help="known points per map")
    p.add_argument("--query", type=int, default=1500, help="query points per map")
    p.add_argument("--init", help="start from this checkpoint instead of a fresh init")
    p.add_argument("--init-only", action="store_true", help="write the initial weights and stop")
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="stream scenes with test-time adaptation -> report JSON",
                       formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="RPTW1 checkpoint")
    p.add_argument("--scenes", required=True, help="directory of .rmsc scenes")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--order", help="file listing scene names in stream order")
    _add_tta_flags(p, 5e-6)
    _add_common(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="evaluate a method on scenes -> report JSON", formatter_class=fmt)
    p.add_argument("--method", choices=("pit", "pit+tta", "kriging"), default="pit", help="method")
    p.add_argument("--checkpoint", help="RPTW1 checkpoint (pit methods)")
    p.add_argument("--scenes", required=True, help="directory of .rmsc scenes")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--order", help="file listing scene names in stream order")
    p.add_argument("--variogram", choices=kriging.KINDS, default="exponential",
                   help="variogram family (kriging)")
    _add_tta_flags(p, 5e-6)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("krige", help="ordinary-kriging dense map from a scene -> RMAP1",
                       formatter_class=fmt)
    p.add_argument("--scene", required=True, help="RMSC1 scene")
    p.add_argument("--out", required=True, help="output .rmap")
    p.add_argument("--variogram", choices=kriging.KINDS, default="exponential", help="variogram family")
    p.add_argument("--knn", type=int, default=0, help="nearest points per prediction (0 = all)")
    p.add_argument("--split", action="store_true", help="use only the known part of the 2:1 split")
    _add_common(p)
    p.set_defaults(func=cmd_krige)

    p = sub.add_parser("predict", help="model dense map from a scene -> RMAP1", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="RPTW1 checkpoint")
    p.add_argument("--scene", required=True, help="RMSC1 scene")
    p.add_argument("--out", required=True, help="output .rmap")
    p.add_argument("--split", action="store_true", help="condition only on the known part of the 2:1 split")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("render", help="RMAP1 -> binary PGM", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input .rmap")
    p.add_argument("--out", required=True, help="output .pgm")
    p.add_argument("--points", help="scene whose known/query split is overdrawn")
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("compare", help="compare report JSONs", formatter_class=fmt)
    p.add_argument("reports", nargs="+", help="report JSON files; the first is listed first")
    p.add_argument("--out", help="write the comparison as JSON")
    p.set_defaults(func=cmd_compare)
    return parser


def _explicit_dests(subparser, argv):
    given = set()
    for action in subparser._actions:
        for opt in action.option_strings:
            if any(tok == opt or tok.startswith(opt + "=") for tok in argv):
                given.add(action.dest)
    return given


def _apply_config(parser, args, argv):
    if not getattr(args, "config", None):
        return
    doc = load_run_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    explicit = _explicit_dests(sub, argv)
    for (section, key), dest in CONFIG_FLAGS.items():
        if key in doc.get(section, {}) and hasattr(args, dest) and dest not in explicit:
            setattr(args, dest, doc[section][key])
    if "pit" in doc and not hasattr(args, "d_model") and doc["pit"]:
        log.info("config section 'pit' ignored by %s", args.command)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_config(parser, args, argv)
        args.func(args)
    except NumericError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return 3
    except (RadioPitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
