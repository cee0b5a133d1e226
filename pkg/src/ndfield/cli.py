"""Command-line surface: synth / reconstruct / render / eval / profile.

Exit codes: 0 success, 1 usage error, 2 bad or missing data, 3 divergence.
"""

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from . import metrics as metrics_mod
from . import ndf, optim
from .errors import DataError, DivergenceError
from .lfdata import (SceneSpec, load_scene, read_pfm, save_lightfield,
                     synth_lightfield, write_pfm)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

KIND_ALIASES = {
    "constant": "constant_plane", "constant_plane": "constant_plane",
    "slanted": "slanted_plane", "slanted_plane": "slanted_plane",
    "step": "step_occluder", "step_occluder": "step_occluder",
    "two_layer": "two_layer",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def write_preview(dmap, path):
    """Normalized colormapped PNG of a disparity map; range goes to stderr."""
    from matplotlib import colormaps
    from PIL import Image

    values = dmap.values.astype(np.float64)
    finite = values[np.isfinite(values)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 0.0
    span = hi - lo if hi > lo else 1.0
    norm = np.clip((np.nan_to_num(values, nan=lo) - lo) / span, 0.0, 1.0)
    rgba = colormaps["viridis"](norm)
    Image.fromarray((rgba[..., :3] * 255).astype(np.uint8)).save(path)
    print(f"preview {path}: disparity range [{lo:.4f}, {hi:.4f}]",
          file=sys.stderr)


def cmd_synth(args):
    rect = None
    if args.rect:
        parts = [float(p) for p in args.rect.split(",")]
        if len(parts) != 4:
            raise _UsageError("--rect wants x0,y0,x1,y1")
        rect = tuple(parts)
    spec = SceneSpec(kind=KIND_ALIASES[args.kind], d0=args.d0,
                     gradient=(args.gx, args.gy), fg=args.fg, bg=args.bg,
                     rect=rect, edge=args.edge, texture_seed=args.seed,
                     noise_sigma=args.noise)
    lf, gt = synth_lightfield(spec, args.hw, args.hw, args.grid, args.grid)
    manifest = save_lightfield(lf, gt, args.out)
    print(manifest)
    return 0


def _parse_res(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise _UsageError(f"--res wants HxW, got {text!r}")


def cmd_reconstruct(args):
    lf, gt = load_scene(args.manifest)
    cfg = optim.read_config(args.config) if args.config \
        else optim.ReconstructionConfig()
    if args.iterations is not None:
        cfg = replace(cfg, iterations=args.iterations)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    os.makedirs(args.out, exist_ok=True)

    def progress(rec):
        print(f"step {rec['step']:>6d}  loss8 {rec['loss8']:.6f}  "
              f"loss6 {rec['loss6']:.6f}  sigma {rec['sigma']:.4f}  "
              f"lr {rec['lr']:.5f}", file=sys.stderr)

    model, dmap, log = optim.reconstruct(lf, cfg, progress=progress)
    write_pfm(dmap, os.path.join(args.out, "disparity.pfm"))
    ndf.save_checkpoint(model, os.path.join(args.out, "checkpoint.npz"))
    optim.write_log_csv(log, os.path.join(args.out, "log.csv"))
    write_preview(dmap, os.path.join(args.out, "preview.png"))
    if gt is not None:
        report = metrics_mod.evaluate(dmap, gt,
                                      scene=os.path.basename(args.manifest))
        with open(os.path.join(args.out, "metrics.json"), "w",
                  encoding="utf-8") as f:
            f.write(report.to_json(
                extra={"config_hash": optim.config_hash(cfg)}) + "\n")
    return 0


def cmd_render(args):
    model = ndf.load_checkpoint(args.checkpoint)
    out_h, out_w = _parse_res(args.res) if args.res else model.domain
    os.makedirs(args.out, exist_ok=True)
    dmap = ndf.render_grid(model, out_h, out_w)
    stem = f"disparity_{out_h}x{out_w}"
    write_pfm(dmap, os.path.join(args.out, stem + ".pfm"))
    write_preview(dmap, os.path.join(args.out, stem + ".png"))
    print(os.path.join(args.out, stem + ".pfm"))
    return 0


def cmd_eval(args):
    pred = read_pfm(args.pred)
    gt = read_pfm(args.gt)
    thresholds = [float(t) for t in args.thresholds.split(",")]
    try:
        report = metrics_mod.evaluate(pred, gt, thresholds,
                                      scene=os.path.basename(args.pred))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return 0


def cmd_profile(args):
    dmap = read_pfm(args.map)
    try:
        pairs = metrics_mod.profile_line(dmap, args.row)
    except IndexError as exc:
        raise DataError(str(exc)) from exc
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["column", "value"])
            writer.writerows(pairs)
    else:
        print("column,value")
        for c, v in pairs:
            print(f"{c},{v}")
    return 0


def build_parser():
    parser = _Parser(prog="ndfield",
                     description="Neural disparity field reconstruction "
                                 "from light-field data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic scene")
    p.add_argument("--kind", required=True, choices=sorted(KIND_ALIASES))
    p.add_argument("--hw", type=int, default=64, help="image side length")
    p.add_argument("--grid", type=int, default=5, help="view grid side")
    p.add_argument("--d0", type=float, default=0.0)
    p.add_argument("--gx", type=float, default=0.0)
    p.add_argument("--gy", type=float, default=0.0)
    p.add_argument("--fg", type=float, default=1.5)
    p.add_argument("--bg", type=float, default=0.0)
    p.add_argument("--rect", help="two_layer rectangle x0,y0,x1,y1")
    p.add_argument("--edge", type=float, help="step_occluder column")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("reconstruct", help="reconstruct a disparity field")
    p.add_argument("manifest")
    p.add_argument("--config", help="key-value config file")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("render", help="render a checkpoint at any resolution")
    p.add_argument("checkpoint")
    p.add_argument("--res", help="HxW, default: training resolution")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="compare a disparity map to ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--thresholds", default="0.01,0.03,0.07")
    p.add_argument("--out", help="write metrics JSON here too")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="export one row as CSV")
    p.add_argument("map")
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
