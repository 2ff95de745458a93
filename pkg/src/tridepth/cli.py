"""Command-line entry point: ``tridepth <verb> ...``.

Verbs: fit, render, ablate-sigma, metrics, gradcheck.  Log verbosity is read
from ``TRIDEPTH_LOG`` (DEBUG, INFO, WARNING, ...; default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import io
from .config import FitConfig, load_config
from .engine import render_image
from .fit import METRIC_COLUMNS, evaluate, fit_scene, load_fit
from .gradcheck import GradcheckConfig, run_gradcheck
from .metrics import NFSConfig, depth_accuracy, nfs, psnr

log = logging.getLogger("tridepth")

ORBIT_YAW = 0.35
ORBIT_PITCH = 0.15


class CliError(Exception):
    pass


def orbit_angles(yaw: float, pitch: float, frames: int) -> list[tuple[float, float]]:
    """Closed elliptical sweep: yaw +/- 0.35, pitch +/- 0.15 around the given view."""
    out = []
    for k in range(frames):
        phase = 2.0 * math.pi * k / frames
        out.append((yaw + ORBIT_YAW * math.sin(phase), pitch + ORBIT_PITCH * math.sin(2.0 * phase)))
    return out


def cmd_fit(args) -> int:
    cfg = load_config(args.config) if args.config else FitConfig()
    result = fit_scene(cfg, args.out)
    last = dict(zip(["iteration", *METRIC_COLUMNS], [result.rows[-1][0], *result.rows[-1][-4:]]))
    print(json.dumps(last))
    return 0


def cmd_render(args) -> int:
    fld, cfg, _ = load_fit(args.checkpoint)
    if not args.sigma_scale > 0:
        raise CliError("--sigma-scale must be positive")
    opts = cfg.render_options(args.sigma_scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.orbit is None:
        views = [(args.yaw, args.pitch, "color.png", "depth.pfm")]
    else:
        if args.orbit < 1:
            raise CliError("--orbit needs at least one frame")
        width = max(3, len(str(args.orbit - 1)))
        views = [(y, p, f"color_{k:0{width}d}.png", f"depth_{k:0{width}d}.pfm")
                 for k, (y, p) in enumerate(orbit_angles(args.yaw, args.pitch, args.orbit))]
    for yaw, pitch, color_name, depth_name in views:
        img = render_image(fld, cfg.pose(yaw, pitch), opts, cfg.near, cfg.far, cfg.n_samples)
        io.write_png(out / color_name, img["color"])
        io.write_pfm(out / depth_name, img["depth"])
    print(f"wrote {len(views)} view(s) to {out}")
    return 0


def cmd_ablate_sigma(args) -> int:
    factors = [float(f) for f in args.factors.split(",")] if isinstance(args.factors, str) else args.factors
    if any(not f > 0 for f in factors):
        raise CliError("sigma factors must be positive")
    rows = []
    for path in args.checkpoints:
        fld, cfg, _ = load_fit(path)
        for f in factors:
            m = evaluate(fld, cfg, f)
            rows.append([str(path), f, *(m[k] for k in METRIC_COLUMNS)])
            log.info("%s factor %g: %s", path, f, m)
    io.write_csv(args.out, ["checkpoint", "factor", *METRIC_COLUMNS], rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _pairs(root: Path, suffix: str) -> list[tuple[str, Path, Path]]:
    preds = sorted(root.glob(f"*_pred{suffix}"))
    if not preds:
        raise CliError(f"{root}: no '<name>_pred{suffix}' files found")
    out = []
    for pred in preds:
        name = pred.name[: -len(f"_pred{suffix}")]
        gt = root / f"{name}_gt{suffix}"
        if not gt.exists():
            raise CliError(f"{gt}: missing ground truth for {pred.name}")
        out.append((name, pred, gt))
    return out


def cmd_metrics(args) -> int:
    src = Path(args.inp)
    if not src.exists():
        raise CliError(f"{src}: no such file or directory")
    if args.kind == "nfs":
        files = sorted(src.glob("*.pfm")) if src.is_dir() else [src]
        if not files:
            raise CliError(f"{src}: no PFM depth maps found")
        maps = [io.read_pfm(f) for f in files]
        rows = [["all", nfs(maps, NFSConfig(n=len(maps)))]]
    elif args.kind == "depth_acc":
        rows = [[name, depth_accuracy(io.read_pfm(p), io.read_pfm(g))] for name, p, g in _pairs(src, ".pfm")]
    else:
        rows = [[name, psnr(io.read_png(p), io.read_png(g))] for name, p, g in _pairs(src, ".png")]
    io.write_csv(args.out, ["name", args.kind], rows)
    for row in rows:
        print(f"{row[0]},{row[1]!r}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = GradcheckConfig()
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        allowed = {f.name for f in fields(GradcheckConfig)}
        if set(data) - allowed:
            raise CliError(f"unknown gradcheck keys: {sorted(set(data) - allowed)}")
        cfg = GradcheckConfig(**data)
    report = run_gradcheck(cfg)
    print("\n".join(report.lines()))
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tridepth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("fit", help="fit a scene from a JSON config")
    p.add_argument("--config", help="JSON config (every field optional)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render colour and depth from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--yaw", type=float, default=math.pi / 2)
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--sigma-scale", type=float, default=1.0)
    p.add_argument("--orbit", type=int, help="number of orbit frames")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("ablate-sigma", help="depth metrics under density scaling")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--factors", default="1.0,1.5,2.0", help="comma-separated factors")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_ablate_sigma)

    p = sub.add_parser("metrics", help="evaluate depth maps or images")
    p.add_argument("kind", choices=["nfs", "depth_acc", "psnr"])
    p.add_argument("--in", dest="inp", required=True,
                   help="PFM directory (nfs) or directory of <name>_pred/<name>_gt pairs")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gradcheck", help="finite-difference self-check of the renderer gradients")
    p.add_argument("--config", help="JSON with gradcheck settings")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("TRIDEPTH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, io.CheckpointError, ValueError, OSError, RuntimeError) as exc:
        print(f"tridepth {args.verb}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
