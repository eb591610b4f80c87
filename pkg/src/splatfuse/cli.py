"""Command-line entry point: ``splatfuse <command> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .diffcore.rng import RngStream
from .gaussians import load_field
from .render.camera import load_cameras, write_ppm
from .render.rasterize import rasterize


def _cmd_generate(args) -> int:
    from .harness import generate_scene, save_scene
    save_scene(args.out, generate_scene(_scene_spec(args.scene), RngStream(args.seed)))
    print(f"scene written to {args.out}")
    return 0


def _scene_spec(name: str):
    from .harness import PRESETS, load_scene_spec, preset
    return preset(name) if name in PRESETS else load_scene_spec(name)


def _run_config(path):
    from .harness import RunConfig, load_run_config
    return load_run_config(path) if path else RunConfig()


def _cmd_train(args) -> int:
    from .harness import load_scene, train
    cfg = _run_config(args.config)
    report = train(cfg, load_scene(args.scene), args.out or cfg.out_dir or None)
    print(report.summary(), end="")
    print(f"wall_clock = {report.wall_clock:.2f} s")
    return 0


def _cmd_ablate(args) -> int:
    from .harness import ablate, format_table, generate_scene, load_scene
    cfg = _run_config(args.config)
    if Path(args.scene).is_dir():
        scene = load_scene(args.scene)
    else:
        scene = generate_scene(_scene_spec(args.scene), RngStream(cfg.seed))
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    print(format_table(ablate(cfg, scene, variants, seeds)), end="")
    return 0


def _cmd_render(args) -> int:
    field = load_field(args.field)
    cam_file = Path(args.cameras) if args.cameras else Path(args.field).with_name("cameras.txt")
    cams = load_cameras(cam_file)
    if not 0 <= args.camera < len(cams):
        print(f"camera index {args.camera} outside [0, {len(cams)})", file=sys.stderr)
        return 2
    bg = tuple(float(x) for x in args.background.split(","))
    img, _ = rasterize(field, cams[args.camera], bg)
    write_ppm(args.out, img)
    return 0


def _cmd_gradcheck(args) -> int:
    from .checks import run_checks
    failed = 0
    for name, seed, report in run_checks(args.module, range(args.seeds)):
        status = "ok" if report.passed else "FAIL"
        failed += not report.passed
        print(f"{name:<18} seed={seed:<3d} max_rel_err={report.max_rel_err:.3e} {status}")
    print("all checks passed" if not failed else f"{failed} checks failed")
    return 1 if failed else 0


def _cmd_k_stats(args) -> int:
    from .harness import k_stats
    print(k_stats(args.inp).format(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatfuse", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a scene directory")
    g.add_argument("--scene", required=True, help="scene file or preset name (default, small, large)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_generate)

    t = sub.add_parser("train", help="run both training phases on a scene directory")
    t.add_argument("--config")
    t.add_argument("--scene", required=True)
    t.add_argument("--out")
    t.set_defaults(func=_cmd_train)

    a = sub.add_parser("ablate", help="compare variants on one scene")
    a.add_argument("--config")
    a.add_argument("--variants", default="fixed_k=1,dynamic_k,+rgb,+pc")
    a.add_argument("--scene", default="default", help="scene directory, scene file or preset name")
    a.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    a.set_defaults(func=_cmd_ablate)

    r = sub.add_parser("render", help="render a checkpoint to a PPM image")
    r.add_argument("--field", required=True)
    r.add_argument("--camera", type=int, default=0)
    r.add_argument("--cameras", help="camera file (default: cameras.txt next to the checkpoint)")
    r.add_argument("--background", default="0,0,0")
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_render)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--module")
    c.add_argument("--seeds", type=int, default=10)
    c.set_defaults(func=_cmd_gradcheck)

    k = sub.add_parser("k-stats", help="k frequency table from a decision CSV")
    k.add_argument("--in", dest="inp", required=True)
    k.set_defaults(func=_cmd_k_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
