"""Command-line interface.

Exit codes: 0 success, 1 invalid input (bad flags, malformed files, failed
validation), 2 runtime failure. Every run writes its resolved configuration
to ``<output-dir>/config.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("matrender")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _threads(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("threads must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    from .render import default_threads

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (defaults to the input's own seed)")
    common.add_argument("--threads", type=_threads, default=default_threads(),
                        help="worker threads; MATRENDER_THREADS sets the default")
    common.add_argument("--output-dir", type=Path, default=Path("out"))
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="matrender", description="Spectral material-benchmark renderer and evaluation tools.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("render", parents=[common], help="render every view of one scene file")
    r.add_argument("--scene", type=Path, required=True, help="scene description (TOML)")
    r.add_argument("--spp", type=int, default=None)
    r.add_argument("--max-depth", type=int, default=None)
    r.add_argument("--wavelengths-per-path", type=int, default=None)
    r.add_argument("--exr", action="store_true", help="also write linear radiance EXR")

    g = sub.add_parser("generate", parents=[common], help="assign and render a balanced scene set")
    g.add_argument("--config", type=Path, required=True, help="dataset configuration (TOML)")
    g.add_argument("--total", type=int, default=None)
    g.add_argument("--manifest-only", action="store_true", help="write the manifest without rendering")

    m = sub.add_parser("eval-mesh", parents=[common], help="visible-mesh Chamfer distance")
    m.add_argument("--gt", type=Path, required=True)
    m.add_argument("--pred", type=Path, required=True)
    m.add_argument("--scene-dir", type=Path, required=True)
    m.add_argument("--n-points", type=int, default=1_000_000)
    m.add_argument("--tau", type=float, default=0.01)
    m.add_argument("--outlier-threshold", type=float, default=0.15)
    m.add_argument("--stride", type=int, default=4)

    v = sub.add_parser("eval-views", parents=[common], help="PSNR and SSIM between two image folders")
    v.add_argument("--pred-dir", type=Path, required=True)
    v.add_argument("--gt-dir", type=Path, required=True)

    c = sub.add_parser("convert-colmap", parents=[common], help="transforms files to a COLMAP text model")
    c.add_argument("--scene-dir", type=Path, required=True)

    i = sub.add_parser("validate-ior", parents=[common], help="check a material database directory")
    i.add_argument("--ior-dir", type=Path, default=None, help="defaults to the bundled database")
    return p


def _jsonable(obj):
    if isinstance(obj, Path):
        return str(obj)
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


# --------------------------------------------------------------- commands


def cmd_render(args, out: Path) -> dict:
    from .dataset import render_scene
    from .render import RenderSettings
    from .scene import SceneDesc

    desc = SceneDesc.load(args.scene)
    overrides = {k: getattr(args, k) for k in ("spp", "max_depth", "wavelengths_per_path")
                 if getattr(args, k) is not None}
    settings = RenderSettings(**{**overrides, "seed": desc.seed if args.seed is None else args.seed})
    config = {"scene": desc.to_dict(), "render": settings.to_dict(), "exr": args.exr}
    _write_json(out / "config.json", {**config, "threads": args.threads})
    render_scene(desc, out, settings, threads=args.threads, exr=args.exr)
    log.info("rendered %d views into %s", len(desc.cameras.build()), out)
    return config


def cmd_generate(args, out: Path) -> dict:
    from .dataset import DatasetConfig, render_dataset
    from .spectra import load_material_db

    cfg = DatasetConfig.load(args.config)
    if args.total is not None:
        cfg = dataclasses.replace(cfg, total=args.total)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    db = load_material_db(cfg.ior_dir)
    manifest = cfg.manifest(db)
    _write_json(out / "config.json", {**cfg.to_dict(), "manifest_only": args.manifest_only, "threads": args.threads})
    if args.manifest_only:
        manifest.save(out / "manifest.json")
    else:
        render_dataset(cfg, out, threads=args.threads, db=db, manifest=manifest)
    log.info("%d scenes, per family %s", len(manifest.scenes), manifest.counts)
    return manifest.counts


def cmd_eval_mesh(args, out: Path) -> dict:
    from .evaluate import evaluate_mesh_files, write_report

    kw = {"n_points": args.n_points, "tau": args.tau, "outlier_threshold": args.outlier_threshold,
          "stride": args.stride, "seed": args.seed or 0}
    _write_json(out / "config.json", {"gt": args.gt, "pred": args.pred, "scene_dir": args.scene_dir, **kw})
    report = evaluate_mesh_files(args.gt, args.pred, args.scene_dir, **kw)
    write_report(report, out / "eval_mesh.json")
    print(f"chamfer {report['chamfer']:.6g} (a->b {report['mean_a_to_b']:.6g}, "
          f"b->a {report['mean_b_to_a']:.6g}, excluded {report['excluded_count']})")
    return report


def cmd_eval_views(args, out: Path) -> dict:
    from .evaluate import evaluate_views, write_report

    _write_json(out / "config.json", {"pred_dir": args.pred_dir, "gt_dir": args.gt_dir})
    report = evaluate_views(args.pred_dir, args.gt_dir)
    write_report(report, out / "eval_views.json")
    print(f"{report['count']} images: PSNR {report['mean_psnr']:.4f} dB, SSIM {report['mean_ssim']:.6f}")
    return report


def cmd_convert_colmap(args, out: Path) -> dict:
    from .dataset import convert_to_colmap

    _write_json(out / "config.json", {"scene_dir": args.scene_dir})
    path = convert_to_colmap(args.scene_dir, out / "colmap")
    print(path)
    return {"colmap_dir": str(path)}


def cmd_validate_ior(args, out: Path) -> dict:
    from .spectra import bundled_ior_dir, validate_ior_dir

    root = args.ior_dir or bundled_ior_dir()
    _write_json(out / "config.json", {"ior_dir": root})
    if not root.is_dir():
        raise FileNotFoundError(f"directory not found: {root}")
    problems = validate_ior_dir(root)
    _write_json(out / "validate_ior.json", {"ior_dir": root, "problems": problems})
    for p in problems:
        print(p)
    if problems:
        raise ValueError(f"{len(problems)} problem(s) in {root}")
    print(f"{root}: ok")
    return {"problems": problems}


COMMANDS = {
    "render": cmd_render,
    "generate": cmd_generate,
    "eval-mesh": cmd_eval_mesh,
    "eval-views": cmd_eval_views,
    "convert-colmap": cmd_convert_colmap,
    "validate-ior": cmd_validate_ior,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("matrender").setLevel(level)
    try:
        out = args.output_dir
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())
