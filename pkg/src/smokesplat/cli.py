"""Command-line entry point: gen, train, render, eval, mie."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .core.io import load_checkpoint, load_dataset, load_points, scene_aabb, write_png
from .core.types import Camera, Modality, SetKind
from .errors import SmokeSplatError
from .mie import ParticleSpec, spectrum_sweep, sweep_csv
from .render import RenderMode, render
from .synth import SceneSpec, gen_dataset, gen_scene
from .train import TrainConfig, evaluate_clear, train

log = logging.getLogger("smokesplat")

ABLATIONS = ("smoke_alpha", "smoke_color", "mono", "depth", "mask")
LOG_ENV = "SMOKESPLAT_LOG"


class UsageError(Exception):
    pass


def desk_config() -> TrainConfig:
    """Training defaults for the bundled desk scene."""
    text = resources.files("smokesplat").joinpath("configs/desk_train.json").read_text()
    return TrainConfig.from_dict(json.loads(text))


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _log_run(command, seed, config):
    log.info("smokesplat %s %s seed=%s", __version__, command, seed)
    log.info("config %s", json.dumps(config, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    spec = SceneSpec.load(_existing(args.spec, "scene spec")) if args.spec else SceneSpec()
    if args.seed is not None:
        spec.seed = args.seed
    _log_run("gen", spec.seed, spec.to_dict())
    manifest = gen_dataset(gen_scene(spec), spec, args.out)
    print(manifest)
    return 0


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.load(_existing(args.config, "config")) if args.config else desk_config()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.rgb_only:
        cfg.rgb_only = True
    if args.ablate:
        setattr(cfg.weights, args.ablate, 0.0)
    return cfg


def cmd_train(args):
    manifest = _existing(args.manifest, "manifest")
    cfg = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _log_run("train", cfg.seed, cfg.to_dict())
    cfg.save(out / "config.json")
    (out / "run.json").write_text(json.dumps(
        {"version": __version__, "seed": cfg.seed, "manifest": str(manifest),
         "stage2_only": args.stage2_only, "rgb_only": cfg.rgb_only, "ablate": args.ablate},
        indent=1))
    frames = load_dataset(manifest)
    result = None
    try:
        result = train(frames, cfg, load_points(manifest), scene_aabb(manifest),
                       stage2_only=args.stage2_only, checkpoint_dir=out / "checkpoint")
    finally:
        if result is not None:
            (out / "loss_log.csv").write_text(result.log.to_csv())
    log.info("wrote %s", out / "checkpoint")
    return 0


def _load_sets(path):
    sets, deform = load_checkpoint(_existing(path, "checkpoint"))
    surface = [s for s in sets if s.kind is SetKind.SURFACE]
    smoke = [s for s in sets if s.kind is SetKind.SMOKE]
    return surface, smoke, deform


def _camera_and_time(args):
    if args.camera:
        d = json.loads(_existing(args.camera, "camera").read_text())
        return Camera.from_dict(d), float(args.time)
    if args.manifest is None:
        raise UsageError("render needs --camera or --manifest with --frame")
    frames = load_dataset(_existing(args.manifest, "manifest"))
    if not 0 <= args.frame < len(frames):
        raise UsageError(f"frame {args.frame} out of range (dataset has {len(frames)})")
    f = frames[args.frame]
    return f.camera, (f.time if args.time is None else float(args.time))


def cmd_render(args):
    surface, smoke, deform = _load_sets(args.checkpoint)
    cam, t = _camera_and_time(args)
    _log_run("render", None, {"checkpoint": str(args.checkpoint), "mode": args.mode, "time": t})
    out = render(surface + smoke, cam, t, RenderMode(args.mode), deform)
    write_png(args.out, out.color)
    print(args.out)
    return 0


def cmd_eval(args):
    surface, _, _ = _load_sets(args.checkpoint)
    frames = load_dataset(_existing(args.manifest, "manifest"))
    _log_run("eval", None, {"checkpoint": str(args.checkpoint), "split": args.split})
    split = None if args.split == "all" else args.split
    rgb = evaluate_clear(surface[0], frames, split, Modality.RGB)
    thermal = evaluate_clear(surface[0], frames, split, Modality.THERMAL)
    metrics = {"version": __version__, "mean_psnr": rgb["mean_psnr"], "mean_ssim": rgb["mean_ssim"],
               "thermal_mean_psnr": thermal["mean_psnr"],
               "thermal_mean_ssim": thermal["mean_ssim"], "rgb": rgb, "thermal": thermal}
    text = json.dumps(metrics, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["modality", "frame", "time", "psnr", "ssim"])
        for block in (rgb, thermal):
            for r in block["frames"]:
                w.writerow([block["modality"], r["frame"], r["time"], r["psnr"], r["ssim"]])
        Path(args.csv).write_text(buf.getvalue())
    print(json.dumps({k: metrics[k] for k in ("mean_psnr", "mean_ssim", "thermal_mean_psnr",
                                               "thermal_mean_ssim")}))
    return 0


def cmd_mie(args):
    spec = ParticleSpec()
    if args.spec:
        d = json.loads(_existing(args.spec, "particle spec").read_text())
        if "refractive_index" in d:
            ri = d["refractive_index"]
            d["refractive_index"] = complex(*ri) if isinstance(ri, list) else complex(ri)
        spec = ParticleSpec(**d)
    _log_run("mie", None, {"radius": spec.radius, "m": str(spec.refractive_index),
                           "number_density": spec.number_density})
    text = sweep_csv(spectrum_sweep(args.lam_min, args.lam_max, args.steps, spec), spec)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smokesplat", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--spec", help="SceneSpec JSON (default: desk scene)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="run Stage 2 and Stage 3")
    t.add_argument("manifest")
    t.add_argument("--config", help="TrainConfig JSON (default: bundled desk config)")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--stage2-only", action="store_true")
    t.add_argument("--rgb-only", action="store_true",
                   help="drop thermal frames and the depth loss")
    t.add_argument("--ablate", choices=ABLATIONS, help="zero one loss weight")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render a checkpoint to PNG")
    r.add_argument("checkpoint")
    r.add_argument("--camera", help="camera JSON")
    r.add_argument("--manifest", help="take the camera from a dataset frame")
    r.add_argument("--frame", type=int, default=0)
    r.add_argument("--time", type=float)
    r.add_argument("--mode", choices=[m.value for m in RenderMode], default="combined")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="clear-image metrics of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("manifest")
    e.add_argument("--split", choices=["test", "train", "all"], default="test")
    e.add_argument("--out", help="metrics JSON path")
    e.add_argument("--csv", help="per-frame metrics CSV path")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("mie", help="scattering coefficient sweep")
    m.add_argument("--spec", help="ParticleSpec JSON")
    m.add_argument("--min", dest="lam_min", type=float, default=0.3, help="micrometres")
    m.add_argument("--max", dest="lam_max", type=float, default=15.0, help="micrometres")
    m.add_argument("--steps", type=int, default=100)
    m.add_argument("--out", help="CSV path (default: stdout)")
    m.set_defaults(func=cmd_mie)
    return p


def run(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"smokesplat {args.command}: {e}", file=sys.stderr)
        return 2
    except (SmokeSplatError, OSError, ValueError) as e:
        print(f"smokesplat {args.command}: error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
