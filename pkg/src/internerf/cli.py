"""``internerf`` command line: make-scene, train, render, eval."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, ParseError, StoreError

log = logging.getLogger("internerf")


def _grid_shape(text: str):
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"grid must look like 2x1, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def cmd_make_scene(args):
    from .dataset import save_dataset
    from .scenes import make_synthetic_scene, oracle_render

    scene, cams = make_synthetic_scene(args.preset, args.seed, args.views, args.width, args.height)
    images = []
    for k, cam in enumerate(cams):
        images.append(oracle_render(scene, cam))
        log.debug("rendered view %d/%d", k + 1, len(cams))
    path = save_dataset(args.out, cams, np.stack(images), {"preset": args.preset, "seed": args.seed})
    print(f"wrote {len(cams)} views to {path}")


def cmd_train(args):
    from .config import load_config
    from .dataset import load_dataset
    from .trainer import train

    config, model = load_config(args.config)
    dataset = load_dataset(args.scene)
    result = train(config, model, dataset, args.out, args.grid, in_core=args.in_core, progress_every=100)
    manifest = args.scene / "manifest.json" if args.scene.is_dir() else args.scene
    (Path(args.out) / "scene.json").write_text(json.dumps({"manifest": str(manifest.resolve())}))
    active = len(result.grid.active_cells)
    print(f"trained {config.total_steps} steps on a {args.grid[0]}x{args.grid[1]} grid "
          f"({active} active cells); checkpoint in {result.out_dir}")


def _camera_arg(text: str, ckpt_dir: Path):
    from .dataset import camera_from_dict, read_manifest

    if re.fullmatch(r"\d+", text):
        meta_scene = None
        scene_ref = Path(ckpt_dir) / "scene.json"
        if scene_ref.exists():
            meta_scene = json.loads(scene_ref.read_text()).get("manifest")
        if meta_scene is None:
            raise ConfigurationError("camera index given but the checkpoint records no scene; pass a camera JSON")
        cams, _, _ = read_manifest(meta_scene)
        idx = int(text)
        if idx >= len(cams):
            raise ConfigurationError(f"camera index {idx} out of range ({len(cams)} cameras)")
        return cams[idx]
    path = Path(text)
    try:
        data = json.loads(path.read_text()) if path.exists() else json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"camera: invalid JSON: {exc}") from exc
    return camera_from_dict(data, "camera")


def cmd_render(args):
    from .dataset import save_image
    from .trainer import load_checkpoint, render_view

    ckpt = load_checkpoint(args.ckpt)
    cam = _camera_arg(args.camera, args.ckpt)
    save_image(args.out, render_view(ckpt, cam))
    print(f"wrote {args.out}")


def cmd_eval(args):
    from .dataset import load_dataset
    from .trainer import evaluate, load_checkpoint

    report = evaluate(load_checkpoint(args.ckpt), load_dataset(args.scene), args.split)
    report.write_csv(args.report)
    print(f"{args.split}: mean PSNR {report.mean_psnr:.3f} dB, SSIM {report.mean_ssim:.4f}, "
          f"mean-color baseline {report.baseline_psnr:.3f} dB ({len(report.rows)} images)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="internerf", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-scene", help="write a synthetic scene (manifest + PNGs)")
    s.add_argument("--preset", required=True, choices=("single-room", "two-rooms", "four-rooms"))
    s.add_argument("--seed", required=True, type=int)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--views", type=int, default=None)
    s.add_argument("--width", type=int, default=32)
    s.add_argument("--height", type=int, default=32)
    s.set_defaults(func=cmd_make_scene)

    s = sub.add_parser("train", help="cell-by-cell training")
    s.add_argument("--scene", required=True, type=Path, help="manifest.json or its directory")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--grid", type=_grid_shape, default=(1, 1), help="NXxNY, default 1x1")
    s.add_argument("--in-core", action="store_true", help="keep every vertex set in memory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render one view from a checkpoint")
    s.add_argument("--ckpt", required=True, type=Path)
    s.add_argument("--camera", required=True, help="training-scene camera index or camera JSON (file or inline)")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="PSNR/SSIM report on a split")
    s.add_argument("--ckpt", required=True, type=Path)
    s.add_argument("--scene", required=True, type=Path)
    s.add_argument("--split", default="test", choices=("test", "train"))
    s.add_argument("--report", required=True, type=Path)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        args.func(args)
    except (ConfigurationError, ContractError, ParseError, StoreError) as exc:
        print(f"internerf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
