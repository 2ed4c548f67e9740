"""``omnidepth`` command line: warp, simulate, net-forward, fuse, eval, bench, complexity.

Exit codes: 0 ok, 2 bad configuration, 3 I/O failure, 4 shape mismatch,
5 empty evaluation mask.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import io as oio
from .aha import AhaConfig, AhaNetwork, complexity_report, init_weights
from .bench import rows_to_csv, run_bench
from .fusion import DepthField, Rig, fuse, splat_frames
from .geometry import CameraModel, ErpGrid, warp_camera_to_erp
from .io import ConfigError, ShapeError
from .losses import EmptyMaskError, average_reports, metrics
from .scene import RingRigSpec, Scene, make_ring_rig, render_depth, render_shaded

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SHAPE = 4
EXIT_EMPTY = 5


def _versions() -> dict[str, str]:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"omnidepth": pkg, "numpy": np.__version__, "python": platform.python_version()}


def _write_manifest(out: Path, args: argparse.Namespace, inputs: dict[str, Any], configs: dict[str, Any]) -> None:
    oio.write_json(
        out / "manifest.json",
        {
            "subcommand": args.command,
            "inputs": inputs,
            "configs": configs,
            "output_dir": str(args.out),
            "seed": getattr(args, "seed", None),
            "deterministic": bool(getattr(args, "deterministic", False)),
            "versions": _versions(),
        },
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_rig(path) -> Rig:
    """Rig JSON holds either explicit ``cameras``/``poses`` or a ``ring`` spec."""
    d = oio.load_json(path)
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: rig JSON must be an object")
    try:
        if "ring" in d:
            return make_ring_rig(RingRigSpec.from_dict(d["ring"]))
        return Rig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _check_count(name: str, items: Sequence, n: int) -> None:
    if len(items) != n:
        raise ShapeError(f"expected {n} {name}, got {len(items)}")


# -- subcommands ------------------------------------------------------------


def cmd_warp(args) -> int:
    cfg = oio.load_json(args.camera)
    try:
        cam = CameraModel.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{args.camera}: {exc}") from None
    image = oio.read_png(args.image)
    grid = ErpGrid.from_height(args.height)
    try:
        erp, mask = warp_camera_to_erp(image, cam, grid)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    out = _out_dir(args)
    oio.write_png(out / "erp.png", erp)
    oio.write_mask(out / "mask.pgm", mask)
    _write_manifest(out, args, {"image": args.image}, {"camera": args.camera, "height": args.height})
    area = np.cos(grid.latitudes)[:, None] * np.ones(grid.shape)
    summary = {
        "mask_fraction": float(mask.mean()),
        "solid_angle_fraction": float(np.sum(area * mask) / np.sum(area)),
        "width": grid.width,
        "height": grid.height,
    }
    oio.write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.scene:
        try:
            scene = Scene.from_dict(oio.load_json(args.scene))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        scene = Scene((3.0, 2.5, 4.0))
    rig = _load_rig(args.rig) if args.rig else make_ring_rig()
    grid = ErpGrid.from_height(args.height)
    try:
        depths = render_depth(scene, rig, grid)
        images = render_shaded(scene, rig, grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _out_dir(args)
    for s, (f, img) in enumerate(zip(depths, images)):
        oio.write_png(out / f"view_{s}.png", img)
        oio.write_pfm(out / f"depth_{s}.pfm", f.depth)
        oio.write_mask(out / f"mask_{s}.pgm", f.mask)
    oio.write_json(out / "rig.json", rig.to_dict())
    oio.write_json(out / "scene.json", scene.to_dict())
    _write_manifest(out, args, {}, {"scene": args.scene, "rig": args.rig, "height": args.height})
    return EXIT_OK


def cmd_net_forward(args) -> int:
    frames = [oio.read_png(p) for p in args.inputs]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ShapeError(f"input frames differ in size: {sorted(shapes)}")
    h, w, _ = frames[0].shape
    cfg_dict = oio.load_json(args.config) if args.config else {}
    if not isinstance(cfg_dict, dict):
        raise ConfigError("network config must be a JSON object")
    cfg_dict = {**cfg_dict, "S": cfg_dict.get("S", len(frames)), "input": cfg_dict.get("input", [w, h])}
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.deterministic:
        cfg_dict["deterministic"] = True
    try:
        cfg = AhaConfig.from_dict(cfg_dict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"network config: {exc}") from None
    if tuple(cfg.input_size) != (w, h):
        raise ShapeError(f"frames are {w}x{h}, config expects {cfg.input_size[0]}x{cfg.input_size[1]}")
    if len(frames) > cfg.frames:
        raise ShapeError(f"{len(frames)} frames for a {cfg.frames}-frame config")
    try:
        weights = oio.load_checkpoint(args.weights) if args.weights else init_weights(cfg)
        net = AhaNetwork(cfg, weights)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    batch = np.stack([f.transpose(2, 0, 1) for f in frames])
    taps: dict[str, np.ndarray] = {}
    depth, conf = net.forward(batch, taps=taps)
    out = _out_dir(args)
    for s in range(len(frames)):
        oio.write_pfm(out / f"pred_{s}.pfm", depth[s])
        oio.write_pfm(out / f"conf_{s}.pfm", conf[s])
    if args.dump:
        for name, arr in taps.items():
            oio.write_tensor(out / f"{name}.tensor", arr)
        oio.write_tensor(out / "depth.tensor", depth)
        oio.write_tensor(out / "confidence.tensor", conf)
    if args.save_weights:
        oio.save_checkpoint(out / "weights.npz", net.weights)
    _write_manifest(
        out, args, {"inputs": list(args.inputs), "weights": args.weights}, {"config": args.config, "network": cfg.to_dict()}
    )
    return EXIT_OK


def cmd_fuse(args) -> int:
    rig = _load_rig(args.rig)
    _check_count("depth maps", args.depths, len(rig))
    depths = [oio.read_pfm(p) for p in args.depths]
    shapes = {d.shape for d in depths}
    if len(shapes) != 1:
        raise ShapeError(f"depth maps differ in size: {sorted(shapes)}")
    h, w = depths[0].shape
    if w != 2 * h:
        raise ShapeError(f"depth maps are {w}x{h}; an ERP grid needs width = 2 * height")
    grid = ErpGrid(w, h)
    if args.masks:
        _check_count("masks", args.masks, len(rig))
        masks = [oio.read_mask(p) for p in args.masks]
    else:
        masks = [cam.fov_mask(grid.directions) for cam in rig.cameras]
    confs = None
    if args.confidences:
        _check_count("confidence maps", args.confidences, len(rig))
        confs = [oio.read_pfm(p) for p in args.confidences]
    elif args.strategy == "weighted":
        raise ConfigError("weighted fusion needs --confidences")
    if any(m.shape != grid.shape for m in masks) or (confs and any(c.shape != grid.shape for c in confs)):
        raise ShapeError("masks and confidence maps must match the depth grid")

    fields = []
    for s, d in enumerate(depths):
        m = masks[s] & np.isfinite(d) & (d > 0)
        fields.append(DepthField(grid, np.where(m, d, 0.0), m, None if confs is None else confs[s]))
    splats = splat_frames(fields, rig, args.reference, depth_tolerance=args.depth_tolerance)
    out = _out_dir(args)
    if args.strategy == "none":
        for s, f in enumerate(splats):
            oio.write_pfm(out / f"splat_{s}.pfm", f.depth)
            oio.write_mask(out / f"splat_mask_{s}.pgm", f.mask)
    else:
        fused = fuse(splats, args.strategy)
        oio.write_pfm(out / "fused.pfm", fused.depth)
        oio.write_mask(out / "fused_mask.pgm", fused.mask)
        if fused.confidence is not None:
            oio.write_pfm(out / "fused_conf.pfm", fused.confidence)
    _write_manifest(
        out,
        args,
        {"depths": list(args.depths), "masks": args.masks, "confidences": args.confidences},
        {"rig": args.rig, "strategy": args.strategy, "reference": args.reference},
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    _check_count("ground-truth maps", args.gt, len(args.pred))
    for name, lst in (("gt masks", args.mask), ("prediction masks", args.pred_mask)):
        if lst:
            _check_count(name, lst, len(args.pred))
    reports = []
    for i, (pp, gp) in enumerate(zip(args.pred, args.gt)):
        pred, gt = oio.read_pfm(pp), oio.read_pfm(gp)
        if pred.shape != gt.shape:
            raise ShapeError(f"{pp} is {pred.shape}, {gp} is {gt.shape}")
        mask_gt = oio.read_mask(args.mask[i]) if args.mask else gt > 0
        mask_pred = oio.read_mask(args.pred_mask[i]) if args.pred_mask else None
        if mask_gt.shape != gt.shape or (mask_pred is not None and mask_pred.shape != gt.shape):
            raise ShapeError("masks must match the depth maps")
        reports.append(metrics(pred, gt, mask_gt, mask_pred))
    mean = average_reports(reports)
    result = {"mean": mean.to_dict(), "per_scene": [r.to_dict() for r in reports]}
    out = _out_dir(args)
    oio.write_json(out / "metrics.json", result)
    _write_manifest(out, args, {"pred": args.pred, "gt": args.gt, "mask": args.mask, "pred_mask": args.pred_mask}, {})
    print(json.dumps(mean.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = AhaConfig(window=tuple(args.window), seed=args.seed or 0)
    rows = run_bench(args.frames, tuple(args.token_grid), cfg, repeats=args.repeats, seed=args.seed or 0)
    text = rows_to_csv(rows)
    out = _out_dir(args)
    (out / "bench.csv").write_text(text)
    _write_manifest(
        out, args, {}, {"frames": args.frames, "token_grid": args.token_grid, "window": args.window, "repeats": args.repeats}
    )
    print(text, end="")
    return EXIT_OK


def cmd_complexity(args) -> int:
    try:
        report = complexity_report(args.S, args.N, args.P)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    text = json.dumps(report, indent=2)
    if args.out:
        out = _out_dir(args)
        (out / "complexity.json").write_text(text + "\n")
        _write_manifest(out, args, {}, {"S": args.S, "N": args.N, "P": args.P})
    print(text)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omnidepth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--deterministic", action="store_true", help="value-ordered reductions")

    p = sub.add_parser("warp", help="resample a camera image onto an ERP grid")
    p.add_argument("--image", required=True)
    p.add_argument("--camera", required=True, help="camera model JSON")
    p.add_argument("--height", type=int, default=320)
    common(p)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("simulate", help="render ground-truth views of a synthetic room")
    p.add_argument("--scene", help="scene JSON (default: 6 x 5 x 8 m empty box)")
    p.add_argument("--rig", help="rig JSON (default: 4-camera 220 degree ring)")
    p.add_argument("--height", type=int, default=320)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("net-forward", help="run the depth network on ERP frames")
    p.add_argument("--inputs", nargs="+", required=True, help="one ERP PNG per frame")
    p.add_argument("--config", help="network config JSON")
    p.add_argument("--weights", help=".npz checkpoint (default: seeded initialisation)")
    p.add_argument("--dump", action="store_true", help="also write intermediate tensors")
    p.add_argument("--save-weights", action="store_true")
    common(p)
    p.set_defaults(func=cmd_net_forward)

    p = sub.add_parser("fuse", help="splat per-frame depths into the reference ERP and fuse")
    p.add_argument("--depths", nargs="+", required=True, help="one PFM per frame")
    p.add_argument("--rig", required=True)
    p.add_argument("--masks", nargs="+", help="PGM masks (default: camera FOV masks)")
    p.add_argument("--confidences", nargs="+", help="PFM confidence maps")
    p.add_argument("--strategy", choices=("mean", "nearest", "weighted", "none"), default="mean")
    p.add_argument("--reference", type=int, default=0)
    p.add_argument("--depth-tolerance", type=float, default=0.05)
    common(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="depth metrics, averaged per scene")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--mask", nargs="+", help="ground-truth validity masks (default: gt > 0)")
    p.add_argument("--pred-mask", nargs="+", help="method validity masks")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time hierarchical versus full attention")
    p.add_argument("--frames", type=int, nargs="+", default=[4, 8])
    p.add_argument("--token-grid", type=int, nargs=2, default=[10, 20], metavar=("ROWS", "COLS"))
    p.add_argument("--window", type=int, nargs=2, default=[7, 7])
    p.add_argument("--repeats", type=int, default=5)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("complexity", help="attention cost report as JSON")
    p.add_argument("--S", type=int, default=4)
    p.add_argument("--N", type=int, default=200)
    p.add_argument("--P", type=int, default=49)
    common(p, out_required=False)
    p.set_defaults(func=cmd_complexity)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmptyMaskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
