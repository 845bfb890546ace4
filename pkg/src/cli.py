"""
voxfuse - Command line for incremental radiance-field reconstruction.

Subcommands:
    gen-scene    synthetic preset -> scene directory (PNG + depth + manifest)
    train        local / end2end training -> checkpoint
    reconstruct  checkpoint + scene -> global grid (per-frame fusion timing)
    render       grid checkpoint + poses -> PNGs and depth maps
    finetune     per-scene optimization of grid features and decoder
    eval         renders vs ground truth -> PSNR / SSIM / depth table (CSV + text)
    inspect      checkpoint and grid statistics

Usage:
    python src/cli.py gen-scene --preset cube_room --out scenes/cube
    python src/cli.py train --scene scenes/cube/manifest.json --stage local --out runs/local.vxf
    python src/cli.py --seed 7 eval --scene scenes/cube/manifest.json --renders out/
"""

from dotenv import load_dotenv

# Load environment variables FIRST (before hub imports)
load_dotenv()

import argparse  # noqa: E402
import csv  # noqa: E402
import io  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
from dataclasses import dataclass  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
import torch  # noqa: E402

from config import TrainConfig  # noqa: E402
from geometry.camera import CameraIntrinsics, CameraPose, CameraView, InvalidIntrinsicsError, InvalidPoseError  # noqa: E402
from grid.sparse_grid import GridSpecMismatchError  # noqa: E402
from hooks import LoggingHook, MetricsHook  # noqa: E402
from hub import HubConfig, MetricsExporter, ensure_output_dir, generate_run_id, set_config  # noqa: E402
from neural import ParameterStore  # noqa: E402
from rendering import render_image  # noqa: E402
from scene import (  # noqa: E402
    PRESETS,
    SceneDataset,
    SceneError,
    SceneFileNotFoundError,
    depth_metrics,
    export_scene,
    generate_synthetic,
    load_scene,
    psnr,
    read_depth,
    read_png,
    ssim,
    write_depth,
    write_png,
)
from training import (  # noqa: E402
    Checkpoint,
    CheckpointError,
    Trainer,
    TrainingDivergedError,
    finetune,
    load_checkpoint,
    reconstruct_scene,
    render_settings,
    save_checkpoint,
)

logger = logging.getLogger("voxfuse")

DEPTH_THRESHOLD = 0.008  # meters
LPIPS_NOTE = "LPIPS omitted (needs pretrained perceptual weights)"
SPLITS = ("all", "train", "heldout")


# =============================================================================
# HELPERS
# =============================================================================


def _positions(dataset: SceneDataset, split: str) -> list[int]:
    if split == "train":
        return list(dataset.train)
    if split == "heldout":
        return list(dataset.heldout)
    return list(range(len(dataset.views)))


def _split_of(dataset: SceneDataset, position: int) -> str:
    return "heldout" if position in dataset.heldout else "train"


def _run_hooks(name: str, stage: str | None, verbose: bool, every: int) -> tuple[MetricsExporter, list]:
    exporter = MetricsExporter(run_name=name, run_id=generate_run_id(name), stage=stage)
    return exporter, [LoggingHook(verbose=verbose, every=every), MetricsHook(exporter)]


def _require_grid(checkpoint: Checkpoint, path: str) -> None:
    if checkpoint.grid is None:
        raise CheckpointError(f"{path}: checkpoint holds no reconstructed grid (run reconstruct first)")


def _load_poses(path: Path, fallback: CameraIntrinsics) -> list[CameraView]:
    """Pose list: [{"index": i, "pose": [16 floats], "intrinsics": {...}?}, ...]."""
    if not path.exists():
        raise SceneFileNotFoundError(f"pose list not found: {path}")
    entries = json.loads(path.read_text())
    views = []
    for i, entry in enumerate(entries):
        index = int(entry.get("index", i))
        try:
            pose = CameraPose.from_matrix(entry["pose"])
        except InvalidPoseError as e:
            raise InvalidPoseError(f"{path}: pose {index}: {e}") from e
        intrinsics = CameraIntrinsics(**entry["intrinsics"]) if "intrinsics" in entry else fallback
        image = np.zeros((intrinsics.height, intrinsics.width, 3))
        views.append(CameraView(image=image, intrinsics=intrinsics, pose=pose, frame_index=index))
    return views


def _format(value: float) -> str:
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, float) and math.isnan(value):
        return ""
    return f"{value:.6f}"


@dataclass
class EvalRow:
    view: int
    split: str
    psnr: float
    ssim: float
    abs_err: float = math.nan
    acc: float = math.nan


def _mean(values: list[float]) -> float:
    finite = [v for v in values if not math.isnan(v)]
    return float(np.mean(finite)) if finite else math.nan


# =============================================================================
# COMMANDS
# =============================================================================


def cmd_gen_scene(args, hub: HubConfig) -> int:
    dataset = generate_synthetic(args.preset, resolution=args.resolution, n_frames=args.frames, seed=hub.seed)
    manifest = export_scene(dataset, ensure_output_dir(args.out))
    print(f"Scene: {dataset.name} ({len(dataset)} frames, {len(dataset.train)} train, {len(dataset.heldout)} heldout)")
    print(f"Manifest: {manifest}")
    return 0


def cmd_train(args, hub: HubConfig) -> int:
    dataset = load_scene(args.scene)
    exporter, hooks = _run_hooks(f"train-{args.stage}", args.stage, not args.quiet, args.log_every)

    if args.resume:
        checkpoint = load_checkpoint(args.resume)
        overrides = {"iterations": args.iters} if args.iters is not None else {}
        trainer = Trainer.from_checkpoint(dataset, checkpoint, hooks, **overrides)
    else:
        # seed precedence: --seed, then the config file, then VOXFUSE_SEED
        data = {"seed": hub.seed}
        if args.config:
            data.update(json.loads(Path(args.config).read_text()))
        config = TrainConfig.from_dict(data)
        changes = {"stage": args.stage}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.iters is not None:
            changes["iterations"] = args.iters
        config = config.replace(**changes)
        params, arch = None, None
        if args.init:
            init = load_checkpoint(args.init)
            params = ParameterStore.from_state_dict(init.params, seed=config.seed)
            arch = init.arch
        elif args.stage == "end2end":
            logger.warning("end2end training without --init starts from random parameters")
        trainer = Trainer(dataset, config, arch, params, hooks=hooks, dtype=hub.dtype)

    checkpoint = trainer.run()
    path = save_checkpoint(checkpoint, args.out)
    exporter.set_stats("final_loss", trainer.last_loss)
    exporter.set_stats("parameters", trainer.params.numel())
    metrics_path = exporter.export()
    print(f"Checkpoint: {path}")
    print(f"Metrics: {metrics_path}")
    return 0


def cmd_reconstruct(args, hub: HubConfig) -> int:
    dataset = load_scene(args.scene)
    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint.train_config
    if args.neighbors is not None:
        config = config.replace(neighbors=args.neighbors)
    params = ParameterStore.from_state_dict(checkpoint.params, seed=config.seed)
    exporter, hooks = _run_hooks("reconstruct", None, not args.quiet, 1)

    result = reconstruct_scene(dataset, params, checkpoint.arch, config, hooks, keep_snapshots=bool(args.snapshots))
    grid = result.state.grid
    if args.snapshots:
        directory = ensure_output_dir(args.snapshots)
        for local, snapshot in zip(result.locals, result.snapshots):
            frame = dataset.train_views[local.frame].frame_index
            np.savez(directory / f"global_{frame:04d}.npz", coords=snapshot.coords.numpy(), features=snapshot.features.numpy())

    out = Checkpoint(
        params=params.state_dict(),
        train_config=config,
        arch=checkpoint.arch,
        grid=grid,
        stage=checkpoint.stage,
        iteration=checkpoint.iteration,
        rng_state=checkpoint.rng_state,
    )
    path = save_checkpoint(out, args.out)
    seconds = result.seconds
    exporter.set_stats("active_voxels", len(grid))
    exporter.set_timing("mean_frame_seconds", float(np.mean(seconds)))
    exporter.export()

    print("-" * 60)
    print(f"Fused {len(seconds)} frames into {len(grid)} voxels")
    print(f"Per-frame fusion: mean {np.mean(seconds) * 1000:.1f} ms, max {np.max(seconds) * 1000:.1f} ms")
    print(f"Grid checkpoint: {path}")
    return 0


def cmd_render(args, hub: HubConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    _require_grid(checkpoint, args.checkpoint)
    dataset = load_scene(args.scene)
    settings = render_settings(dataset, checkpoint.train_config)
    params = ParameterStore.from_state_dict(checkpoint.params)

    if args.poses:
        views = _load_poses(Path(args.poses), dataset.views[0].intrinsics)
    else:
        views = [dataset.views[i] for i in _positions(dataset, args.split)]

    out = ensure_output_dir(args.out)
    for view in views:
        image, depth = render_image(view, checkpoint.grid, params, checkpoint.arch, settings)
        write_png(out / "images" / f"{view.frame_index:04d}.png", image)
        write_depth(out / "depth" / f"{view.frame_index:04d}.npy", depth)
    print(f"Rendered {len(views)} views to {out}")
    return 0


def _rendered_views(args, dataset: SceneDataset, positions: list[int]) -> dict[int, tuple[np.ndarray, np.ndarray | None]]:
    """Frame position -> (image, depth) from a render directory or a checkpoint."""
    renders: dict[int, tuple[np.ndarray, np.ndarray | None]] = {}
    if args.renders:
        root = Path(args.renders)
        for position in positions:
            frame = dataset.views[position].frame_index
            image_path = root / "images" / f"{frame:04d}.png"
            if not image_path.exists():
                raise SceneFileNotFoundError(f"render for frame {frame} not found: {image_path}")
            depth_path = root / "depth" / f"{frame:04d}.npy"
            renders[position] = (read_png(image_path), read_depth(depth_path) if depth_path.exists() else None)
        return renders

    checkpoint = load_checkpoint(args.checkpoint)
    config = checkpoint.train_config
    if args.neighbors is not None:
        config = config.replace(neighbors=args.neighbors)
    params = ParameterStore.from_state_dict(checkpoint.params, seed=config.seed)
    grid = checkpoint.grid
    if grid is None or args.neighbors is not None:
        grid = reconstruct_scene(dataset, params, checkpoint.arch, config).state.grid
    settings = render_settings(dataset, config)
    for position in positions:
        renders[position] = render_image(dataset.views[position], grid, params, checkpoint.arch, settings)
    return renders


def cmd_eval(args, hub: HubConfig) -> int:
    if not args.renders and not args.checkpoint:
        raise ValueError("eval needs --renders DIR or --checkpoint PATH")
    dataset = load_scene(args.scene)
    positions = _positions(dataset, args.split)
    if not positions:
        raise ValueError(f"split {args.split!r} has no frames")
    renders = _rendered_views(args, dataset, positions)

    rows = []
    for position in positions:
        view = dataset.views[position]
        image, depth = renders[position]
        row = EvalRow(view.frame_index, _split_of(dataset, position), psnr(image, view.image), ssim(image, view.image))
        oracle = dataset.depth_for(position)
        if args.depth and depth is not None and oracle is not None:
            try:
                metrics = depth_metrics(depth, oracle, args.threshold)
                row.abs_err, row.acc = metrics.abs_err, metrics.accuracy
            except ValueError:
                logger.warning("frame %d: no valid depth pixels", view.frame_index)
        rows.append(row)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["view", "psnr", "ssim", "abs_err", "acc"])
    for row in rows:
        writer.writerow([row.view, _format(row.psnr), _format(row.ssim), _format(row.abs_err), _format(row.acc)])
    writer.writerow(
        [
            "mean",
            _format(_mean([r.psnr for r in rows])),
            _format(_mean([r.ssim for r in rows])),
            _format(_mean([r.abs_err for r in rows])),
            _format(_mean([r.acc for r in rows])),
        ]
    )
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        Path(args.csv).write_text(buffer.getvalue())

    print("=" * 60)
    print(f"{'view':>6} {'split':>8} {'PSNR':>9} {'SSIM':>7} {'AbsErr':>9} {'Acc':>6}")
    for row in rows:
        print(
            f"{row.view:>6} {row.split:>8} {_format(row.psnr):>9.9} {_format(row.ssim):>7.7} "
            f"{_format(row.abs_err):>9.9} {_format(row.acc):>6.6}"
        )
    print("-" * 60)
    print(f"mean PSNR {_format(_mean([r.psnr for r in rows]))}  mean SSIM {_format(_mean([r.ssim for r in rows]))}")
    if args.depth:
        for split, label in (("train", "input views"), ("heldout", "novel views")):
            chosen = [r for r in rows if r.split == split and not math.isnan(r.abs_err)]
            if chosen:
                print(
                    f"depth on {label}: abs err {_mean([r.abs_err for r in chosen]):.4f} m, "
                    f"acc@{args.threshold * 1000:.0f}mm {_mean([r.acc for r in chosen]):.3f}"
                )
    print(LPIPS_NOTE)
    print("=" * 60)
    if args.csv:
        print(f"CSV: {args.csv}")
    else:
        print(buffer.getvalue(), end="")
    return 0


def cmd_finetune(args, hub: HubConfig) -> int:
    dataset = load_scene(args.scene)
    checkpoint = load_checkpoint(args.checkpoint)
    _require_grid(checkpoint, args.checkpoint)
    changes = {"stage": "finetune", "iterations": args.iters, "subdivide_stride": args.stride}
    if args.eval_every is not None:
        changes["eval_every"] = args.eval_every
    if args.seed is not None:
        changes["seed"] = args.seed
    config = checkpoint.train_config.replace(**changes)
    exporter, hooks = _run_hooks("finetune", "finetune", not args.quiet, args.log_every)

    result = finetune(dataset, config, checkpoint, hooks)
    path = save_checkpoint(result, args.out)
    exporter.set_stats("active_voxels", len(result.grid))
    metrics_path = exporter.export()
    print(f"Fine-tuned grid: {len(result.grid)} voxels, voxel size {result.grid.spec.voxel_size:g}")
    print(f"Checkpoint: {path}")
    print(f"Metrics: {metrics_path}")
    return 0


def cmd_inspect(args, hub: HubConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    params = sum(t.numel() for t in checkpoint.params.values())
    print("=" * 60)
    print(f"Checkpoint: {args.checkpoint} (format v{checkpoint.version})")
    print(f"  stage: {checkpoint.stage}  iteration: {checkpoint.iteration}")
    print(f"  parameters: {params} in {len(checkpoint.params)} tensors")
    grid = checkpoint.grid
    if grid is None:
        print("  grid: none")
    else:
        print(f"  active voxels: {len(grid)}")
        print(f"  voxel size: {grid.spec.voxel_size:g}  channels: {grid.spec.channels}")
        bounds = grid.bounds()
        if bounds is not None:
            lo, hi = bounds
            print(f"  bounds: {np.round(lo, 4).tolist()} .. {np.round(hi, 4).tolist()}")
        norms = torch.linalg.vector_norm(grid.features, dim=0) if len(grid) else torch.zeros(grid.spec.channels)
        print("  channel norms: " + " ".join(f"{float(n):.3f}" for n in norms))
    print("=" * 60)
    return 0


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "render": cmd_render,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


# =============================================================================
# PARSER
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxfuse", description="Incremental neural radiance-field reconstruction")
    parser.add_argument("--seed", type=int, default=None, help="Random seed (default: VOXFUSE_SEED)")
    parser.add_argument("--threads", type=int, default=None, help="Worker thread cap (default: VOXFUSE_THREADS)")
    parser.add_argument("--precision", choices=("f32", "f64"), default=None, help="Float precision (default: VOXFUSE_PRECISION)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="Generate a synthetic scene")
    p.add_argument("--preset", choices=sorted(PRESETS), default="cube_room")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--frames", type=int, default=12)

    p = sub.add_parser("train", help="Train the local or end-to-end stage")
    p.add_argument("--scene", required=True, help="Scene manifest")
    p.add_argument("--stage", choices=("local", "end2end"), default="local")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--init", help="Checkpoint to start from (end2end)")
    p.add_argument("--resume", help="Continue a checkpointed run")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("reconstruct", help="Fuse a scene into a global grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--neighbors", type=int, default=None, help="Override K")
    p.add_argument("--snapshots", help="Directory for per-frame global volumes (.npz)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("render", help="Render views of a grid checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--poses", help="JSON pose list (default: the scene's frames)")
    p.add_argument("--split", choices=SPLITS, default="all")
    p.add_argument("--out", required=True)

    p = sub.add_parser("finetune", help="Per-scene optimization with prune and subdivide")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--stride", type=int, default=10_000, help="Prune + subdivide every N iterations")
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="Score renders against ground truth")
    p.add_argument("--scene", required=True)
    source = p.add_mutually_exclusive_group()
    source.add_argument("--renders", help="Directory written by render")
    source.add_argument("--checkpoint", help="Render in-process from a checkpoint")
    p.add_argument("--neighbors", type=int, default=None, help="Reconstruct with K neighbor views first")
    p.add_argument("--split", choices=SPLITS, default="all")
    p.add_argument("--depth", action="store_true", help="Depth metrics on input and novel views")
    p.add_argument("--threshold", type=float, default=DEPTH_THRESHOLD, help="Depth accuracy threshold (m)")
    p.add_argument("--csv", help="Write the table here")

    p = sub.add_parser("inspect", help="Checkpoint and grid statistics")
    p.add_argument("--checkpoint", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = {"precision": args.precision, "threads": args.threads, "seed": args.seed}
        hub = HubConfig(**{k: v for k, v in overrides.items() if v is not None})
        set_config(hub)
        hub.apply()
        return COMMANDS[args.command](args, hub)
    except (
        SceneError,
        CheckpointError,
        InvalidPoseError,
        InvalidIntrinsicsError,
        GridSpecMismatchError,
        TrainingDivergedError,
        FileNotFoundError,
        ValueError,
    ) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
