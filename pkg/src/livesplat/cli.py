"""Command-line entry points.

Subcommands:
  gen            synthesize a scene directory (images + mesh sidecars)
  train          run the two-phase pipeline on a scene directory
  eval           PSNR/MSE/DSSIM table for a checkpoint on a scene split
  stream-export  turn a checkpoint sequence into a delta stream + report
  bench          throughput comparison with/without simplification
"""

from __future__ import annotations

import argparse
import glob
import os
import sys

import numpy as np

from .errors import LivesplatError


def _cmd_gen(args):
    from .scene import SceneConfig, gen_scene, save_scene
    config = SceneConfig(frames=args.frames, seed=args.seed,
                         resolution=args.resolution)
    scene = gen_scene(config)
    save_scene(scene, args.out)
    print(f"wrote {config.frames} frames at {config.resolution}x"
          f"{config.resolution} to {args.out}")
    return 0


def _checkpoint_path(out, iteration):
    stem, ext = os.path.splitext(out)
    return f"{stem}_it{iteration:06d}{ext or '.sgme'}"


def _cmd_train(args):
    from .scene import SceneDirectory
    from .train import TrainConfig, Trainer, trainer_checkpoint_bytes
    scene = SceneDirectory(args.scene)
    config = TrainConfig(seed=args.seed, iters=args.iters,
                         enable_warmup=not args.no_warmup,
                         enable_simplify=not args.no_simplify,
                         enable_anchor=not args.no_anchor)
    trainer = Trainer(scene, config)

    def checkpoint_cb(tr):
        path = _checkpoint_path(args.out, tr.iteration)
        with open(path, "wb") as fh:
            fh.write(trainer_checkpoint_bytes(tr))

    trainer.run_warmup()
    trainer.init_cloud()
    trainer.fit(checkpoint_callback=checkpoint_cb)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "wb") as fh:
        fh.write(trainer_checkpoint_bytes(trainer))
    metrics_path = args.out + ".metrics.csv"
    with open(metrics_path, "w") as fh:
        fh.write(trainer.metrics_csv())
    print(f"trained {trainer.iteration} iterations, {trainer.cloud.count} points")
    print(f"checkpoint: {args.out}")
    print(f"metrics:    {metrics_path}")
    return 0


def _cmd_eval(args):
    from .scene import SceneDirectory
    from .train import Trainer, evaluate, trainer_from_checkpoint
    scene = SceneDirectory(args.scene)
    with open(args.ckpt, "rb") as fh:
        data = fh.read()
    trainer = trainer_from_checkpoint(data, scene)
    if args.split == "holdout":
        indices = scene.holdout_indices
    elif args.split == "train":
        indices = scene.train_indices
    else:
        indices = list(range(scene.frames))
    rows = evaluate(trainer, indices)
    print("frame,psnr,mse,dssim")
    for r in rows:
        print(f"{r['frame']},{r['psnr']:.4f},{r['mse']:.6e},{r['dssim']:.6f}")
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    mean_mse = float(np.mean([r["mse"] for r in rows]))
    mean_dssim = float(np.mean([r["dssim"] for r in rows]))
    print(f"mean,{mean_psnr:.4f},{mean_mse:.6e},{mean_dssim:.6f}")
    return 0


def _cmd_stream_export(args):
    from .storage import (DeltaStreamWriter, cloud_from_arrays,
                          load_checkpoint_bytes)
    paths = sorted(glob.glob(os.path.join(args.ckpt_seq, "*.sgme")))
    if not paths:
        print(f"no .sgme checkpoints under {args.ckpt_seq}", file=sys.stderr)
        return 1
    writer = DeltaStreamWriter()
    for i, path in enumerate(paths):
        with open(path, "rb") as fh:
            arrays, scalars, _ = load_checkpoint_bytes(fh.read())
        cloud = cloud_from_arrays(arrays)
        writer.append(cloud, int(scalars.get("iteration", i)))
    data = writer.getvalue()
    with open(args.out, "wb") as fh:
        fh.write(data)
    raw_frame = 512 * 512 * 3
    per_record = len(data) / len(paths)
    print(f"records: {len(paths)} ({writer.keyframes} keyframes, "
          f"{writer.deltas} deltas)")
    print(f"stream bytes: {len(data)} ({per_record:.1f} per record)")
    print(f"raw 512x512 RGB frame: {raw_frame} bytes")
    print(f"bytes/record vs raw frame: {per_record / raw_frame:.4f}")
    return 0


def _cmd_bench(args):
    from .bench import bench_throughput
    from .scene import SceneDirectory
    from .train import TrainConfig
    scene = SceneDirectory(args.scene)
    config = TrainConfig(seed=args.seed, iters=args.iters,
                         enable_warmup=not args.no_warmup)
    report = bench_throughput(scene, config, window=args.window)
    sys.stdout.write(report.summary())
    print(f"post-convergence throughput ratio "
          f"(simplified/unsimplified): {report.post_convergence_ratio():.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="livesplat",
        description="On-the-fly deformable Gaussian avatar training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=600)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train on a scene directory")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-warmup", action="store_true")
    p.add_argument("--no-simplify", action="store_true")
    p.add_argument("--no-anchor", action="store_true")
    p.add_argument("--iters", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a scene split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--split", choices=("holdout", "train", "all"),
                   default="holdout")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("stream-export",
                       help="encode a checkpoint sequence as a delta stream")
    p.add_argument("--ckpt-seq", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stream_export)

    p = sub.add_parser("bench", help="throughput ablation on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--iters", type=int, default=6000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=500)
    p.add_argument("--no-warmup", action="store_true")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (LivesplatError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
