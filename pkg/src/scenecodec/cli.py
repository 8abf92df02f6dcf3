"""Command-line entry point.

Subcommands: synth, graph, train, encode, decode, eval, bench.
Exit codes: 0 success, 2 bad input, 3 format/checksum error, 4 config or
checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bitstream import FormatError, compute_bpp
from .codec import (
    build_layer_models,
    decode_scene,
    encode_scene,
    merged_store,
    train_models,
)
from .config import RunConfig, load_config
from .encoder import RELEASE_LATENT_DIMS
from .geometry import load_cloud, save_lpc
from .graph import SemanticClassTable, build_scene_graph, default_class_table, dump_graph
from .metrics import MetricsReport, evaluate
from .octree import OctreeFormatError, octree_decode, octree_encode
from .optim import CheckpointMismatch, restore_into, save_checkpoint
from .synth import generate_scene

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_FORMAT = 3
EXIT_CONFIG = 4

LOG_COLUMNS = ("epoch", "step", "fine_cd", "coarse_cd", "density", "mask_fine", "mask_coarse", "total")


def _global_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value run configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=None, help="worker threads for patch codecs")
    parser.add_argument("--json", action="store_true", help="structured output where supported")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    cfg.validate(release=False)
    return cfg


def _resolve_table(cfg: RunConfig) -> SemanticClassTable:
    return SemanticClassTable.load(cfg.class_table) if cfg.class_table else default_class_table()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenecodec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic scene")
    _global_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--points", type=int, default=50_000)
    p.add_argument("--extent", type=float, default=70.0)

    p = sub.add_parser("graph", help="build a scene graph and dump it as text")
    _global_flags(p)
    p.add_argument("--cloud", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write the dump here instead of stdout")

    p = sub.add_parser("train", help="train the four layer models on scenes")
    _global_flags(p)
    p.add_argument("--scenes", type=Path, nargs="+", required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--save-adam", action="store_true", help="include Adam state in checkpoints")

    p = sub.add_parser("encode", help="compress a scene into a .sgpc stream")
    _global_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--cloud", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--f16", action="store_true", help="store latents as float16")

    p = sub.add_parser("decode", help="reconstruct a cloud from a .sgpc stream")
    _global_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--stream", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="report reconstruction metrics")
    _global_flags(p)
    p.add_argument("--original", type=Path, required=True)
    p.add_argument("--reconstructed", type=Path, required=True)
    p.add_argument("--stream", type=Path, required=True)

    p = sub.add_parser("bench", help="rate-distortion sweep: learned codec and octree")
    _global_flags(p)
    p.add_argument("--scenes", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--depths", type=int, nargs="+", default=[4, 5, 6, 7, 8])
    return parser


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    cloud = generate_scene(cfg.seed, n_points=args.points, extent=args.extent)
    save_lpc(cloud, args.out)
    print(f"wrote {args.out} ({len(cloud)} points)")
    return EXIT_OK


def cmd_graph(args) -> int:
    cfg = _resolve_config(args)
    cloud = load_cloud(args.cloud)
    graph = build_scene_graph(cloud, _resolve_table(cfg), cfg.graph)
    text = dump_graph(graph)
    if args.out:
        args.out.write_text(text)
        print(f"wrote {args.out} ({len(graph.nodes)} nodes, {len(graph.edges)} edges)")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    table = _resolve_table(cfg)
    clouds = [load_cloud(p) for p in args.scenes]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    log_rows: list[dict] = []

    def on_epoch_end(epoch, models):
        save_checkpoint(
            merged_store(models),
            args.out_dir / f"checkpoint_epoch{epoch:04d}.sgwt",
            include_adam=args.save_adam,
        )

    models = train_models(cfg, clouds, table, on_epoch_end=on_epoch_end, log_rows=log_rows)
    save_checkpoint(merged_store(models), args.out_dir / "checkpoint.sgwt", include_adam=args.save_adam)
    with open(args.out_dir / "train_log.csv", "w") as f:
        f.write(",".join(LOG_COLUMNS) + "\n")
        for row in log_rows:
            f.write(",".join(str(row[c]) for c in LOG_COLUMNS) + "\n")
    print(f"trained {cfg.epochs} epochs; checkpoint at {args.out_dir / 'checkpoint.sgwt'}")
    return EXIT_OK


def _load_models(cfg: RunConfig, table, checkpoint: Path):
    models = build_layer_models(cfg, table)
    restore_into(merged_store(models), checkpoint)
    return models


def cmd_encode(args) -> int:
    cfg = _resolve_config(args)
    table = _resolve_table(cfg)
    models = _load_models(cfg, table, args.checkpoint)
    cloud = load_cloud(args.cloud)
    stream = encode_scene(
        cloud, models, table, cfg, precision="f16" if args.f16 else "f32"
    )
    args.out.write_bytes(stream)
    bpp = compute_bpp(stream, len(cloud))
    print(f"wrote {args.out} ({len(stream)} bytes, {bpp:.3f} bpp)")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = _resolve_config(args)
    table = _resolve_table(cfg)
    models = _load_models(cfg, table, args.checkpoint)
    cloud = decode_scene(args.stream.read_bytes(), models, cfg)
    save_lpc(cloud, args.out)
    print(f"wrote {args.out} ({len(cloud)} points)")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate(
        load_cloud(args.original),
        load_cloud(args.reconstructed),
        args.stream.read_bytes(),
    )
    if args.json:
        print(report.to_json())
    else:
        print(report.to_text())
        print(MetricsReport.csv_header())
        print(report.to_csv_row())
    return EXIT_OK


def cmd_bench(args) -> int:
    """Sweep the learned codec over the release latent sizes (seeded init)
    and the octree baseline over depths; one CSV row per operating point."""
    cfg = _resolve_config(args)
    table = _resolve_table(cfg)
    rows = ["codec,setting,bpp,d_cd,d_perp,iou"]
    for scene_path in args.scenes:
        cloud = load_cloud(scene_path)
        graph = build_scene_graph(cloud, table, cfg.graph)
        for d_z in RELEASE_LATENT_DIMS:
            sweep_cfg = cfg.with_latent_dims(d_z)
            models = build_layer_models(sweep_cfg, table)
            stream = encode_scene(cloud, models, table, sweep_cfg, graph=graph)
            recon = decode_scene(stream, models, sweep_cfg)
            report = evaluate(cloud, recon, stream)
            rows.append(
                f"learned,d_z={d_z},{report.bpp},{report.d_cd},{report.d_perp},{report.iou}"
            )
        for depth in args.depths:
            stream = octree_encode(cloud, depth)
            recon = octree_decode(stream)
            report = evaluate(cloud, recon, stream)
            rows.append(
                f"octree,depth={depth},{report.bpp},{report.d_cd},{report.d_perp},{report.iou}"
            )
    args.out.write_text("\n".join(rows) + "\n")
    print(f"wrote {args.out} ({len(rows) - 1} rows)")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "graph": cmd_graph,
    "train": cmd_train,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FormatError, OctreeFormatError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except CheckpointMismatch as exc:
        print(f"config mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError, TypeError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
