"""Command-line surface: tile, ingest, retrieve, train, eval, cost, hybrid,
synth.

Exit codes: 0 success, 1 validation error, 2 I/O error, 64 usage error.
A JSON config file (--config) may supply any long flag by name; explicit
command-line values win. All randomness is seeded, so every subcommand is
byte-reproducible given identical inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import cost_model, finetune, hybrid, metrics, scoring, store, synth, super_image
from .errors import QasirError
from .manifest import load_manifest

__all__ = ["main"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_rankings_csv(path: str) -> dict[str, list[str]]:
    rankings: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("query_id,"):
            raise QasirError(f"{path}: expected a rankings CSV header")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rankings.setdefault(parts[0], []).append(parts[2])
    return rankings


def _rankings_csv(rankings: dict[str, list[tuple[str, float]]]) -> str:
    lines = ["query_id,rank,video_id,score"]
    for qid in sorted(rankings):
        for rank, (vid, score) in enumerate(rankings[qid], start=1):
            lines.append(f"{qid},{rank},{vid},{score:.9f}")
    return "\n".join(lines) + "\n"


# --- subcommands ---


def _cmd_tile(args) -> int:
    manifest = load_manifest(args.manifest)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.videos:
        if not entry.frames:
            continue
        frames = [np.asarray(Image.open(p).convert("RGB"), dtype=np.uint8) for p in entry.frames]
        if args.fps and entry.duration_sec > 0:
            target = max(1, round(entry.duration_sec * args.fps))
            frames = super_image.sample_uniform(frames, target)
        seq = super_image.tile_sequential(
            frames, args.grid, args.cell_px, video_id=entry.video_id, fps_used=args.fps
        )
        for k, img in enumerate(seq.images):
            Image.fromarray(img.canvas, mode="RGB").save(outdir / f"{entry.video_id}_si{k}.png")
        print(f"{entry.video_id}: {len(seq.images)} super images")
    return EXIT_OK


def _cmd_ingest(args) -> int:
    merged = None
    for path in args.files:
        loaded = store.ingest(path, normalize=False)
        merged = loaded if merged is None else merged.merged_with(loaded)
        print(f"{path}: {len(loaded.videos)} videos, {len(loaded.queries)} queries, d={loaded.dim}")
    if args.out and merged is not None:
        store.write_qemb(merged, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def _scorer_from_args(args):
    if args.mode == "finetuned":
        if not args.checkpoint:
            raise QasirError("--mode finetuned requires --checkpoint")
        params = finetune.load_checkpoint(args.checkpoint)
        return finetune.FinetunedScorer(params, temperature=args.temperature)
    return scoring.PoolScorer(args.pool, temperature=args.temperature)


def _cmd_retrieve(args) -> int:
    data = store.ingest(args.emb)
    scorer = _scorer_from_args(args)
    queries = [data.queries[qid] for qid in data.query_ids()]
    rankings = scoring.rank_all(queries, data, scorer)
    _emit(_rankings_csv(rankings), args.out)
    return EXIT_OK


def _cmd_train(args) -> int:
    data = store.ingest(args.emb)
    config = finetune.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        hidden=args.hidden,
        beta_v=args.beta,
        beta_t=args.beta,
        heads=args.heads,
        adapter_depth=args.adapter_depth,
        temporal=not args.no_temporal,
        loss=finetune.LossConfig(mode=args.loss, temperature=args.tau),
    )
    params, history = finetune.train(data, config)
    finetune.save_checkpoint(params, args.out)
    if args.history:
        finetune.write_history(history, args.history)
    first = history[0] if len(history) else float("nan")
    last = history[-1] if len(history) else float("nan")
    print(f"steps={len(history)} first_loss={first:.6f} last_loss={last:.6f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    data = store.ingest(args.emb)
    rankings = _load_rankings_csv(args.rankings)
    truth = {qid: q.video_id for qid, q in data.queries.items()}
    annotations = None
    if args.mv_groups:
        if args.manifest:
            ratios = load_manifest(args.manifest, check_files=False).moment_ratios()
        else:
            # spans from the embedding file against unit-duration videos
            ratios = {
                qid: q.moment_span[1] - q.moment_span[0]
                for qid, q in data.queries.items()
                if q.moment_span is not None
            }
        annotations = [metrics.MomentAnnotation(qid, r) for qid, r in sorted(ratios.items())]
    rep = metrics.report(rankings, truth, annotations)
    text = metrics.report_to_csv(rep) if args.format == "csv" else metrics.report_to_text(rep)
    _emit(text, args.out)
    return EXIT_OK


def _cmd_cost(args) -> int:
    profile = cost_model.get_profile(args.backbone)
    if args.table:
        rows = cost_model.cost_table(profile, args.dataset_stats, finetuned=args.finetuned)
        text = (
            cost_model.cost_table_csv(rows)
            if args.format == "csv"
            else cost_model.cost_table_text(rows)
        )
        _emit(text, args.out)
        return EXIT_OK
    if args.avg_frames is not None:
        images = args.avg_frames / (args.grid * args.grid)
        if args.exact_images:
            images = args.avg_frames  # already an image count
    elif args.dataset_stats:
        images = cost_model.get_dataset(args.dataset_stats).avg_images[args.grid]
    else:
        raise QasirError("cost needs --avg-frames or --dataset-stats")
    head = (
        cost_model.finetuned_head(images, profile.dim)
        if args.finetuned
        else cost_model.zero_shot_head(images, profile.dim)
    )
    cost = cost_model.video_text_gflops(profile, images, head)
    _emit(
        f"backbone={profile.name} grid={args.grid} images={images:.4f} "
        f"total={cost.total:.1f} GFLOPs ({cost.total:.1e})\n",
        args.out,
    )
    return EXIT_OK


def _parse_model_spec(spec: str | None) -> tuple[str | None, int | None]:
    """'clip-b32@3' -> (backbone, grid); bare 'clip-b32' leaves grid unset."""
    if not spec:
        return None, None
    if "@" in spec:
        name, _, grid = spec.partition("@")
        return name, int(grid)
    return spec, None


def _cmd_hybrid(args) -> int:
    high_store = store.ingest(args.high_emb)
    low_store = store.ingest(args.low_emb)
    stats = cost_model.get_dataset(args.dataset_stats) if args.dataset_stats else None

    def handle(name, emb, model_spec, pool, avg_images):
        backbone, grid = _parse_model_spec(model_spec)
        if avg_images is None and stats is not None and grid is not None:
            avg_images = stats.avg_images.get(grid)
        return hybrid.ModelHandle(name, emb, scoring.PoolScorer(pool),
                                  backbone=backbone, avg_images=avg_images)

    high = handle("high", high_store, args.high, args.high_pool, args.high_avg_images)
    low = handle("low", low_store, args.low, args.low_pool, args.low_avg_images)
    config = hybrid.HybridConfig(high=high, low=low, rerank_depth=args.rerank)
    has_cost = bool(high.backbone and low.backbone and high.avg_images and low.avg_images)
    size = args.corpus_size or (stats.corpus_size if stats else len(high_store.videos))

    if args.sweep:
        depths = sorted({int(r) for r in args.sweep.split(",")})
        truth = {qid: q.video_id for qid, q in high_store.queries.items()}
        rankings_by_depth = hybrid.sweep_depths(config, depths)
        lines = ["R,R@1,R@5,R@10,R@100,sumR" + (",gflops" if has_cost else "")]
        for depth in depths:
            rep = metrics.report(rankings_by_depth[depth], truth)
            row = f"{depth}," + ",".join(f"{rep.recall_at[k]:.4f}" for k in metrics.RECALL_KS)
            row += f",{rep.sum_r:.4f}"
            if has_cost:
                swept = hybrid.HybridConfig(high=high, low=low, rerank_depth=depth)
                row += f",{hybrid.hybrid_cost(swept, size):.4f}"
            lines.append(row)
        _emit("\n".join(lines) + "\n", args.out)
        return EXIT_OK

    lines = ["query_id,rank,video_id,stage"]
    for qid in sorted(high_store.queries):
        ranking = hybrid.hybrid_retrieve(qid, config)
        for rank, (vid, stage) in enumerate(ranking, start=1):
            lines.append(f"{qid},{rank},{vid},{stage}")
    _emit("\n".join(lines) + "\n", args.out)
    if has_cost:
        print(f"hybrid cost: {hybrid.hybrid_cost(config, size):.1f} GFLOPs", file=sys.stderr)
    return EXIT_OK


def _cmd_synth(args) -> int:
    config = synth.SynthConfig(
        seed=args.seed,
        num_videos=args.videos,
        k_min=args.k,
        k_max=args.k_max or args.k,
        dim=args.d,
        noise_sigma=args.sigma,
        moment_fraction=args.moment_fraction,
    )
    data = synth.generate(config)
    store.write_qemb(data, args.out)
    print(f"wrote {args.out}: {len(data.videos)} videos, {len(data.queries)} queries, d={data.dim}")
    return EXIT_OK


# --- wiring ---


def _build_parser() -> _Parser:
    parser = _Parser(prog="qasir", description=__doc__)
    parser.add_argument("--config", help="JSON file of default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tile", help="compose frame PNGs into super images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", type=int, default=2)
    p.add_argument("--cell-px", type=int, default=224, dest="cell_px")
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_tile)

    p = sub.add_parser("ingest", help="validate and merge QEMB files")
    p.add_argument("files", nargs="+")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("retrieve", help="rank the corpus for every query")
    p.add_argument("--emb", required=True)
    p.add_argument("--mode", choices=["zero-shot", "finetuned"], default="zero-shot")
    p.add_argument("--pool", choices=["attn", "mean", "max"], default="attn")
    p.add_argument("--checkpoint")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_retrieve)

    p = sub.add_parser("train", help="fit adapters and temporal head")
    p.add_argument("--emb", required=True)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss", choices=["literal", "infonce"], default="infonce")
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--hidden", type=int, default=192)
    p.add_argument("--adapter-depth", type=int, default=2, dest="adapter_depth")
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--no-temporal", action="store_true", dest="no_temporal")
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="recall metrics from a rankings CSV")
    p.add_argument("--emb", required=True)
    p.add_argument("--rankings", required=True)
    p.add_argument("--mv-groups", action="store_true", dest="mv_groups")
    p.add_argument("--manifest")
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("cost", help="video-text GFLOPs accounting")
    p.add_argument("--backbone", required=True)
    p.add_argument("--grid", type=int, default=1)
    p.add_argument("--avg-frames", type=float, default=None, dest="avg_frames")
    p.add_argument("--exact-images", action="store_true", dest="exact_images",
                   help="treat --avg-frames as a super-image count, skip the grid division")
    p.add_argument("--dataset-stats", dest="dataset_stats")
    p.add_argument("--finetuned", action="store_true")
    p.add_argument("--table", action="store_true", help="emit the full per-grid sweep")
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_cost)

    p = sub.add_parser("hybrid", help="two-stage screen + re-rank retrieval")
    p.add_argument("--high-emb", required=True, dest="high_emb")
    p.add_argument("--low-emb", required=True, dest="low_emb")
    p.add_argument("-R", "--rerank", type=int, default=400, dest="rerank",
                   help="re-rank depth; 400 suits ActivityNet/TVR-scale corpora, "
                        "800 Charades-scale (default 400)")
    p.add_argument("--high", help="screening model as backbone@grid, e.g. clip-b32@3")
    p.add_argument("--low", help="re-ranking model as backbone@grid, e.g. clip-l14@2")
    p.add_argument("--high-pool", default="attn", dest="high_pool")
    p.add_argument("--low-pool", default="attn", dest="low_pool")
    p.add_argument("--high-avg-images", type=float, dest="high_avg_images")
    p.add_argument("--low-avg-images", type=float, dest="low_avg_images")
    p.add_argument("--dataset-stats", dest="dataset_stats")
    p.add_argument("--corpus-size", type=int, dest="corpus_size")
    p.add_argument("--sweep", help="comma-separated re-rank depths; emits a "
                                   "metrics (and cost) table instead of rankings")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_hybrid)

    p = sub.add_parser("synth", help="deterministic synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=100)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--k-max", type=int, default=None, dest="k_max")
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--moment-fraction", type=float, default=0.125, dest="moment_fraction")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    return parser


def _apply_config(parser: _Parser, argv: list[str]) -> list[str]:
    """Read --config if present and turn its keys into defaults."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        parser.error("--config needs a path")
    cfg_path = argv[idx + 1]
    try:
        cfg = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"qasir: cannot read config: {exc}", file=sys.stderr)
        sys.exit(EXIT_IO)
    except json.JSONDecodeError as exc:
        print(f"qasir: bad config: {exc}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    rest = argv[:idx] + argv[idx + 2 :]
    insert: list[str] = []
    for key, value in cfg.items():
        flag = f"--{key.replace('_', '-')}"
        if flag in rest:
            continue  # explicit flags win
        if isinstance(value, bool):
            if value:
                insert.append(flag)
        else:
            insert.extend([flag, str(value)])
    return rest + insert


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    argv = _apply_config(parser, argv)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except QasirError as exc:
        print(f"qasir: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BrokenPipeError:
        # downstream consumer (head, less) closed the pipe; not an error
        try:
            sys.stdout.close()
        except OSError:
            pass
        return EXIT_OK
    except OSError as exc:
        print(f"qasir: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
