"""Command-line entry point: ``gtforensics <command> [--config FILE] [--set key=value ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, selftest
from .config import RunConfig, load_config
from .data import KINDS, CorruptionSpec, corrupt, gen_dataset, read_dataset, write_dataset
from .data import manifest as manifest_io
from .data import netpbm
from .errors import ConfigError, DataError
from .graph_transformer import metric_csv, save_classifier
from .numerics import NumericError, ShapeError
from .numerics.serialize import atomic_write
from .patch_graph import assemble_graph, build_knn_adjacency, partition_image, write_graph_dump
from .relevancy import explain, write_outputs
from .ssl import pretrain, save_encoder
from .ssl.pretrain import entropy_csv, trace_csv

log = logging.getLogger("gtforensics")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _paths(cfg: RunConfig) -> tuple[Path, Path, Path]:
    return Path(cfg.data_dir), Path(cfg.checkpoint_dir), Path(cfg.output_dir)


def cmd_gen_data(cfg: RunConfig, args) -> None:
    data, _, _ = _paths(cfg)
    for split, n, seed in (("train", cfg.n_train, cfg.seed),
                           ("test", cfg.n_test, cfg.seed + cfg.test_seed_offset)):
        samples = gen_dataset(n, cfg.image_size, cfg.patch_size, seed)
        write_dataset(samples, data / split)
        log.info("wrote %d %s samples to %s", n, split, data / split)


def _manifest(cfg: RunConfig, given: str | None, split: str) -> Path:
    path = Path(given) if given else Path(cfg.data_dir) / split / "manifest.json"
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    return path


def cmd_pretrain(cfg: RunConfig, args) -> None:
    _, ckpt, out = _paths(cfg)
    train = pipeline.load_split(_manifest(cfg, args.manifest, "train"))
    log.info("effective lr = 5e-4 x %d/256 x %g = %.6g", cfg.batch_size, cfg.lr_mult, cfg.lr)
    state, trace = pretrain(train.images, cfg.pretrain_config(), cfg.pretrain_epochs, cfg.seed)
    save_encoder(ckpt, state.student, state.cfg)
    atomic_write(out / "pretrain_loss.csv", trace_csv(trace))
    atomic_write(out / "pretrain_entropy.csv", entropy_csv(trace))


def cmd_train(cfg: RunConfig, args) -> None:
    _, ckpt, out = _paths(cfg)
    encoder, enc_cfg = pipeline.require_encoder(ckpt)
    train = pipeline.load_split(_manifest(cfg, args.manifest, "train"))
    test_path = Path(args.test_manifest) if args.test_manifest else Path(cfg.data_dir) / "test/manifest.json"
    test = pipeline.load_split(test_path) if test_path.exists() else None
    params, gcfg, whitener, trace = pipeline.fit_classifier(encoder, enc_cfg, cfg, train, test)
    save_classifier(ckpt, params, gcfg, whitener)
    atomic_write(out / "classifier_metrics.csv", metric_csv(trace))


def cmd_eval(cfg: RunConfig, args) -> None:
    _, ckpt, out = _paths(cfg)
    encoder, enc_cfg = pipeline.require_encoder(ckpt)
    params, gcfg, whitener = pipeline.require_classifier(ckpt)
    split = pipeline.load_split(_manifest(cfg, args.manifest, "test"))
    if args.corruption is None:
        kinds: tuple = ()
    elif args.corruption == "all":
        kinds = KINDS
    else:
        kinds = (args.corruption,)
    rows = pipeline.corruption_sweep(encoder, enc_cfg, params, gcfg, whitener, split, kinds, cfg.seed)
    target = Path(args.out) if args.out else out / "eval.csv"
    atomic_write(target, pipeline.sweep_csv(rows))
    clean = rows[0]
    log.info("clean accuracy %.4f auc %.4f -> %s", clean["accuracy"], clean["auc"], target)


def cmd_explain(cfg: RunConfig, args) -> None:
    _, ckpt, out = _paths(cfg)
    encoder, enc_cfg = pipeline.require_encoder(ckpt)
    params, gcfg, whitener = pipeline.require_classifier(ckpt)
    image = netpbm.load(args.image)
    if image.ndim != 3:
        raise DataError(f"{args.image} is not a colour (P6) image")
    grid, adj = pipeline.grid_and_adjacency(gcfg, enc_cfg.image_size, enc_cfg.patch_size)
    feats = whitener(pipeline.patch_features(encoder, enc_cfg, image[None]))[0]
    rel = explain(params, gcfg, feats, adj, grid, args.target)
    stem = args.stem or Path(args.image).stem
    for p in write_outputs(Path(args.out) if args.out else out, rel, grid, image, stem):
        log.info("wrote %s", p)


def cmd_corrupt(cfg: RunConfig, args) -> None:
    spec = CorruptionSpec(args.kind, args.level)
    src = _manifest(cfg, args.manifest, "test")
    dest = Path(args.out) if args.out else Path(cfg.data_dir) / f"test-{args.kind}-{args.level}"
    samples = read_dataset(src)
    for i, s in enumerate(samples):
        s.image = corrupt(s.image, spec, cfg.seed + i)
    write_dataset(samples, dest)
    log.info("wrote %d corrupted samples to %s", len(samples), dest)


def cmd_graph_dump(cfg: RunConfig, args) -> None:
    image = netpbm.load(args.image)
    if image.ndim == 2:
        image = image[..., None]
    if args.features == "encoder":
        encoder, enc_cfg = pipeline.require_encoder(cfg.checkpoint_dir)
        feats = pipeline.patch_features(encoder, enc_cfg, image[None])[0]
        grid = partition_image(image, enc_cfg.patch_size)[1]
    else:
        patches, grid = partition_image(image, cfg.patch_size)
        feats = patches.reshape(grid.n, -1)
    graph = assemble_graph(feats, build_knn_adjacency(grid, cfg.k))
    target = Path(args.out) if args.out else Path(cfg.output_dir) / "graph.txt"
    write_graph_dump(target, graph, cfg.k)
    log.info("wrote %d-node graph to %s", grid.n, target)


def cmd_selftest(cfg: RunConfig, args) -> int:
    results = selftest.run(args.suite or None)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gtforensics", description=__doc__)
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="write synthetic train/test splits")
    p = sub.add_parser("pretrain", help="self-distillation pre-training of the encoder")
    p.add_argument("--manifest")
    p = sub.add_parser("train", help="fit the graph classifier on frozen features")
    p.add_argument("--manifest")
    p.add_argument("--test-manifest")
    p = sub.add_parser("eval", help="accuracy/AUC, optionally swept over corruptions")
    p.add_argument("--manifest")
    p.add_argument("--corruption", choices=(*KINDS, "all"))
    p.add_argument("--out")
    p = sub.add_parser("explain", help="relevancy heatmap for one image")
    p.add_argument("image")
    p.add_argument("--target", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--stem")
    p = sub.add_parser("corrupt", help="write corrupted copies of a manifest")
    p.add_argument("--manifest")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--level", required=True, type=int)
    p.add_argument("--out")
    p = sub.add_parser("graph-dump", help="write the patch graph of one image as text")
    p.add_argument("image")
    p.add_argument("--features", choices=("pixels", "encoder"), default="pixels")
    p.add_argument("--out")
    p = sub.add_parser("selftest", help="run the built-in numerical check suites")
    p.add_argument("--suite", action="append", choices=list(selftest.SUITES))
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "train": cmd_train, "eval": cmd_eval,
    "explain": cmd_explain, "corrupt": cmd_corrupt, "graph-dump": cmd_graph_dump,
    "selftest": cmd_selftest,
}


def _fail(code: int, exc: BaseException) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"ERROR {code}: {msg}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if args.command == "corrupt":
            CorruptionSpec(args.kind, args.level)
        if args.command == "explain" and args.target not in (0, 1):
            raise ConfigError(f"target class must be 0 or 1, got {args.target}")
        log.debug("config %s", json.dumps(cfg.to_dict(), sort_keys=True))
        rc = COMMANDS[args.command](cfg, args)
        return int(rc or 0)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (DataError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, exc)
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except ShapeError as exc:
        return _fail(EXIT_DATA, exc)


if __name__ == "__main__":
    sys.exit(main())
