"""Command-line entry point: train, cluster, inspect, sweep, replay.

Exit codes: 0 success, 2 usage, 3 data, 4 numerical.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ContractError, DataError, NumericalError
from .graphdata import GraphDataset, generate_clique_dataset, load_tu_dataset, save_tu_dataset
from .network import NetworkConfig, load_checkpoint, save_checkpoint
from .training import (TrainConfig, attention_report, clustering_accuracy, cross_validate, embed_graphs,
                       kmeanspp_cluster, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
DATA_ROOT_ENV = "SUBGATT_DATA_ROOT"
SWEEP_AXES = {"T": "T", "L": "L", "K": "K", "subgatt-layers": "subgatt_layers"}

log = logging.getLogger("subgatt")


class UsageError(Exception):
    pass


# -- argument parsing ------------------------------------------------------


def _add_data_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--dataset", help=f"TU dataset directory (relative paths also tried under ${DATA_ROOT_ENV})")
    src.add_argument("--synthetic-clique", action="store_true", help="generate the 50-graph clique dataset")
    p.add_argument("--name", help="dataset file prefix (default: directory name)")
    p.add_argument("--data-seed", type=int, help="seed for the synthetic dataset (default: --seed)")


def _add_model_args(p):
    d = NetworkConfig()
    t = TrainConfig()
    p.add_argument("--T", type=int, default=d.T)
    p.add_argument("--L", type=int, default=d.L)
    p.add_argument("--K", type=int, default=d.K)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--R", type=int, default=d.R)
    p.add_argument("--heads", type=int, default=d.heads)
    p.add_argument("--subgatt-layers", type=int, default=d.subgatt_layers)
    p.add_argument("--dropout", type=float, default=d.dropout)
    p.add_argument("--no-subgatt", action="store_true", help="ablation: GIN instead of SubGatt at level 1")
    p.add_argument("--no-level-attention", action="store_true",
                   help="ablation: drop intra/inter-level attention, read out a single-node last level")
    p.add_argument("--no-l2", action="store_true", help="disable row L2 normalization of embeddings")
    p.add_argument("--float32", action="store_true", help="train in 32-bit precision")
    p.add_argument("--epochs", type=int, default=t.epochs)
    p.add_argument("--batch-size", type=int, default=t.batch_size)
    p.add_argument("--lr", type=float, default=t.lr)
    p.add_argument("--patience", type=int, default=t.patience)
    p.add_argument("--val-fraction", type=float, default=t.val_fraction)
    p.add_argument("--folds", type=int, default=10, help="cross-validation folds; 1 trains once on everything")
    p.add_argument("--jobs", type=int, default=1, help="folds to run in parallel")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subgatt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs", help="root directory for run outputs")

    p = sub.add_parser("train", help="cross-validate or train a model")
    _add_data_args(p)
    _add_model_args(p)
    common(p)

    p = sub.add_parser("cluster", help="k-means++ on graph vectors from a checkpoint")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, help="number of clusters (default: number of classes)")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--raw-embeddings", action="store_true",
                   help="cluster graph vectors as-is instead of scaling them to unit length")
    common(p)

    p = sub.add_parser("inspect", help="subgraph attention table for one node")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", type=int, default=0, help="graph index in the dataset")
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--sample", default="eval",
                   help="'eval', 'exhaustive', or an epoch number to replay that epoch's sample")
    common(p)

    p = sub.add_parser("sweep", help="repeat cross-validation over a grid of one hyperparameter")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--param", action="append", choices=sorted(SWEEP_AXES), required=True)
    p.add_argument("--values", required=True, help="comma-separated grid, e.g. 2,3,4")
    p.add_argument("--repeats", type=int, default=10)
    common(p)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="root directory for outputs (default: the manifest's)")
    return parser


# -- helpers ---------------------------------------------------------------


def _resolve_dataset(args) -> tuple[GraphDataset, dict]:
    if args.synthetic_clique:
        seed = args.data_seed if args.data_seed is not None else args.seed
        return generate_clique_dataset(seed), {"synthetic_clique": True, "data_seed": seed}
    if not args.dataset:
        raise UsageError("one of --dataset or --synthetic-clique is required")
    path = Path(args.dataset)
    root = os.environ.get(DATA_ROOT_ENV)
    if not path.exists() and root and not path.is_absolute():
        path = Path(root) / path
    if not path.is_dir():
        raise UsageError(f"dataset directory not found: {args.dataset}")
    return load_tu_dataset(path, args.name), {"dataset": str(path)}


def _configs(args) -> tuple[NetworkConfig, TrainConfig]:
    net = NetworkConfig(R=args.R, gamma=args.gamma, T=args.T, L=args.L, K=args.K, heads=args.heads,
                        subgatt_layers=args.subgatt_layers, dropout=args.dropout, seed=args.seed,
                        level1="gin" if args.no_subgatt else "subgatt",
                        level_attention=not args.no_level_attention, l2_normalize=not args.no_l2,
                        dtype="float32" if args.float32 else "float64")
    tr = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, patience=args.patience,
                     val_fraction=args.val_fraction, seed=args.seed)
    return net, tr


def _run_dir(root, command) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(root) / f"{stamp}-{command}"
    path, n = base, 1
    while path.exists():
        n += 1
        path = Path(f"{base}-{n}")
    path.mkdir(parents=True)
    return path


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, args, inputs) -> None:
    argv = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    _dump(out / "manifest.json", {
        "command": args.command,
        "config": argv,
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "output_dir": str(out),
        "version": __version__,
    })


def _load_for_checkpoint(args, model):
    dataset, inputs = _resolve_dataset(args)
    if dataset.feature_dim != model.feature_dim or dataset.num_classes != model.num_classes:
        raise DataError(f"checkpoint expects {model.feature_dim} features / {model.num_classes} classes, "
                        f"dataset has {dataset.feature_dim} / {dataset.num_classes}")
    return dataset, inputs


# -- commands --------------------------------------------------------------


def cmd_train(args) -> int:
    dataset, inputs = _resolve_dataset(args)
    net, tr = _configs(args)
    out = _run_dir(args.out, "train")
    _write_manifest(out, args, inputs)
    if args.synthetic_clique:
        save_tu_dataset(dataset, out / "data" / "CLIQUE", "CLIQUE",
                        meta={"seed": inputs["data_seed"], "num_graphs": len(dataset),
                              "positives": int(sum(dataset.labels))})
    start = time.perf_counter()
    if args.folds > 1:
        cv = cross_validate(dataset, net, tr, folds=args.folds, jobs=args.jobs, keep_models=True)
        folds = [{"fold": f, "accuracy": a, "epochs_ran": e}
                 for f, (a, e) in enumerate(zip(cv.accuracies, cv.epochs_ran))]
        (out / "checkpoints").mkdir()
        for f, (model, _) in enumerate(cv.models):
            save_checkpoint(out / "checkpoints" / f"fold{f}.json", model, net.seed + f, cv.epochs_ran[f])
        mean, std = cv.mean, cv.std
    else:
        result = train(dataset, net, tr)
        val = [row["val_acc"] for row in result.curves if "val_acc" in row]
        acc = val[result.best_epoch - 1] if val else float("nan")
        folds = [{"fold": 0, "accuracy": acc, "epochs_ran": result.epochs_ran}]
        save_checkpoint(out / "checkpoint.json", result.model, net.seed, result.best_epoch)
        mean, std = acc, 0.0
    _dump(out / "results.json", {"dataset": dataset.name, "config": {"network": asdict(net), "train": asdict(tr)},
                                 "folds": folds, "mean": mean, "std": std})
    _dump(out / "timing.json", {"wall_seconds": time.perf_counter() - start})
    print(f"accuracy {mean:.4f} +- {std:.4f} over {len(folds)} fold(s)")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    dataset, inputs = _load_for_checkpoint(args, model)
    out = _run_dir(args.out, "cluster")
    _write_manifest(out, args, {**inputs, "checkpoint": str(args.checkpoint)})
    k = args.k or dataset.num_classes
    emb = embed_graphs(dataset, model)
    assign = kmeanspp_cluster(emb, k, args.restarts, args.seed, normalize=not args.raw_embeddings)
    acc = clustering_accuracy(assign, dataset.labels)
    np.savetxt(out / "embeddings.tsv", emb, delimiter="\t", fmt="%.17g")
    np.savetxt(out / "labels.tsv", dataset.labels, fmt="%d")
    np.savetxt(out / "assignments.tsv", assign, fmt="%d")
    _dump(out / "clustering.json", {"dataset": dataset.name, "k": k, "accuracy": acc, "seed": args.seed,
                                    "normalized": not args.raw_embeddings})
    print(f"clustering accuracy {acc:.4f} (k={k})")
    return EXIT_OK


def cmd_inspect(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    dataset, inputs = _load_for_checkpoint(args, model)
    if not 0 <= args.graph < len(dataset):
        raise UsageError(f"graph index {args.graph} outside 0..{len(dataset) - 1}")
    graph = dataset.graphs[args.graph]
    if not 0 <= args.node < graph.n:
        raise UsageError(f"node {args.node} outside 0..{graph.n - 1}")
    if args.sample in ("eval", "exhaustive"):
        mode, epoch = args.sample, 0
    else:
        try:
            mode, epoch = "train", int(args.sample)
        except ValueError:
            raise UsageError(f"--sample must be eval, exhaustive or an epoch number, got {args.sample!r}") from None
    out = _run_dir(args.out, "inspect")
    _write_manifest(out, args, {**inputs, "checkpoint": str(args.checkpoint)})
    tables = attention_report(graph, model, args.node, mode=mode, epoch=epoch, stream=args.graph)
    lines = ["head\trank\tpath\tattention"]
    for h, rows in enumerate(tables):
        for rank, (path, w) in enumerate(rows, start=1):
            lines.append(f"{h}\t{rank}\t{'-'.join(map(str, path))}\t{w:.17g}")
    for h, rows in enumerate(tables):
        lines.append(f"# head {h} sum {sum(w for _, w in rows):.12f}")
    text = "\n".join(lines) + "\n"
    (out / "attention.tsv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if len(args.param) != 1:
        raise UsageError("sweep exactly one hyperparameter")
    axis = SWEEP_AXES[args.param[0]]
    try:
        grid = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated integers, got {args.values!r}") from None
    if not grid:
        raise UsageError("empty sweep grid")
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    dataset, inputs = _resolve_dataset(args)
    base_net, base_tr = _configs(args)
    out = _run_dir(args.out, "sweep")
    _write_manifest(out, args, inputs)
    lines = [f"{args.param[0]}\tmean\tstd\trepeats"]
    for value in grid:
        scores = []
        for rep in range(args.repeats):
            net = NetworkConfig(**{**asdict(base_net), axis: value, "seed": base_net.seed + 1000 * rep})
            tr = TrainConfig(**{**asdict(base_tr), "seed": base_tr.seed + 1000 * rep})
            if args.folds > 1:
                scores.append(cross_validate(dataset, net, tr, folds=args.folds, jobs=args.jobs).mean)
            else:
                res = train(dataset, net, tr)
                scores.append(max((r.get("val_acc", 0.0) for r in res.curves), default=0.0))
        lines.append(f"{value}\t{np.mean(scores):.17g}\t{np.std(scores):.17g}\t{len(scores)}")
        log.info("%s=%s mean %.4f", args.param[0], value, np.mean(scores))
    text = "\n".join(lines) + "\n"
    (out / "sweep.tsv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    saved = manifest["config"]
    parser = build_parser()
    # Start from the command's defaults so manifests from older versions still resolve.
    ns = parser.parse_args([saved["command"], *_required_argv(saved)])
    for key, value in saved.items():
        setattr(ns, key, value)
    ns.verbose = getattr(args, "verbose", False)
    if args.out is not None:
        ns.out = args.out
    return COMMANDS[ns.command](ns)


def _required_argv(saved):
    argv = []
    if saved.get("synthetic_clique"):
        argv.append("--synthetic-clique")
    elif saved.get("dataset"):
        argv += ["--dataset", saved["dataset"]]
    for flag in ("checkpoint", "node"):
        if saved.get(flag) is not None:
            argv += [f"--{flag}", str(saved[flag])]
    if saved.get("param"):
        argv += ["--param", saved["param"][0], "--values", saved["values"]]
    return argv


COMMANDS = {"train": cmd_train, "cluster": cmd_cluster, "inspect": cmd_inspect, "sweep": cmd_sweep,
            "replay": cmd_replay}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
