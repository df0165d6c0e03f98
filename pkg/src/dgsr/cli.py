"""Command line entry point: ``dgsr {prepare,synth,train,evaluate,sweep}``.

Experiments are described by a JSON config; command-line flags override it.
On failure a single JSON line ``{"error": <kind>, "message": <text>}`` goes
to stderr and the exit code is 1.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import corpus
from .evaluation import DEFAULT_BUCKET_EDGES, EvalConfig, evaluate
from .graph import dump_edges
from .model import VariantConfig, forward, load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate
from .train import TrainConfig, build_graphs, fit

log = logging.getLogger("dgsr")

GRID_KEYS = ("variant", "dim", "ui_layers", "ii_layers")
DEFAULTS = {
    "data_dir": None,
    "out_dir": "runs/default",
    "variant": "dgsr",
    "ui_layers": None,
    "ii_layers": None,
    "dim": 10,
    "learning_rate": 0.01,
    "batch_size": 5000,
    "reg_lambda": 1e-5,
    "epochs": 250,
    "seed": 0,
    "optimizer": "sgd",
    "refresh": "batch",
    "include_valid_edges": False,
    "record_timing": False,
    "dump_graphs": False,
    "eval": {"n": 10, "negatives": 100, "seed": 0, "bucket_edges": list(DEFAULT_BUCKET_EDGES)},
}


class ConfigError(ValueError):
    pass


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            user = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update({k: v for k, v in user.items() if k != "eval"})
        cfg["eval"].update(user.get("eval", {}))
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def validate(cfg: dict, allow_grid: bool = False) -> list[str]:
    """Every problem with ``cfg``, so all of them can be reported at once."""
    errors = []
    if cfg["data_dir"] is None:
        errors.append("data_dir is required")
    else:
        for name in ("train.tsv", "valid.tsv", "test.tsv", "sequences.tsv", "vocab_users.tsv", "vocab_items.tsv"):
            if not (Path(cfg["data_dir"]) / name).exists():
                errors.append(f"data_dir is missing {name}")
    for key in GRID_KEYS:
        values = cfg[key] if isinstance(cfg[key], list) else [cfg[key]]
        if isinstance(cfg[key], list) and not allow_grid:
            errors.append(f"{key} is a list; use the sweep command for grids")
        if not values:
            errors.append(f"{key} grid is empty")
        for v in values:
            if key == "variant":
                try:
                    VariantConfig.from_name(v)
                except (ValueError, AttributeError) as exc:
                    errors.append(str(exc))
            elif v is not None and (not isinstance(v, int) or v < (1 if key == "dim" else 0)):
                errors.append(f"{key} has invalid value {v!r}")
    for key in ("learning_rate", "reg_lambda"):
        if not isinstance(cfg[key], (int, float)) or cfg[key] < 0:
            errors.append(f"{key} must be a non-negative number")
    for key in ("batch_size", "epochs", "seed"):
        if not isinstance(cfg[key], int) or cfg[key] < (1 if key == "batch_size" else 0):
            errors.append(f"{key} has invalid value {cfg[key]!r}")
    if cfg["optimizer"] not in ("sgd", "adam"):
        errors.append(f"optimizer must be 'sgd' or 'adam', got {cfg['optimizer']!r}")
    if cfg["refresh"] not in ("batch", "epoch"):
        errors.append(f"refresh must be 'batch' or 'epoch', got {cfg['refresh']!r}")
    try:
        eval_config(cfg)
    except (TypeError, ValueError) as exc:
        errors.append(f"eval: {exc}")
    return errors


def eval_config(cfg: dict) -> EvalConfig:
    e = dict(cfg["eval"])
    if "bucket_edges" in e:
        e["bucket_edges"] = tuple(e["bucket_edges"])
    return EvalConfig(**e)


def train_config(cfg: dict) -> TrainConfig:
    variant = VariantConfig.from_name(cfg["variant"], cfg["ui_layers"], cfg["ii_layers"])
    return TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        batch_size=cfg["batch_size"],
        reg_lambda=float(cfg["reg_lambda"]),
        max_epochs=cfg["epochs"],
        seed=cfg["seed"],
        dim=cfg["dim"],
        variant=variant,
        optimizer=cfg["optimizer"],
        refresh=cfg["refresh"],
        include_valid_edges=cfg["include_valid_edges"],
        eval=eval_config(cfg),
        record_timing=cfg["record_timing"],
    )


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- commands --------------------------------------------------------------------

def cmd_prepare(args) -> dict:
    with open(args.input, encoding="utf-8") as fh:
        log_ = corpus.ingest(fh, args.min_seq_len, args.min_item_freq, source=args.input)
    if args.sample_sequences:
        log_ = corpus.sample_sequences(log_, args.sample_sequences, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.no_split:
        users, seqs = corpus.ordered_sequences(log_)
        stats = corpus.dataset_stats(log_)
        triplets = corpus.transition_triplets(users, seqs)
        stats["transitions"] = len(triplets)
        corpus._write_triplets(out / "train.tsv", triplets)
    else:
        dataset = corpus.build_splits(log_, args.min_seq_len)
        corpus.write_dataset(log_, dataset, out)
        stats = corpus.dataset_stats(log_, dataset)
    _write_json(out / "stats.json", stats)
    print(json.dumps(stats, sort_keys=True))
    return stats


def cmd_synth(args) -> None:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    fields = {f.name for f in dataclasses.fields(SynthConfig)}
    unknown = sorted(set(base) - fields)
    if unknown:
        raise ConfigError(f"unknown synth keys: {', '.join(unknown)}")
    if "seq_len_range" in base:
        base["seq_len_range"] = tuple(base["seq_len_range"])
    if args.seed is not None:
        base["seed"] = args.seed
    text = generate(SynthConfig(**base))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def run_training(cfg: dict) -> dict:
    """Train one configuration; write checkpoint, history and resolved config."""
    tc = train_config(cfg)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    dataset = corpus.load_dataset(Path(cfg["data_dir"]))
    graphs = build_graphs(dataset, tc.include_valid_edges)
    result = fit(dataset, graphs, tc, history_path=out / "history.jsonl")
    save_checkpoint(
        out / "checkpoint.npz",
        result.state,
        tc.variant,
        tc.seed,
        include_valid_edges=tc.include_valid_edges,
        best_epoch=result.best_epoch,
    )
    _write_json(out / "config.json", cfg)
    if cfg.get("dump_graphs"):
        dump_edges(graphs.ui, out / "ui_graph.tsv")
        dump_edges(graphs.ii, out / "ii_graph.tsv")
    return {"best_epoch": result.best_epoch, "best_valid_ndcg": result.best_valid_ndcg}


def cmd_train(args) -> dict:
    cfg = load_config(args.config, _overrides(args))
    errors = validate(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    summary = run_training(cfg)
    print(json.dumps(summary, sort_keys=True))
    return summary


def run_evaluation(checkpoint: Path, data_dir: Path, split: str, ecfg: EvalConfig, dim: int | None = None) -> dict:
    state, variant, meta = load_checkpoint(checkpoint)
    dataset = corpus.load_dataset(data_dir)
    mismatch = [
        f"{k}: checkpoint {meta[k]} vs data {v}"
        for k, v in (("n_users", dataset.n_users), ("n_items", dataset.n_items), ("dim", dim))
        if v is not None and meta[k] != v
    ]
    if mismatch:
        raise ConfigError("checkpoint incompatible with data/config: " + "; ".join(mismatch))
    graphs = build_graphs(dataset, meta.get("include_valid_edges", False))
    triplets = dataset.test if split == "test" else dataset.valid
    report = evaluate(
        forward(state, graphs.ui, graphs.ii, variant),
        triplets,
        dataset.user_items,
        variant,
        ecfg,
        item_train_counts=dataset.item_train_counts(),
    )
    return report.to_dict()


def cmd_evaluate(args) -> dict:
    cfg = load_config(args.config, {"data_dir": args.data})
    if args.seed is not None:
        cfg["eval"]["seed"] = args.seed
    if cfg["data_dir"] is None:
        raise ConfigError("data_dir is required (--data or config)")
    dim = cfg["dim"] if args.config and isinstance(cfg["dim"], int) else None
    report = run_evaluation(Path(args.checkpoint), Path(cfg["data_dir"]), args.split, eval_config(cfg), dim)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / f"report_{args.split}.json", report)
    print(json.dumps(report, sort_keys=True))
    return report


def _run_cell(cell: dict) -> dict:
    row = {k: cell[k] for k in GRID_KEYS}
    try:
        run_training(cell)
        report = run_evaluation(Path(cell["out_dir"]) / "checkpoint.npz", Path(cell["data_dir"]), "test", eval_config(cell))
        row.update(recall=report["recall"], mrr=report["mrr"], ndcg=report["ndcg"], error=None)
    except Exception as exc:  # a failed cell is recorded, the sweep goes on
        row.update(recall=None, mrr=None, ndcg=None, error=f"{type(exc).__name__}: {exc}")
    return row


def cmd_sweep(args) -> list[dict]:
    cfg = load_config(args.config, _overrides(args))
    errors = validate(cfg, allow_grid=True)
    if errors:
        raise ConfigError("; ".join(errors))
    grids = [cfg[k] if isinstance(cfg[k], list) else [cfg[k]] for k in GRID_KEYS]
    out = Path(cfg["out_dir"])
    cells = []
    for combo in itertools.product(*grids):
        cell = dict(cfg, **dict(zip(GRID_KEYS, combo)))
        name = "_".join(f"{k}{v}" for k, v in zip(GRID_KEYS, combo))
        cell["out_dir"] = str(out / "cells" / name)
        cells.append(cell)
    if args.parallel:
        with ProcessPoolExecutor() as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    rows.sort(key=lambda r: (r["ndcg"] is None, -(r["ndcg"] or 0.0)))
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "sweep.json", rows)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[*GRID_KEYS, "recall", "mrr", "ndcg", "error"])
        writer.writeheader()
        writer.writerows(rows)
    print(json.dumps(rows))
    return rows


def _overrides(args) -> dict:
    return {
        "seed": args.seed,
        "out_dir": args.out,
        "variant": args.variant,
        "ui_layers": args.ui_layers,
        "ii_layers": args.ii_layers,
        "dim": args.dim,
        "data_dir": getattr(args, "data", None),
        "epochs": getattr(args, "epochs", None),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgsr", description="Dual-graph sequential recommender")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest a raw TSV and write split files")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--min-seq-len", type=int, default=7)
    p.add_argument("--min-item-freq", type=int, default=5)
    p.add_argument("--no-split", action="store_true", help="emit all transitions as train.tsv, no held-out splits")
    p.add_argument("--sample-sequences", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate a planted-pattern corpus")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    for name, func in (("train", cmd_train), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--data", help="prepared data directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--variant", choices=["mf", "lightgcn", "fmc", "fpmc", "dgsr"])
        p.add_argument("--ui-layers", type=int)
        p.add_argument("--ii-layers", type=int)
        p.add_argument("--dim", type=int)
        p.add_argument("--epochs", type=int)
        if name == "sweep":
            p.add_argument("--parallel", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--config")
    p.add_argument("--split", choices=["test", "valid"], default="test")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except BrokenPipeError:  # downstream reader closed early, e.g. `| head`
        sys.stdout = None
        return 0
    except Exception as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
