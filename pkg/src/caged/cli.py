"""Command-line entry point: ``caged {synth,prepare,train,evaluate,report}``.

Exit codes: 0 success, 1 usage/config error, 2 runtime error, 3 training divergence.
Set ``CAGED_VERBOSITY`` (DEBUG, INFO, WARNING, ...) to control log output.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path


from . import backbone
from .data import FORMATS, binarize, deduplicate, density, load_dataset, load_interactions, \
    save_dataset, split
from .graph import AggregationMatrix, build_graph
from .metrics import evaluate, write_histogram_csv
from .optim import ParamStore
from .synth import synth_interactions, write_interactions
from .trainer import ABLATIONS, DivergenceError, TrainConfig, run, save_final, write_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_DIVERGED = 0, 1, 2, 3

# flag name -> TrainConfig field
FLAG_FIELDS = {
    "seed": "seed", "k": "k", "epochs": "max_epochs", "eta1": "eta1", "eta2": "eta2",
    "gamma": "gamma", "lambda": "lam", "beta": "beta", "epsilon": "epsilon",
    "layers": "layers", "dim": "dim", "batch_size": "batch_size",
}

log = logging.getLogger("caged")


class UsageError(Exception):
    pass


def _coerce(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    kind = kinds[name]
    if kind in ("bool", bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return {"int": int, "float": float}.get(kind, type(getattr(TrainConfig(), name)))(raw)
    except ValueError as exc:
        raise UsageError(f"{name}: cannot parse {raw!r}") from exc


def parse_overrides(pairs) -> dict:
    """``key=value`` strings to typed TrainConfig fields; unknown keys are rejected."""
    valid = TrainConfig.field_names()
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"expected key=value, got {pair!r}")
        key, raw = (s.strip() for s in pair.split("=", 1))
        if key not in valid:
            raise UsageError(f"unknown config key {key!r}; valid keys: {', '.join(valid)}")
        out[key] = _coerce(key, raw)
    return out


def read_config_file(path) -> dict:
    lines = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                lines.append(line)
    return parse_overrides(lines)


def resolve_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    values.update(parse_overrides(getattr(args, "set", None) or []))
    for flag, name in FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    try:
        cfg = TrainConfig(**values)
        return cfg.with_ablation(getattr(args, "ablation", None))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_synth(args) -> int:
    pairs = synth_interactions(args.users, args.items, args.interactions, args.zipf, args.seed)
    write_interactions(args.out, pairs)
    print(f"wrote {len(pairs)} interactions to {args.out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    records = load_interactions(args.input, args.format)
    raw = deduplicate(records)
    n_users = len({r.user_id for r in raw})
    n_items = len({r.item_id for r in raw})
    kept = deduplicate(binarize(records, args.threshold))
    dataset = split(kept, seed=args.seed if args.seed is not None else 0)
    save_dataset(dataset, args.out)
    stats = {
        "raw": {"users": n_users, "items": n_items, "interactions": len(raw),
                "density": round(density(n_users, n_items, len(raw)), 5)},
        "kept": {"users": dataset.num_users, "items": dataset.num_items,
                 "interactions": dataset.num_interactions,
                 "density": round(density(dataset.num_users, dataset.num_items,
                                          dataset.num_interactions), 5)},
        "split": {"train": len(dataset.train), "validation": len(dataset.validation),
                  "test": len(dataset.test)},
    }
    with open(Path(args.out) / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2)
    k = stats["kept"]
    print(f"M={k['users']} N={k['items']} |E|={k['interactions']} density={k['density']:.5f}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_config(args)
    dataset = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.txt", config)
    try:
        result = run(config, dataset, out)
    except DivergenceError as exc:
        record = {"status": "diverged", "epoch": exc.epoch, "reason": exc.reason,
                  "epochs_completed": len(exc.history)}
        with open(out / "failure.json", "w", encoding="utf-8") as fh:
            json.dump(record, fh, indent=2)
        print(json.dumps(record), file=sys.stderr)
        return EXIT_DIVERGED
    if result.test_report is not None:
        save_final(out, result, config)
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            fh.write(result.test_report.to_json() + "\n")
        write_histogram_csv(out / "iip_histogram.csv", result.test_report.iip_counts)
        print(result.test_report.to_json())
    return EXIT_OK


def load_checkpoint(path) -> tuple[AggregationMatrix, ParamStore, TrainConfig]:
    path = Path(path)
    weights = AggregationMatrix.load(path / "aggregation.bin")
    params = ParamStore.load(path / "params.bin")
    cfg_file = path / "config.txt"
    if not cfg_file.exists():
        cfg_file = path.parent.parent / "config.txt"
    config = TrainConfig(**read_config_file(cfg_file)) if cfg_file.exists() else TrainConfig(
        dim=params["embedding"].shape[1])
    return weights, params, config


def cmd_evaluate(args) -> int:
    weights, params, config = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    graph = build_graph(dataset)
    if weights.num_users != graph.num_users or weights.num_items != graph.num_items:
        raise UsageError("checkpoint does not match dataset dimensions")
    layers = args.layers if args.layers is not None else config.layers
    pooled = backbone.forward(weights, params["embedding"], layers)
    k = args.k if args.k is not None else config.k
    report = evaluate(pooled, graph, dataset.user_items(args.split), k, None, config.iip_bins,
                      weights)
    text = report.to_json()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text + "\n", encoding="utf-8")
        write_histogram_csv(out / "iip_histogram.csv", report.iip_counts)
    print(text)
    return EXIT_OK


def cmd_report(args) -> int:
    """One CSV row per (epoch, IIP bin), joining progress log and per-stage histograms."""
    run_dir = Path(args.run)
    progress = {}
    log_path = run_dir / "progress.jsonl"
    if log_path.exists():
        for line in log_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                progress[rec["epoch"]] = rec
    stages = sorted((run_dir / "checkpoints").glob("epoch_*"))
    if not stages:
        raise UsageError(f"no checkpoints under {run_dir}")
    rows = []
    for stage in stages:
        epoch = int(stage.name.split("_")[1])
        rec = progress.get(epoch, {})
        with open(stage / "iip_histogram.csv", encoding="utf-8") as fh:
            for h in csv.DictReader(fh):
                rows.append({"epoch": epoch, "train_loss": rec.get("train_loss", ""),
                             "val_recall": rec.get("val_recall", ""),
                             "updated": rec.get("updated", epoch == 0), **h})
    cols = ["epoch", "train_loss", "val_recall", "updated", "bin_left", "bin_right", "count"]
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        if args.format == "json":
            json.dump(rows, fh, indent=1)
            fh.write("\n")
        else:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--eta1", type=float)
    p.add_argument("--eta2", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--ablation", choices=sorted(ABLATIONS))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caged", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic long-tail interaction file")
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--interactions", type=int, default=15000)
    p.add_argument("--zipf", type=float, default=1.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="binarize and split an interaction file")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=5.0, help="keep ratings >= threshold")
    p.add_argument("--format", default="tsv",
                   help=f"one of {sorted(FORMATS)} or a literal delimiter")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the backbone with CAGED weight updates")
    p.add_argument("dataset", help="directory written by `prepare`")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint directory")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--k", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--split", choices=("validation", "test"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="join progress log and IIP histograms into one table")
    p.add_argument("run", help="training output directory")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CAGED_VERBOSITY", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"caged: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"caged: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
