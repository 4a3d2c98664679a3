"""``hmamba`` command line: train, eval, bench, gradcheck, synth, export.

Exit codes: 0 success, 1 check failure (including aborted training), 2 usage
error, 3 data or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__, bench, config, lorentz
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (SequenceDataset, build_sequences, load_interactions, synth_hierarchical_dataset,
                   training_examples, write_interactions)
from .errors import HMambaError, TrainingAborted
from .evaluate import evaluate
from .gradcheck import REL_TOL, check_variant, format_results
from .metrics import format_report
from .model import VARIANTS, ModelState
from .optim import OptimizerState
from .train import fit

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
CHECKPOINT_NAME = "checkpoint.hmb"
log = logging.getLogger("hmamba")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file with flat dotted keys")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (output.dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmamba", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, log and config snapshot")
    _common(p)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--data", help="interaction CSV or serialized dataset JSON")
    p.add_argument("--epochs", type=int)
    p.add_argument("--curvature-k", type=float, help="hyperboloid parameter k > 0 (curvature -1/k)")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("eval", help="leave-one-out evaluation of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="interaction CSV or serialized dataset JSON")
    p.add_argument("--k", type=int, action="append", help="cutoff (repeatable)")
    p.add_argument("--buckets", help="comma-separated train-length bucket bounds, e.g. 100,200,300")
    p.add_argument("--exclude-history", action="store_true", default=None,
                   help="drop the user's history items from the candidate set")
    p.add_argument("--table", action="store_true", default=None, help="append an aligned table")

    p = sub.add_parser("bench", help="encoder runtime scaling table (CSV)")
    _common(p)
    p.add_argument("--lengths", help="comma-separated sequence lengths")
    p.add_argument("--variants", help="comma-separated variants")
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--no-attention", action="store_true", help="skip the attention reference")
    p.add_argument("--kernels", action="store_true",
                   help="also compare the compiled scan kernel with the NumPy fallback")

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    p.add_argument("--variants", default="full,half", help="comma-separated variants")
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--L", type=int, default=6)
    p.add_argument("--vocab", type=int, default=20, help="vocabulary size including padding")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # fault-injection hook for tests

    p = sub.add_parser("synth", help="write a synthetic hierarchical interaction log")
    p.add_argument("--out", required=True, help="output CSV path; the tree goes to <out>.tree.json")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--branching", type=int, default=3)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--seq-len", type=int, default=20)

    p = sub.add_parser("export", help="write item embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    return parser


def _resolve(args, extra: dict) -> dict:
    file_values = config.load_config(args.config) if args.config else {}
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    overrides.update({"seed": args.seed, "output.dir": args.out})
    overrides.update(extra)
    try:
        return config.resolve(file_values, overrides)
    except config.ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _load_dataset(cfg: dict) -> SequenceDataset:
    path = cfg["data.path"]
    if not path:
        raise UsageError("no dataset given (--data or data.path)")
    if path.endswith(".json"):
        return SequenceDataset.from_json(Path(path).read_text(encoding="utf-8"))
    interactions = load_interactions(path, cfg["data.format"])
    return build_sequences(interactions, cfg["data.min_user_len"], cfg["data.min_item_count"],
                           cfg["model.max_seq_len"])


def cmd_train(args) -> int:
    cfg = _resolve(args, {"model.variant": args.variant, "data.path": args.data,
                          "train.epochs": args.epochs, "train.lr": args.lr,
                          "model.k": args.curvature_k,
                          "train.batch_size": args.batch_size})
    dataset = _load_dataset(cfg)
    try:
        model_cfg = config.model_config(cfg, dataset.vocab_size)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cfg["data.path"] = str(Path(cfg["data.path"]).resolve())  # snapshot reruns from any cwd
    out = config.output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    config.write_snapshot(cfg, out / "config.toml")
    (out / "dataset.json").write_text(dataset.to_json(), encoding="utf-8")
    state = ModelState.initialize(model_cfg, cfg["seed"])
    clip = cfg["train.clip_norm"] or None
    opt = OptimizerState(cfg["train.optimizer"], lr=cfg["train.lr"], clip_norm=clip)
    log_path = out / "train_log.jsonl"
    log_path.write_text("", encoding="utf-8")
    examples = training_examples(dataset, model_cfg.max_seq_len)
    reports = fit(state, examples, opt, cfg["train.epochs"], cfg["seed"], cfg["train.batch_size"],
                  log_path, cfg["train.record_timing"],
                  on_epoch=lambda r: log.info("epoch %d loss %.6f", r.epoch, r.mean_loss))
    save_checkpoint(state, out / CHECKPOINT_NAME, {"optimizer_steps": opt.t, "epochs": len(reports)})
    print(f"wrote {out / CHECKPOINT_NAME}")
    return EXIT_OK


def cmd_eval(args) -> int:
    buckets = args.buckets
    cfg = _resolve(args, {"data.path": args.data, "eval.ks": args.k, "eval.buckets": buckets,
                          "eval.exclude_history": args.exclude_history, "eval.table": args.table})
    state, _ = load_checkpoint(args.checkpoint)
    if not cfg["data.path"]:
        sibling = Path(args.checkpoint).with_name("dataset.json")
        if sibling.exists():
            cfg["data.path"] = str(sibling)
    cfg["model.max_seq_len"] = state.config.max_seq_len
    dataset = _load_dataset(cfg)
    results, by_bucket = evaluate(state, dataset, cfg["eval.ks"], cfg["eval.split"],
                                  cfg["eval.exclude_history"], cfg["eval.buckets"])
    report = format_report(results, by_bucket, cfg["eval.table"])
    sys.stdout.write(report)
    if args.out:
        out = config.output_dir(cfg)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.txt").write_text(report, encoding="utf-8")
        config.write_snapshot(cfg, out / "eval_config.toml")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _resolve(args, {"bench.lengths": args.lengths, "bench.variants": args.variants,
                          "bench.reps": args.reps, "bench.warmup": args.warmup})
    for v in cfg["bench.variants"]:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}")
    out = config.output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows = bench.benchmark_encoders(cfg["bench.variants"], cfg["bench.lengths"], cfg["bench.d"],
                                    cfg["bench.d_state"], cfg["bench.vocab_size"], cfg["bench.warmup"],
                                    cfg["bench.reps"], cfg["seed"], attention=not args.no_attention)
    table = bench.to_csv(rows)
    (out / "bench.csv").write_text(table, encoding="utf-8")
    config.write_snapshot(cfg, out / "bench_config.toml")
    sys.stdout.write(table)
    for variant in sorted({r.variant for r in rows}, key=[r.variant for r in rows].index):
        print(f"# slope {variant} {bench.loglog_slope(rows, variant):.3f}")
    if args.kernels:
        krows = bench.benchmark_kernels(cfg["bench.lengths"])
        (out / "kernel_bench.csv").write_text(bench.to_csv(krows), encoding="utf-8")
        sys.stdout.write(bench.to_csv(krows))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}")
    try:
        results = []
        for v in variants:
            results.extend(check_variant(v, args.d, args.L, args.vocab, seed=args.seed, corrupt=args.corrupt))
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    sys.stdout.write(format_results(results))
    failed = [r for r in results if not r.ok]
    if failed:
        names = ", ".join(f"{r.variant}:{r.group}" for r in failed)
        print(f"FAIL: relative error above {REL_TOL:g} in {names}")
        return EXIT_CHECK
    print(f"PASS: all {len(results)} parameter groups within {REL_TOL:g}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        interactions, tree = synth_hierarchical_dataset(args.seed, args.depth, args.branching,
                                                        args.users, args.seq_len)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_interactions(interactions, out)
    Path(str(out) + ".tree.json").write_text(json.dumps(tree.to_dict(), sort_keys=True) + "\n",
                                             encoding="utf-8")
    print(f"wrote {len(interactions)} interactions over {tree.n_leaves} items to {out}")
    return EXIT_OK


def export_rows(state: ModelState) -> list[list]:
    """``[item_id, coords...]`` for items 1..|V|-1; Poincare coordinates for the Full variant."""
    emb = state.params["embedding"][1:]
    if state.config.variant == "full":
        pts = lorentz.exp_map_origin(lorentz.lift(emb), state.config.k, state.config.tol)
        emb = lorentz.project_to_poincare(pts, state.config.k)
    return [[i + 1, *row] for i, row in enumerate(emb)]


def cmd_export(args) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    rows = export_rows(state)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id"] + [f"x{j}" for j in range(len(rows[0]) - 1)])
        for row in rows:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    print(f"wrote {len(rows)} embeddings to {out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "gradcheck": cmd_gradcheck,
            "synth": cmd_synth, "export": cmd_export}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (OSError, HMambaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
