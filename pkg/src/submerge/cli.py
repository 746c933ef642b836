"""Command-line interface.

Subcommands:
  tokenize-stats  subtoken inflation report for a JSONL corpus
  flops           analytic FLOP breakdown for a model config
  pareto          efficiency frontier + knee from a points CSV
  train           one training run from an experiment config
  sweep           full strategy/position/seed grid with artifacts
  gen-data        write a synthetic corpus (handy input for tokenize-stats)
"""

import argparse
import csv
import json
import sys

from . import __version__
from .datasets import generate_classification_dataset, generate_translation_dataset
from .flops import count_encdec_flops, count_encoder_flops, length_schedule, savings_ratio
from .pareto import ConfigPoint, build_frontier, knee_distances
from .sweep import run_sweep
from .tokenizer import inflation_stats, train_bpe
from .training import ExperimentConfig, train
from .transformer import ModelConfig, save_checkpoint


def _write_json(payload, path):
    if path is None:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)


def _cmd_tokenize_stats(args):
    corpus = []
    with open(args.corpus, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                corpus.append(json.loads(line)["text"])
    vocab = train_bpe(corpus, args.vocab_size)
    report = inflation_stats(corpus, vocab)
    _write_json(
        {
            "mean_ratio": report.mean_ratio,
            "slope": report.slope,
            "intercept": report.intercept,
            "pairs": [list(p) for p in report.pairs],
        },
        args.out,
    )
    return 0


def _cmd_flops(args):
    with open(args.config, encoding="utf-8") as fh:
        config = ModelConfig.from_dict(json.load(fh))
    merged = args.nprime is not None and args.position is not None
    schedule = length_schedule(
        config.num_layers,
        args.n,
        args.nprime if merged else None,
        args.position if merged else None,
    )
    if config.arch == "seq2seq":
        if args.tgt_len is None:
            raise SystemExit("--tgt-len is required for seq2seq configs")
        memory = args.nprime if merged else args.n
        breakdown = count_encdec_flops(config, schedule, args.tgt_len, memory)
        baseline = count_encdec_flops(
            config, [args.n] * config.num_layers, args.tgt_len, args.n
        )
    else:
        breakdown = count_encoder_flops(config, schedule)
        baseline = count_encoder_flops(config, [args.n] * config.num_layers)
    payload = breakdown.to_dict()
    if merged:
        payload["baseline_total"] = baseline.total
        payload["savings_ratio"] = savings_ratio(baseline, breakdown)
    _write_json(payload, args.out)
    return 0


def _cmd_pareto(args):
    points = []
    with open(args.points_in, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            points.append(
                ConfigPoint(row["label"], float(row["cost"]), float(row["performance"]))
            )
    if not points:
        raise SystemExit(f"no points in {args.points_in}")
    frontier = build_frontier(points)
    dists = knee_distances(list(frontier.points))
    rows = [
        {
            "label": p.label,
            "cost": p.cost,
            "performance": p.performance,
            "knee_distance": d,
        }
        for p, d in zip(frontier.points, dists)
    ]
    knee = next(r for r in rows if r["label"] == frontier.knee.label)
    _write_json({"frontier": rows, "knee": knee}, args.out)
    return 0


def _cmd_train(args):
    exp = ExperimentConfig.load(args.config)
    strategy = None if args.strategy == "none" else args.strategy
    result = train(exp, strategy, args.position, args.seed)
    if args.save_model:
        save_checkpoint(result.params, args.save_model)
    payload = result.row()
    payload["curve"] = result.curve
    payload["status"] = result.status
    _write_json(payload, args.out)
    return 0


def _cmd_sweep(args):
    exp = ExperimentConfig.load(args.config)
    report = run_sweep(exp, args.out)
    best = report.knee
    print(
        f"sweep done: {len(report.rows)} runs, frontier size "
        f"{len(report.frontier)}, knee {best['label']} "
        f"(cost {best['cost']:.3g}, performance {best['performance']:.4f})"
    )
    print(f"artifacts in {args.out}/: results.csv, points.csv, report.json")
    return 0


def _cmd_gen_data(args):
    if args.task == "classify":
        splits = generate_classification_dataset(
            args.num_classes, args.per_class, args.seed
        )
        texts = [s.text for part in splits for s in part]
    else:
        splits = generate_translation_dataset(args.pairs, args.seed)
        texts = [p.source for part in splits for p in part]
    with open(args.out, "w", encoding="utf-8") as fh:
        for text in texts:
            fh.write(json.dumps({"text": text}) + "\n")
    print(f"wrote {len(texts)} samples to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="submerge",
        description="Subtoken merging lab: tokenizer stats, FLOPs, training, frontiers.",
    )
    parser.add_argument("--version", action="version", version=f"submerge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize-stats", help="subtoken inflation report for a corpus")
    p.add_argument("--corpus", required=True, help="JSONL file with a 'text' field")
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--out", default=None, help="report JSON path (default: stdout)")
    p.set_defaults(fn=_cmd_tokenize_stats)

    p = sub.add_parser("flops", help="analytic FLOP breakdown for a model config")
    p.add_argument("--config", required=True, help="model config JSON")
    p.add_argument("--n", type=int, required=True, help="source length")
    p.add_argument("--nprime", type=int, default=None, help="merged length")
    p.add_argument("--position", type=int, default=None, help="merge position")
    p.add_argument("--tgt-len", type=int, default=None, help="target length (seq2seq)")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_flops)

    p = sub.add_parser("pareto", help="efficiency frontier + knee from points CSV")
    p.add_argument("--in", dest="points_in", required=True,
                   help="CSV with label,cost,performance")
    p.add_argument("--out", default=None, help="frontier JSON path (default: stdout)")
    p.set_defaults(fn=_cmd_pareto)

    p = sub.add_parser("train", help="one training run")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--strategy", choices=["none", "mean", "learnable"], default="none")
    p.add_argument("--position", type=int, default=0)
    p.add_argument("--out", default=None, help="run summary JSON (default: stdout)")
    p.add_argument("--save-model", default=None, help="checkpoint JSON path")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("sweep", help="full strategy/position/seed sweep")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("gen-data", help="write a synthetic corpus as JSONL")
    p.add_argument("--task", choices=["classify", "translate"], default="classify")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--pairs", type=int, default=120)
    p.set_defaults(fn=_cmd_gen_data)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
