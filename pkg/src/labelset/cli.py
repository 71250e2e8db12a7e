"""Command-line surface: graph | train | eval | predict | ablate.

Exit codes: 0 success, 1 usage or configuration problem, 2 data problem,
3 numeric failure.  BLAS thread pools are pinned to one thread before numpy
loads so training runs are reproducible and desk-scale timings honest.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

from .errors import EXIT_CONFIG, EXIT_DATA, ConfigError, LabelsetError


class _Parser(argparse.ArgumentParser):
    """argparse, but usage errors exit with the config error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> _Parser:
    parser = _Parser(prog="labelset",
                     description="Multi-label text classification as set prediction")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--config", help="JSON file of run settings")
        sub.add_argument("--seed", type=int, help="override the run seed")
        sub.add_argument("--out", help="override the output directory")
        sub.add_argument("--lambda", dest="bc_weight", type=float,
                         help="override the overlap-penalty weight")
        sub.add_argument("--tau", type=float, help="override the edge threshold")
        sub.add_argument("--m", dest="num_queries", type=int,
                         help="override the query slot count")
        sub.add_argument("--no-gcn", action="store_true",
                         help="replace graph queries with a plain learnable table")
        sub.add_argument("--no-bc", action="store_true", help="disable the overlap penalty")
        sub.add_argument("--head", choices=("set_prediction", "bce"),
                         help="override the classification head")
        sub.add_argument("--cost-mode", choices=("prob", "log_prob"),
                         help="override the matching cost flavor")
        return sub

    graph_cmd = common(commands.add_parser("graph", help="build and dump the label graph"))
    graph_cmd.set_defaults(func=cmd_graph)

    train_cmd = common(commands.add_parser("train", help="train a model"))
    train_cmd.set_defaults(func=cmd_train)

    eval_cmd = common(commands.add_parser("eval", help="evaluate a checkpoint"))
    eval_cmd.add_argument("--checkpoint", required=True)
    eval_cmd.add_argument("--split", choices=("train", "valid", "test"), default="test")
    eval_cmd.set_defaults(func=cmd_eval)

    predict_cmd = common(commands.add_parser("predict", help="label a JSONL file"))
    predict_cmd.add_argument("--checkpoint", required=True)
    predict_cmd.add_argument("--input", required=True)
    predict_cmd.add_argument("--output", required=True)
    predict_cmd.set_defaults(func=cmd_predict)

    ablate_cmd = common(commands.add_parser(
        "ablate", help="train full, wo/GCN, wo/BC, and bce variants and compare"))
    ablate_cmd.set_defaults(func=cmd_ablate)

    return parser


def resolve_config(args):
    from .model import RunConfig

    raw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config} must hold a JSON object")
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "bc_weight": args.bc_weight,
        "tau": args.tau,
        "num_queries": args.num_queries,
        "head": args.head,
        "cost_mode": args.cost_mode,
    }
    raw.update({key: value for key, value in overrides.items() if value is not None})
    if args.no_gcn:
        raw["use_gcn"] = False
    if args.no_bc:
        raw["use_bc"] = False
    return RunConfig.from_dict(raw)


def echo_config(config, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")


def load_splits(config):
    from .data import build_corpus, read_jsonl

    if config.train_path is None:
        raise ConfigError("train_path is required")
    duplicates = 0
    splits = []
    for path in (config.train_path, config.valid_path, config.test_path):
        if path is None:
            splits.append([])
            continue
        records, dups = read_jsonl(path)
        duplicates += dups
        splits.append(records)
    corpus = build_corpus(*splits)
    corpus.counters["duplicate_labels"] = duplicates
    return corpus


def cmd_graph(args) -> int:
    from .graph import LabelGraph, dump_matrix

    config = resolve_config(args)
    corpus = load_splits(config)
    built = LabelGraph(corpus.train, corpus.label_vocab,
                       tau=config.tau, p_neighbor=config.p_neighbor)
    out_dir = config.out_dir
    echo_config(config, out_dir)
    dump_matrix(os.path.join(out_dir, "counts.txt"), built.counts.astype(float))
    dump_matrix(os.path.join(out_dir, "cond_prob.txt"), built.cond_prob)
    dump_matrix(os.path.join(out_dir, "reweighted.txt"), built.reweighted)
    names = corpus.label_vocab.names
    lines = [
        f"labels: {built.num_labels}",
        f"training samples: {len(corpus.train)}",
        f"edges retained at tau={config.tau}: {built.edge_count}",
        f"isolated labels: {', '.join(names[i] for i in built.isolated_labels) or '(none)'}",
    ]
    for i in range(built.num_labels):
        for j in range(built.num_labels):
            if i != j and built.reweighted[i, j] > 0.0:
                lines.append(f"edge {names[i]} -> {names[j]}: "
                             f"cond_prob={built.cond_prob[i, j]:.4f}")
    summary = "\n".join(lines)
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    print(summary)
    return 0


def cmd_train(args) -> int:
    from .training import run_training

    config = resolve_config(args)
    corpus = load_splits(config)
    if len(corpus.valid) == 0:
        raise ConfigError("valid_path is required: training selects its checkpoint "
                          "by validation F1")
    echo_config(config, config.out_dir)
    model, result = run_training(config, corpus, out_dir=config.out_dir, log_stream=sys.stdout)
    print(f"best valid F1 {result.best_valid_f1:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from .data import read_jsonl, records_to_dataset
    from .metrics import render_table, report_json
    from .model import load_checkpoint
    from .training import evaluate

    config = resolve_config(args)
    model = load_checkpoint(args.checkpoint)
    path = getattr(config, f"{args.split}_path")
    if path is None:
        raise ConfigError(f"{args.split}_path is required to evaluate that split")
    records, _ = read_jsonl(path)
    dataset, _dropped = records_to_dataset(records, model.label_vocab, model.token_vocab,
                                           name=args.split, drop_unseen=True)
    report = evaluate(model, dataset)
    print(render_table([(args.split, report)]))
    print(report_json(report))
    return 0


def cmd_predict(args) -> int:
    from .model import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    from .data import read_jsonl

    records, _ = read_jsonl(args.input, require_labels=False)
    with open(args.output, "w", encoding="utf-8") as fh:
        for record in records:
            tokens = model.token_vocab.encode(record.text)
            pred = model.predict(tokens)
            names = model.label_vocab.decode(pred)
            fh.write(json.dumps({"text": record.text, "predicted_labels": names}) + "\n")
    print(f"wrote {len(records)} predictions to {args.output}")
    return 0


VARIANTS = (
    ("full", {}),
    ("wo/GCN", {"use_gcn": False}),
    ("wo/BC", {"use_bc": False}),
    ("bce", {"head": "bce"}),
)


def cmd_ablate(args) -> int:
    from .metrics import render_table
    from .model import RunConfig
    from .training import evaluate, run_training

    config = resolve_config(args)
    corpus = load_splits(config)
    if len(corpus.valid) == 0:
        raise ConfigError("valid_path is required: training selects its checkpoint "
                          "by validation F1")
    target = corpus.test if len(corpus.test) else corpus.valid
    echo_config(config, config.out_dir)
    rows = []
    for name, overrides in VARIANTS:
        variant_config = RunConfig.from_dict({**config.to_dict(), **overrides})
        sub_dir = os.path.join(config.out_dir, name.replace("/", "_"))
        print(f"[{name}]")
        model, _result = run_training(variant_config, corpus, out_dir=sub_dir,
                                      log_stream=sys.stdout)
        rows.append((name, evaluate(model, target)))
    table = render_table(rows)
    print(table)
    with open(os.path.join(config.out_dir, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump({name: report for name, report in rows}, fh, indent=2)
        fh.write("\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LabelsetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())
