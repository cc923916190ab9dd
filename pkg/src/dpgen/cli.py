"""Command-line entry points: train, generate, report, eval.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to stderr.

A run directory written by ``train`` holds::

    config.txt      effective configuration (key = value)
    generator.json  generator checkpoint
    meta.json       column names, label column, scaling, class ratios
    privacy.json    privacy report
    run.log         one line per iteration
    checkpoints/    periodic generator checkpoints
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from dpgen.data import inverse_scale, load_csv, write_csv
from dpgen.evaluation import eval_downstream
from dpgen.neural import Mlp
from dpgen.training import TrainConfig, generate, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def save_run(run_dir, result, dataset, config: TrainConfig) -> None:
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.txt").write_text(config.to_text())
    result.generator.save(run / "generator.json")
    meta = {
        "columns": dataset.columns,
        "label_name": dataset.label_name if result.generator.cond_dim else None,
        "mins": dataset.mins.tolist(),
        "maxs": dataset.maxs.tolist(),
        "class_ratios": None if result.class_ratios is None else result.class_ratios.tolist(),
        "delta": config.delta,
    }
    (run / "meta.json").write_text(json.dumps(meta, indent=1))
    write_report(run, result.state.report())
    (run / "run.log").write_text(result.state.log_text())


def write_report(run_dir, report: dict) -> None:
    Path(run_dir, "privacy.json").write_text(json.dumps(report, indent=1) + "\n")


def load_run(run_dir):
    run = Path(run_dir)
    if not (run / "generator.json").exists():
        raise FileNotFoundError(f"{run} is not a run directory (no generator.json)")
    meta = json.loads((run / "meta.json").read_text())
    return Mlp.load(run / "generator.json"), meta


def cmd_train(args) -> int:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    dataset = load_csv(args.data, args.label_column)
    out = Path(args.out)
    ckpt = out / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)
    result = train(config, dataset, checkpoint_dir=ckpt)
    save_run(out, result, dataset, config)
    if args.dump_tally and result.last_outcome is not None:
        Path(args.dump_tally).write_text(result.last_outcome.tally.to_csv())
    final = result.state.report()["final"]
    print(f"trained {result.state.iteration} iterations; epsilon={final['epsilon']} delta={final['delta']}")
    return 0


def cmd_generate(args) -> int:
    if args.count < 0:
        raise UsageError("--count must be nonnegative")
    gen, meta = load_run(args.run)
    batch = generate(gen, args.count, meta["class_ratios"], seed=args.seed or 0)
    raw = inverse_scale(batch.features, np.array(meta["mins"]), np.array(meta["maxs"]))
    write_csv(args.out, raw, meta["columns"], batch.labels, meta["label_name"])
    return 0


def cmd_report(args) -> int:
    report = json.loads(Path(args.run, "privacy.json").read_text())
    final = report["final"]
    print(f"epsilon = {final['epsilon']}")
    print(f"delta = {final['delta']}")
    print(f"witness_order = {final['witness_order']}")
    print(f"laplace_extra = {final['laplace_extra']}")
    print("id\tkind\tsigma\tlambda\tepsilon_rdp")
    for q in report["queries"]:
        print(f"{q['id']}\t{q['kind']}\t{q['sigma']}\t{q['lambda']}\t{q['epsilon_rdp']}")
    return 0


def cmd_eval(args) -> int:
    real = load_csv(args.real, args.label_column)
    synthetic = load_csv(args.synthetic, args.label_column, scaler=(real.mins, real.maxs))
    report = eval_downstream(synthetic, real, seed=args.seed or 0)
    print(json.dumps(report.to_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpgen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a generator and write a run directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--data", required=True, help="training CSV with header")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--label-column", help="class label column (enables conditioning)")
    p.add_argument("--dump-tally", help="write the last vote tally as CSV")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample synthetic records from a run")
    p.add_argument("--run", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("report", help="print the privacy report of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--seed", type=int, help="accepted for uniformity; unused")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("eval", help="train on synthetic, test on real")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--real", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dpgen: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        print(f"dpgen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
