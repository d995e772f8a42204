"""Operator entry points: train, eval, report, count-params, synth-data.

Exit-code contract: 0 success, 2 configuration error, 3 data error,
4 numerical failure. Rerunning a command with identical config and seed
reproduces byte-identical outputs; nothing ever mutates a dataset root.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import build_config, canonical_text, config_hash, load_config, parse_config_text, schema_text
from .dataio import generate_synthetic, label_stats, save_matrix_dataset
from .datamodel import SplitTag
from .errors import ConfigError, DataError, ReprogramError
from .evaluation import (
    REFERENCE_BUDGETS,
    budget_report,
    positive_count_correlation,
    write_label_distribution,
    write_report_csv,
    write_report_txt,
)
from .pipeline import build_dataset, build_model, evaluate_records, fit, model_from_checkpoint, target_vocabulary
from .training import TrainOutcome


def _write_metrics(path, history) -> None:
    lines = ["epoch,lr,train_loss,val_macro_f1"]
    lines += [
        f"{e.epoch},{e.lr:.10g},{e.train_loss:.8f},{e.val_macro_f1:.6f}" for e in history
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def _write_run(run_dir: Path, run: TrainOutcome) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_metrics(run_dir / "metrics.csv", run.history)
    save_checkpoint(run_dir / "best.ckpt", run.checkpoint)
    if run.test_report is not None:
        write_report_csv(run_dir / "report.csv", run.test_report)
        write_report_txt(run_dir / "report.txt", run.test_report)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set, args.seed, args.repeats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot").write_text(canonical_text(cfg))
    records, vocab = build_dataset(cfg)
    log = print if not args.quiet else None
    result = fit(cfg, records, vocab=vocab, log=log)
    (out / "seeds.txt").write_text("".join(f"{r.seed}\n" for r in result.runs))
    if len(result.runs) == 1:
        _write_run(out, result.runs[0])
    else:
        for run in result.runs:
            _write_run(out / f"seed_{run.seed}", run)
        scores = [r.test_macro_f1 for r in result.runs]
        lines = ["seed,test_macro_f1"]
        lines += [f"{r.seed},{r.test_macro_f1:.6f}" for r in result.runs]
        lines += [f"mean,{result.mean_test_f1:.6f}", f"std,{result.std_test_f1:.6f}"]
        (out / "summary.csv").write_text("\n".join(lines) + "\n")
        (out / "summary.txt").write_text(
            f"test macro F1 over {len(scores)} runs: "
            f"mean {result.mean_test_f1:.4f}  std {result.std_test_f1:.4f}\n"
        )
    if log:
        for run in result.runs:
            log(f"seed {run.seed}: best val F1 {run.best_val_f1:.4f} @ epoch {run.best_epoch}"
                + (f", test F1 {run.test_macro_f1:.4f}" if run.test_macro_f1 is not None else ""))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = build_config(parse_config_text(ckpt.config_text))
    records, vocab = build_dataset(cfg)
    model = model_from_checkpoint(ckpt, cfg)
    split = SplitTag(args.split)
    subset = [r for r in records if r.split is split]
    if not subset:
        raise DataError(f"no records in split '{args.split}'", code="EMPTY_SPLIT")
    report = evaluate_records(model, subset, cfg.eval_threshold, vocab,
                              seed=ckpt.meta.get("seed"), cfg_hash=config_hash(cfg))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    write_report_csv(out / f"report_{args.split}.csv", report)
    write_report_txt(out / f"report_{args.split}.txt", report)
    print(f"{args.split} macro F1: {report.macro:.6f}")
    return 0


def _read_report_csv(path: Path):
    rows = list(csv.DictReader(open(path, newline="")))
    classes = [r for r in rows if r["name"] != "macro"]
    macro = next((r for r in rows if r["name"] == "macro"), None)
    return classes, macro


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    did_anything = False

    if args.config:
        cfg = load_config(args.config, args.set)
        records, vocab = build_dataset(cfg)
        stats = label_stats(records, vocab)
        write_label_distribution(out / "label_distribution.csv",
                                 stats.class_names, stats.n_pos, stats.n_neg)
        width = max(len(n) for n in stats.class_names)
        lines = [f"{'class'.ljust(width)}  {'pos':>7} {'neg':>7} {'missing':>8}"]
        for i, name in enumerate(stats.class_names):
            lines.append(f"{name.ljust(width)}  {stats.n_pos[i]:>7} {stats.n_neg[i]:>7} "
                         f"{stats.n_missing[i]:>8}")
        lines.append("")
        lines.append(f"records: {stats.n_records}   observed labels: {stats.observed_total}   "
                     f"missing fraction: {stats.missing_fraction:.4f}")
        (out / "label_distribution.txt").write_text("\n".join(lines) + "\n")
        did_anything = True

    run_dirs = [Path(d) for d in args.runs]
    reports = {}
    for d in run_dirs:
        path = d / "report.csv"
        if not path.exists():
            path = d / "report_test.csv"
        if not path.exists():
            raise DataError(f"no report.csv under {d}", code="NO_RUNS_FOUND")
        reports[d.name] = _read_report_csv(path)

    if reports:
        names = [r["name"] for r in next(iter(reports.values()))[0]]
        with open(out / "comparison.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class"] + list(reports))
            for i, cname in enumerate(names):
                w.writerow([cname] + [f"{float(rep[0][i]['f1']):.6f}" for rep in reports.values()])
            w.writerow(["macro"] + [f"{float(rep[1]['f1']):.6f}" for rep in reports.values()])
        corr_lines = []
        for run_name, (classes, _) in reports.items():
            pos = np.array([float(r["n_pos"]) for r in classes])
            f1 = np.array([float(r["f1"]) for r in classes])
            try:
                corr = positive_count_correlation(pos, f1)
                corr_lines.append(f"{run_name}: correlation(positive count, F1) = {corr:.4f}")
            except ReprogramError as e:
                corr_lines.append(
                    f"{run_name}: correlation undefined ({e.code}): per-class values "
                    "have no variance, so the coefficient has a zero denominator"
                )
        (out / "correlation.txt").write_text("\n".join(corr_lines) + "\n")
        did_anything = True

    if not did_anything:
        raise DataError("nothing to report: give --config and/or run directories",
                        code="NO_RUNS_FOUND")
    return 0


def cmd_count_params(args) -> int:
    cfg = load_config(args.config, args.set)
    vocab = target_vocabulary(cfg)
    model = build_model(cfg, seed=cfg.seed, vocab=vocab)
    reference = None
    if cfg.model_dims == (1024, 128) and cfg.backbone.k_src == 527 and vocab.size == 20:
        reference = REFERENCE_BUDGETS.get(cfg.reprogrammer.kind)
    response = budget_report(model, reference=reference)
    for line in response.lines():
        print(line.replace(",", "  "))
    return 0


def cmd_synth_data(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    records = generate_synthetic(cfg.synth)
    vocab = cfg.synth.vocabulary()
    out = Path(args.out)
    save_matrix_dataset(records, out, vocab)
    stats = label_stats(records, vocab)
    write_label_distribution(out / "label_distribution.csv",
                             stats.class_names, stats.n_pos, stats.n_neg)
    (out / "stats.txt").write_text(
        f"clips: {stats.n_records}\nobserved labels: {stats.observed_total}\n"
        f"missing fraction: {stats.missing_fraction:.4f}\n"
    )
    print(f"wrote {stats.n_records} clips to {out}")
    return 0


def cmd_schema(args) -> int:
    print(schema_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="remic",
        description="Train and evaluate reprogrammed frozen-backbone instrument classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p, with_seed=True):
        p.add_argument("--config", help="configuration file (key = value lines)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key")
        if with_seed:
            p.add_argument("--seed", type=int, default=None, help="override run.seed")

    p_train = sub.add_parser("train", help="run the training protocol")
    add_config_args(p_train)
    p_train.add_argument("--repeats", type=int, default=None, help="override run.repeats")
    p_train.add_argument("--out", required=True, help="run directory")
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", default="test", choices=[s.value for s in SplitTag])
    p_eval.add_argument("--out", default=None, help="report directory (default: checkpoint's)")
    p_eval.set_defaults(func=cmd_eval)

    p_report = sub.add_parser("report", help="label distributions and run comparisons")
    add_config_args(p_report, with_seed=False)
    p_report.add_argument("runs", nargs="*", help="run directories to compare")
    p_report.add_argument("--out", required=True)
    p_report.set_defaults(func=cmd_report)

    p_count = sub.add_parser("count-params", help="print the trainable-parameter budget")
    add_config_args(p_count, with_seed=False)
    p_count.set_defaults(func=cmd_count_params)

    p_synth = sub.add_parser("synth-data", help="materialize a synthetic dataset")
    add_config_args(p_synth)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth_data)

    p_schema = sub.add_parser("config-schema", help="print all configuration keys")
    p_schema.set_defaults(func=cmd_schema)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ReprogramError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
