"""Command line front end.

    drift-lens synth   generate a synthetic labeled corpus (optional A/B split)
    drift-lens train   train one regime, write checkpoints and curves
    drift-lens drift   compare two embedding snapshots
    drift-lens suite   run the full six-regime comparison, one or more seeds
    drift-lens report  rebuild the csv tables from a stored suite.json

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure,
3 input/output error.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys
from dataclasses import replace

from . import experiment, model
from .corpus import (
    Corpus,
    CorpusConfig,
    config_from_dict,
    generate_corpus,
    load_corpus,
    mask_labels,
    save_corpus,
    split_ab,
)
from .errors import DriftLensError, InvalidConfig, IoError, SchemaMismatch
from .metrics import (
    MetricConfig,
    PairBudget,
    compute_drift_report,
    report_to_json,
    reports_to_csv,
)
from .snapshot import load_snapshot, write_snapshot_file


def _read_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path!r} is not valid JSON: {exc}") from exc


def _write_text(path, text: str) -> None:
    try:
        pathlib.Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path!r}: {exc}") from exc


def cmd_synth(args) -> int:
    if args.config is not None:
        config = config_from_dict(_read_json(args.config))
    else:
        config = CorpusConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
        config.validate()
    if (args.out_a is None) != (args.out_b is None):
        raise InvalidConfig("--out-a and --out-b must be given together")
    corpus = generate_corpus(config)
    save_corpus(corpus, args.out)
    print(
        f"wrote {corpus.token_count} tokens in {len(corpus.sequences)} "
        f"sequences to {args.out}"
    )
    if args.out_a is not None:
        part_a, part_b = split_ab(corpus)
        save_corpus(part_a, args.out_a)
        save_corpus(part_b, args.out_b)
        print(
            f"split A: {len(part_a.sequences)} sequences to {args.out_a}; "
            f"split B: {len(part_b.sequences)} sequences to {args.out_b}"
        )
    return 0


def cmd_train(args) -> int:
    corpus_a = load_corpus(args.corpus_a)
    corpus_b = load_corpus(args.corpus_b)
    if corpus_a.config.class_names() != corpus_b.config.class_names():
        raise SchemaMismatch("corpus A and corpus B disagree on the class table")
    test = load_corpus(args.test_corpus) if args.test_corpus else None
    probe = None
    if test is not None:
        probe = experiment.stratified_probe_uids(
            test, args.probe_tokens, experiment.derive_seed(args.seed, "probe")
        )
    data = experiment.SuiteData(
        full=Corpus(
            config=corpus_a.config,
            sequences=list(corpus_a.sequences) + list(corpus_b.sequences),
        ),
        corpus_a=corpus_a,
        a_masked=mask_labels(
            corpus_a, set(experiment.old_entity_classes(corpus_a.config))
        ),
        corpus_b=corpus_b,
        test=test,
        probe=probe,
    )
    config = experiment.SuiteConfig(
        corpus=corpus_a.config,
        train=model.TrainConfig(
            learning_rate=args.lr,
            momentum=args.momentum,
            epochs=args.epochs,
            batch_size=args.batch_size,
            l2_decay=args.l2_decay,
        ),
        hidden=args.hidden,
        seed=args.seed,
    )

    out = pathlib.Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {args.out!r}: {exc}") from exc

    spec = experiment.regime_spec(args.regime)
    baseline = None
    if spec.resume_baseline:
        baseline, base_curve, _ = experiment.run_regime(
            "baseline_bert_tags", data, config
        )
        digest = model.save_params(baseline, out / "original.tmpk")
        model.save_loss_curve(base_curve, out / "original.csv")
        print(f"baseline checkpoint {digest} -> {out / 'original.tmpk'}")
    params, curve, report = experiment.run_regime(
        args.regime, data, config, baseline_params=baseline
    )
    state = experiment.STATE_OF_REGIME[args.regime]
    digest = model.save_params(params, out / f"{state}.tmpk")
    model.save_loss_curve(curve, out / f"{state}.csv")
    print(
        f"{args.regime}: checkpoint {digest}, "
        f"final epoch loss {curve[-1]:.6f}"
    )
    if test is not None:
        snapshot = model.extract_embeddings(params, test, state, probe_uids=probe)
        write_snapshot_file(snapshot, out / f"{state}.edrf")
        _write_text(
            out / f"{state}.eval.json",
            json.dumps(report.as_dict(), indent=2) + "\n",
        )
        pooled = report.micro
        print(
            f"span micro-F1 over {'/'.join(report.scope)}: {pooled.f1:.4f} "
            f"(P {pooled.precision:.4f}, R {pooled.recall:.4f})"
        )
    return 0


def cmd_drift(args) -> int:
    before = load_snapshot(args.before)
    after = load_snapshot(args.after)
    config = MetricConfig(
        shrinkage_lambda=args.shrinkage_lambda,
        budget=PairBudget(
            full_threshold=args.full_threshold, samples=args.budget
        ),
        seed=args.seed,
    )
    report = compute_drift_report(before, after, config)
    text = report_to_json(report) + "\n"
    if args.out is not None:
        _write_text(args.out, text)
        print(f"wrote {report.pair_name} drift report to {args.out}")
    else:
        sys.stdout.write(text)
    if args.csv is not None:
        _write_text(args.csv, reports_to_csv([report]))
    return 0


def cmd_suite(args) -> int:
    if args.config is not None:
        config = experiment.suite_config_from_dict(_read_json(args.config))
    else:
        config = experiment.SuiteConfig()
    if args.seeds < 1:
        raise InvalidConfig("--seeds must be >= 1")
    if args.seeds == 1:
        reports = [experiment.run_suite(config, out_dir=args.out)]
    else:
        seeds = [config.seed + i for i in range(args.seeds)]
        reports, _ = experiment.run_multi_seed(config, seeds, out_dir=args.out)
    sys.stdout.write(experiment.table1_csv(reports[-1]))
    failures = {
        (report.metadata["seed"], key): why
        for report in reports
        for key, why in report.metadata["failures"].items()
    }
    if failures:
        for (seed, key), why in sorted(failures.items()):
            print(f"seed {seed}: {key} failed: {why}", file=sys.stderr)
        return 2
    print(f"suite artifacts under {args.out}")
    return 0


def cmd_report(args) -> int:
    path = pathlib.Path(args.suite)
    if path.is_dir():
        path = path / "suite.json"
    obj = _read_json(path)
    table1 = experiment.table1_csv_from_dict(obj)
    table2 = experiment.table2_csv_from_dict(obj)
    if args.out is not None:
        out = pathlib.Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create {args.out!r}: {exc}") from exc
        _write_text(out / "table1.csv", table1)
        _write_text(out / "table2.csv", table2)
        print(f"rebuilt table1.csv and table2.csv under {args.out}")
    else:
        sys.stdout.write(table1)
        sys.stdout.write(table2)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drift-lens",
        description="Per-class representation drift diagnostics for "
        "sequence labeling models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--config", help="corpus config JSON (defaults when omitted)")
    p.add_argument("--out", required=True, help="output corpus JSONL")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-a", help="also write the A split here")
    p.add_argument("--out-b", help="also write the B split here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one regime on an A/B corpus pair")
    p.add_argument(
        "--regime", required=True, choices=experiment.REGIME_NAMES
    )
    p.add_argument("--corpus-a", required=True, help="first-stage corpus JSONL")
    p.add_argument("--corpus-b", required=True, help="second-stage corpus JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--test-corpus", help="held-out corpus: adds eval.json and a snapshot"
    )
    p.add_argument("--probe-tokens", type=int, default=5000)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--l2-decay", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("drift", help="drift metrics between two snapshots")
    p.add_argument("--before", required=True, help="EDRF or JSONL snapshot")
    p.add_argument("--after", required=True, help="EDRF or JSONL snapshot")
    p.add_argument(
        "--lambda",
        dest="shrinkage_lambda",
        type=float,
        default=1e-3,
        help="covariance shrinkage strength (default 1e-3)",
    )
    p.add_argument(
        "--budget",
        type=int,
        default=100_000,
        help="sampled pair budget per class (default 100000)",
    )
    p.add_argument(
        "--full-threshold",
        type=int,
        default=250_000,
        help="enumerate all pairs when their count stays under this",
    )
    p.add_argument("--seed", type=int, default=0, help="pair sampling seed")
    p.add_argument("--out", help="report JSON path (stdout when omitted)")
    p.add_argument("--csv", help="also write a one-pair csv table here")
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("suite", help="run the full regime comparison")
    p.add_argument("--config", help="suite config JSON (defaults when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--seeds",
        type=int,
        default=1,
        help="run this many consecutive seeds and aggregate",
    )
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("report", help="rebuild csv tables from suite.json")
    p.add_argument(
        "--suite", required=True, help="suite.json or the directory holding it"
    )
    p.add_argument("--out", help="directory for the csv files (stdout when omitted)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; that is invalid input here
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except DriftLensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
