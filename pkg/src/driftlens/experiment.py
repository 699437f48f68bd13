"""Training regimes, span-level evaluation, and the full comparison suite.

Six regimes over an A/B corpus split:

    baseline_bert_tags  train on A with the new PII classes masked to 'O'
    joint               train on A+B with all labels, fresh heads (upper bound)
    naive_incremental   resume the baseline, train on B, nothing frozen
    freeze_except_o     resume, train on B, old entity heads frozen,
                        'O' and PII heads plus backbone trainable
    freeze_all_heads    resume, train on B, every head frozen (PII heads
                        stay at their zero init), only the backbone trains
    freeze_backbone     resume, train on B, backbone and all old heads
                        frozen, only PII heads trainable

Every incremental regime resumes from the SAME baseline checkpoint; the
baseline parameters are hashed and never mutated. Embedding snapshots are
taken on one fixed probe subset of a held-out test corpus (stratified by
gold class, PII tokens keeping their true class even where training saw
'O'), so all drift pairs align the identical token set.

Headline metric is span-level exact-match micro-F1 pooled over entity
classes; token-level micro-F1 rides along as an auxiliary diagnostic.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, metrics, model
from .corpus import (
    Corpus,
    CorpusConfig,
    config_from_dict,
    generate_corpus,
    mask_labels,
    split_ab,
    _config_to_dict,
)
from .errors import (
    InvalidConfig,
    IoError,
    LengthMismatch,
    SchemaMismatch,
    UnknownClass,
)
from .metrics import DriftReport, MetricConfig, compute_drift_report
from .snapshot import EmbeddingSnapshot, write_snapshot_file

REGIME_NAMES = [
    "baseline_bert_tags",
    "joint",
    "naive_incremental",
    "freeze_except_o",
    "freeze_all_heads",
    "freeze_backbone",
]

# Short model-state names used for snapshots and drift pair labels.
STATE_OF_REGIME = {
    "baseline_bert_tags": "original",
    "joint": "joint",
    "naive_incremental": "naive",
    "freeze_except_o": "freeze_except_o",
    "freeze_all_heads": "freeze_all_heads",
    "freeze_backbone": "freeze_backbone",
}

DRIFT_PAIRS = [
    ("original", "joint"),
    ("original", "naive"),
    ("original", "freeze_except_o"),
    ("joint", "naive"),
    ("joint", "freeze_except_o"),
    ("naive", "freeze_except_o"),
]


def derive_seed(master: int, tag: str) -> int:
    """Independent 64-bit stream seed for one named purpose."""
    digest = hashlib.blake2b(
        f"{master}|{tag}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


# -- evaluation ---------------------------------------------------------------

@dataclass
class ClassEval:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0

    def as_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass
class EvalReport:
    mode: str
    scope: list[str]  # entity classes pooled into the micro scores
    per_class: dict[str, ClassEval]
    token_micro_f1: float

    def micro_over(self, classes) -> ClassEval:
        pooled = ClassEval()
        for name in classes:
            ce = self.per_class.get(name)
            if ce is None:
                continue
            pooled.tp += ce.tp
            pooled.fp += ce.fp
            pooled.fn += ce.fn
        return pooled

    @property
    def micro(self) -> ClassEval:
        return self.micro_over(self.scope)

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "scope": list(self.scope),
            "per_class": {n: ce.as_dict() for n, ce in self.per_class.items()},
            "micro": self.micro.as_dict(),
            "token_micro_f1": self.token_micro_f1,
        }


def gold_spans(seq) -> list[tuple[str, int, int]]:
    """(class, start, end-exclusive) triples from span annotations."""
    spans = []
    current = None
    for i, (label, sid) in enumerate(zip(seq.labels, seq.span_ids)):
        if sid is None:
            current = None
            continue
        if current is not None and current[3] == sid:
            current[2] = i + 1
            continue
        current = [label, i, i + 1, sid]
        spans.append(current)
    return [(label, start, end) for label, start, end, _ in spans]


def predicted_spans(labels: list[str]) -> list[tuple[str, int, int]]:
    """Contiguous same-class runs of non-background predictions."""
    spans = []
    start = None
    for i, label in enumerate(labels + ["O"]):
        if start is not None and label != labels[start]:
            spans.append((labels[start], start, i))
            start = None
        if start is None and label != "O":
            start = i
    return spans


def evaluate_f1(
    corpus: Corpus,
    predictions: list[list[str]],
    mode: str = "span",
    scope: list[str] | None = None,
) -> EvalReport:
    """Exact-match span F1 (or token F1) pooled over the entity scope."""
    if mode not in ("span", "token"):
        raise InvalidConfig(f"unknown eval mode {mode!r}")
    if len(predictions) != len(corpus.sequences):
        raise LengthMismatch(
            f"{len(predictions)} prediction sequences vs "
            f"{len(corpus.sequences)} gold"
        )
    entity_classes = [n for n in corpus.config.class_names() if n != "O"]
    if scope is None:
        scope = entity_classes

    known = set(corpus.config.class_names())
    span_counts = {name: ClassEval() for name in entity_classes}
    token_counts = {name: ClassEval() for name in entity_classes}
    for seq, pred in zip(corpus.sequences, predictions):
        if len(pred) != len(seq):
            raise LengthMismatch(
                f"sequence {seq.seq_id}: {len(pred)} predictions for "
                f"{len(seq)} tokens"
            )
        for label in pred:
            if label not in known:
                raise UnknownClass(label)
        gold = set(gold_spans(seq))
        mine = set(predicted_spans(list(pred)))
        for span in mine & gold:
            span_counts[span[0]].tp += 1
        for span in mine - gold:
            span_counts[span[0]].fp += 1
        for span in gold - mine:
            span_counts[span[0]].fn += 1
        for g, p in zip(seq.labels, pred):
            if p == g and g != "O":
                token_counts[g].tp += 1
            else:
                if p != "O":
                    token_counts[p].fp += 1
                if g != "O":
                    token_counts[g].fn += 1

    counts = span_counts if mode == "span" else token_counts
    token_pool = ClassEval()
    for name in scope:
        token_pool.tp += token_counts[name].tp
        token_pool.fp += token_counts[name].fp
        token_pool.fn += token_counts[name].fn
    return EvalReport(
        mode=mode,
        scope=list(scope),
        per_class={name: counts[name] for name in entity_classes},
        token_micro_f1=token_pool.f1,
    )


# -- regimes ------------------------------------------------------------------

@dataclass(frozen=True)
class RegimeSpec:
    name: str
    resume_baseline: bool
    corpus_key: str  # "a_masked" | "full" | "b"
    frozen_heads: tuple[str, ...]  # ("*",) freezes every head
    backbone_frozen: bool
    class_scope: str  # "old" | "all"


def regime_spec(name: str) -> RegimeSpec:
    table = {
        "baseline_bert_tags": RegimeSpec(name, False, "a_masked", (), False, "old"),
        "joint": RegimeSpec(name, False, "full", (), False, "all"),
        "naive_incremental": RegimeSpec(name, True, "b", (), False, "all"),
        "freeze_except_o": RegimeSpec(
            name, True, "b", ("LOC", "PER", "ORG"), False, "all"
        ),
        "freeze_all_heads": RegimeSpec(name, True, "b", ("*",), False, "all"),
        "freeze_backbone": RegimeSpec(
            name, True, "b", ("O", "LOC", "PER", "ORG"), True, "all"
        ),
    }
    if name not in table:
        raise InvalidConfig(f"unknown regime {name!r}; choose from {REGIME_NAMES}")
    return table[name]


@dataclass
class SuiteData:
    """All corpora one suite run works from.

    test may be None when no held-out corpus exists; regimes then train
    without producing an evaluation report.
    """

    full: Corpus
    corpus_a: Corpus
    a_masked: Corpus
    corpus_b: Corpus
    test: Corpus | None
    probe: np.ndarray | None  # token uids, sorted

    def for_key(self, key: str) -> Corpus:
        return {"a_masked": self.a_masked, "full": self.full, "b": self.corpus_b}[key]


def old_entity_classes(config: CorpusConfig) -> list[str]:
    pii = config.pii_class_names()
    return [
        c.name for c in config.classes
        if c.kind != "background" and c.name not in pii
    ]


def pii_entity_classes(config: CorpusConfig) -> list[str]:
    names = config.pii_class_names()
    return [c.name for c in config.classes if c.name in names]


def stratified_probe_uids(
    corpus: Corpus, n_tokens: int, seed: int
) -> np.ndarray:
    """A fixed probe subset: equal per-class quotas by gold label, any
    shortfall in rare classes redistributed to classes with spare tokens."""
    _, y, uids = model._flatten(corpus)
    names = corpus.config.class_names()
    pools = []
    for ci, name in enumerate(names):
        pool = uids[y == ci]
        rng = np.random.Generator(
            np.random.Philox(
                key=np.array([seed, derive_seed(ci, name)], dtype=np.uint64)
            )
        )
        pools.append(pool[rng.permutation(pool.shape[0])])
    n = min(n_tokens, sum(p.shape[0] for p in pools))
    take = [0] * len(pools)
    active = {ci for ci, p in enumerate(pools) if p.shape[0]}
    remaining = n
    while remaining > 0 and active:
        share = max(1, remaining // len(active))
        for ci in sorted(active):
            if remaining == 0:
                break
            add = min(share, pools[ci].shape[0] - take[ci], remaining)
            take[ci] += add
            remaining -= add
            if take[ci] == pools[ci].shape[0]:
                active.discard(ci)
    return np.sort(np.concatenate([p[:t] for p, t in zip(pools, take) if t]))


@dataclass(frozen=True)
class SuiteConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    train: model.TrainConfig = field(default_factory=model.TrainConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)
    hidden: int = 64
    test_sequences: int = 500
    probe_tokens: int = 5000
    seed: int = 0

    def validate(self) -> None:
        self.corpus.validate()
        if self.hidden < 1 or self.test_sequences < 1 or self.probe_tokens < 1:
            raise InvalidConfig("hidden, test_sequences, probe_tokens must be >= 1")


def suite_config_from_dict(obj: dict) -> SuiteConfig:
    try:
        kwargs = dict(obj)
        if "corpus" in kwargs:
            kwargs["corpus"] = config_from_dict(kwargs["corpus"])
        if "train" in kwargs:
            kwargs["train"] = model.TrainConfig(**kwargs["train"])
        if "metric" in kwargs:
            m = dict(kwargs["metric"])
            if "budget" in m:
                m["budget"] = metrics.PairBudget(**m["budget"])
            kwargs["metric"] = MetricConfig(**m)
        config = SuiteConfig(**kwargs)
    except TypeError as exc:
        raise InvalidConfig(f"bad suite config: {exc}") from exc
    config.validate()
    return config


def build_data(config: SuiteConfig) -> SuiteData:
    train_cfg = replace(config.corpus, seed=derive_seed(config.seed, "corpus-train"))
    test_cfg = replace(
        config.corpus,
        sequences=config.test_sequences,
        seed=derive_seed(config.seed, "corpus-test"),
    )
    full = generate_corpus(train_cfg)
    corpus_a, corpus_b = split_ab(full)
    a_masked = mask_labels(corpus_a, set(old_entity_classes(config.corpus)))
    test = generate_corpus(test_cfg)
    probe = stratified_probe_uids(
        test, config.probe_tokens, derive_seed(config.seed, "probe")
    )
    return SuiteData(
        full=full,
        corpus_a=corpus_a,
        a_masked=a_masked,
        corpus_b=corpus_b,
        test=test,
        probe=probe,
    )


def _scope_indices(table: list[str], config: CorpusConfig, scope: str) -> list[int]:
    if scope == "all":
        return list(range(len(table)))
    allowed = ["O"] + old_entity_classes(config)
    return [table.index(name) for name in allowed]


def _predict_corpus(
    params: model.ToyModelParams, corpus: Corpus, allowed: list[int]
) -> list[list[str]]:
    x, _, _ = model._flatten(corpus)
    pred_ids = model.predict(params, x, allowed_classes=allowed)
    table = params.class_table
    out, pos = [], 0
    for seq in corpus.sequences:
        out.append([table[c] for c in pred_ids[pos : pos + len(seq)]])
        pos += len(seq)
    return out


def run_regime(
    name: str,
    data: SuiteData,
    config: SuiteConfig,
    baseline_params: model.ToyModelParams | None = None,
) -> tuple[model.ToyModelParams, list[float], EvalReport | None]:
    """Train one regime and evaluate it on the held-out test corpus.

    Incremental regimes require the shared baseline checkpoint; it is
    copied, never mutated.
    """
    spec = regime_spec(name)
    table = config.corpus.class_names()
    if spec.resume_baseline:
        if baseline_params is None:
            raise InvalidConfig(f"regime {name!r} resumes the baseline checkpoint")
        if baseline_params.class_table != table:
            raise SchemaMismatch("baseline class table differs from the corpus")
        start = baseline_params
    else:
        start = model.init_params(
            table,
            d_in=config.corpus.dim,
            hidden=config.hidden,
            seed=derive_seed(config.seed, "init"),
        )
    mask = model.FreezeMask.none(len(table))
    if spec.frozen_heads == ("*",):
        mask = mask.freezing(table, set(table))
    elif spec.frozen_heads:
        mask = mask.freezing(table, set(spec.frozen_heads))
    mask = replace(mask, backbone_frozen=spec.backbone_frozen)
    train_cfg = replace(config.train, seed=derive_seed(config.seed, f"train|{name}"))
    active = _scope_indices(table, config.corpus, spec.class_scope)
    trained, curve = model.train_stage(
        start, data.for_key(spec.corpus_key), mask, train_cfg,
        active_classes=active if len(active) < len(table) else None,
    )
    report = None
    if data.test is not None:
        predictions = _predict_corpus(trained, data.test, active)
        eval_scope = (
            old_entity_classes(config.corpus)
            if spec.class_scope == "old"
            else [n for n in table if n != "O"]
        )
        report = evaluate_f1(data.test, predictions, mode="span", scope=eval_scope)
    return trained, curve, report


# -- the suite ----------------------------------------------------------------

@dataclass
class SuiteReport:
    config: SuiteConfig
    eval_reports: dict[str, EvalReport]
    drift_reports: list[DriftReport]
    loss_curves: dict[str, list[float]]
    metadata: dict

    def drift(self, pair_name: str) -> DriftReport:
        for report in self.drift_reports:
            if report.pair_name == pair_name:
                return report
        raise KeyError(pair_name)


def run_suite(
    config: SuiteConfig,
    out_dir=None,
    include_self_pair: bool = False,
) -> SuiteReport:
    """All six regimes, snapshots on the shared probe set, six drift pairs.

    A failing regime is recorded in metadata["failures"] and skipped by the
    later stages instead of aborting the whole suite.
    """
    config.validate()
    data = build_data(config)
    table = config.corpus.class_names()

    out_path = None
    if out_dir is not None:
        import pathlib

        out_path = pathlib.Path(out_dir)
        (out_path / "snapshots").mkdir(parents=True, exist_ok=True)
        (out_path / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out_path / "curves").mkdir(parents=True, exist_ok=True)

    eval_reports: dict[str, EvalReport] = {}
    loss_curves: dict[str, list[float]] = {}
    snapshots: dict[str, EmbeddingSnapshot] = {}
    failures: dict[str, str] = {}
    baseline_params = None
    baseline_hash = None

    for name in REGIME_NAMES:
        spec = regime_spec(name)
        try:
            params, curve, report = run_regime(
                name, data, config,
                baseline_params=baseline_params if spec.resume_baseline else None,
            )
        except Exception as exc:  # record and move on: partial suites are real
            failures[name] = f"{type(exc).__name__}: {exc}"
            continue
        state = STATE_OF_REGIME[name]
        eval_reports[name] = report
        loss_curves[name] = curve
        snapshots[state] = model.extract_embeddings(
            params, data.test, state, probe_uids=data.probe
        )
        if name == "baseline_bert_tags":
            baseline_params = params
            baseline_hash = hashlib.blake2b(
                model.params_to_bytes(params), digest_size=16
            ).hexdigest()
        if out_path is not None:
            model.save_params(params, out_path / "checkpoints" / f"{state}.tmpk")
            model.save_loss_curve(curve, out_path / "curves" / f"{state}.csv")
            write_snapshot_file(
                snapshots[state], out_path / "snapshots" / f"{state}.edrf"
            )

    pairs = list(DRIFT_PAIRS)
    if include_self_pair:
        pairs = [("original", "original")] + pairs
    drift_reports = []
    for before, after in pairs:
        if before not in snapshots or after not in snapshots:
            failures[f"{before}_vs_{after}"] = "missing snapshot"
            continue
        drift_reports.append(
            compute_drift_report(
                snapshots[before],
                snapshots[after],
                config.metric,
                pair_name=f"{before}_vs_{after}",
            )
        )

    report = SuiteReport(
        config=config,
        eval_reports=eval_reports,
        drift_reports=drift_reports,
        loss_curves=loss_curves,
        metadata={
            "seed": config.seed,
            "class_table": table,
            "kernel_backend": _kernels.BACKEND,
            "baseline_checkpoint": baseline_hash,
            "probe_tokens": int(data.probe.shape[0]),
            "failures": failures,
        },
    )
    if out_path is not None:
        emit_reports(report, out_path)
    return report


# -- emission -----------------------------------------------------------------

def suite_report_to_dict(report: SuiteReport) -> dict:
    return {
        "config": {
            "corpus": _config_to_dict(report.config.corpus),
            "train": {
                "learning_rate": report.config.train.learning_rate,
                "momentum": report.config.train.momentum,
                "epochs": report.config.train.epochs,
                "batch_size": report.config.train.batch_size,
                "l2_decay": report.config.train.l2_decay,
            },
            "metric": {
                "shrinkage_lambda": report.config.metric.shrinkage_lambda,
                "pair_full_threshold": report.config.metric.budget.full_threshold,
                "pair_samples": report.config.metric.budget.samples,
            },
            "hidden": report.config.hidden,
            "test_sequences": report.config.test_sequences,
            "probe_tokens": report.config.probe_tokens,
            "seed": report.config.seed,
        },
        "metadata": dict(report.metadata),
        "eval": {
            name: rep.as_dict() for name, rep in report.eval_reports.items()
        },
        "loss_curves": {k: list(v) for k, v in report.loss_curves.items()},
        "drift": [metrics.report_to_dict(r) for r in report.drift_reports],
    }


def table1_csv_from_dict(obj: dict) -> str:
    entity = [n for n in obj["metadata"]["class_table"] if n != "O"]
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        ["experiment", "f1_overall"] + [f"f1_{n.lower()}" for n in entity]
    )
    all_entities = set(entity)
    for name in REGIME_NAMES:
        rep = obj["eval"].get(name)
        if rep is None:
            continue
        scoped = set(rep["scope"])
        overall = f"{rep['micro']['f1']:.4f}" if scoped == all_entities else ""
        cells = [
            f"{rep['per_class'][n]['f1']:.4f}"
            if n in scoped and n in rep["per_class"]
            else ""
            for n in entity
        ]
        writer.writerow([name, overall] + cells)
    return out.getvalue()


def table2_csv_from_dict(obj: dict) -> str:
    def cell(value) -> str:
        return "" if value is None else repr(value)

    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(metrics.CSV_COLUMNS)
    for pair in obj["drift"]:
        for row in pair["classes"]:
            writer.writerow(
                [
                    pair["pair_name"],
                    row["class"],
                    cell(row["mean_drift"]),
                    cell(row["var_change"]),
                    cell(row["cov_drift"]),
                    row["n_aligned"],
                    ";".join(row["flags"]),
                ]
            )
    return out.getvalue()


def table1_csv(report: SuiteReport) -> str:
    return table1_csv_from_dict(suite_report_to_dict(report))


def emit_reports(report: SuiteReport, out_dir) -> list[str]:
    """suite.json, table1.csv, table2.csv under out_dir; returns the paths."""
    import pathlib

    out_path = pathlib.Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    obj = suite_report_to_dict(report)
    manifest = []
    try:
        target = out_path / "suite.json"
        target.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
        manifest.append(str(target))
        target = out_path / "table1.csv"
        target.write_text(table1_csv_from_dict(obj), encoding="utf-8")
        manifest.append(str(target))
        target = out_path / "table2.csv"
        target.write_text(table2_csv_from_dict(obj), encoding="utf-8")
        manifest.append(str(target))
    except OSError as exc:
        raise IoError(f"cannot write reports under {out_dir!r}: {exc}") from exc
    return manifest


# -- multi-seed aggregation ---------------------------------------------------

def aggregate_suites(reports: list[SuiteReport]) -> dict:
    """Seed-mean F1 per regime/class and seed-mean drift metrics per pair."""
    if not reports:
        raise InvalidConfig("nothing to aggregate")
    table = reports[0].metadata["class_table"]
    entity = [n for n in table if n != "O"]
    pii = pii_entity_classes(reports[0].config.corpus)

    def mean(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    eval_agg = {}
    for name in REGIME_NAMES:
        reps = [r.eval_reports[name] for r in reports if name in r.eval_reports]
        if not reps:
            continue
        eval_agg[name] = {
            "seeds": len(reps),
            "f1_overall": mean(
                [r.micro.f1 if set(r.scope) == set(entity) else None for r in reps]
            ),
            "f1_pii_micro": mean([r.micro_over(pii).f1 for r in reps]),
            "per_class_f1": {
                n: mean(
                    [
                        r.per_class[n].f1 if n in r.scope else None
                        for r in reps
                    ]
                )
                for n in entity
            },
        }

    drift_agg = {}
    for before, after in DRIFT_PAIRS:
        pair = f"{before}_vs_{after}"
        rows: dict[str, dict[str, list]] = {}
        for report in reports:
            try:
                dr = report.drift(pair)
            except KeyError:
                continue
            for row in dr.classes:
                slot = rows.setdefault(
                    row.class_id, {"mean_drift": [], "var_change": [], "cov_drift": []}
                )
                slot["mean_drift"].append(row.mean_drift)
                slot["var_change"].append(row.var_change)
                slot["cov_drift"].append(row.cov_drift)
        if rows:
            drift_agg[pair] = {
                cls: {k: mean(v) for k, v in slots.items()}
                for cls, slots in rows.items()
            }
    return {"eval": eval_agg, "drift": drift_agg, "seeds": len(reports)}


def run_multi_seed(
    config: SuiteConfig, seeds: list[int], out_dir=None
) -> tuple[list[SuiteReport], dict]:
    import pathlib

    reports = []
    for seed in seeds:
        seed_dir = None
        if out_dir is not None:
            seed_dir = pathlib.Path(out_dir) / f"seed_{seed}"
        reports.append(run_suite(replace(config, seed=seed), out_dir=seed_dir))
    summary = aggregate_suites(reports)
    if out_dir is not None:
        target = pathlib.Path(out_dir) / "aggregate.json"
        try:
            target.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write {target}: {exc}") from exc
    return reports, summary
