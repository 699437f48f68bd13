"""The three per-class drift diagnostics over a pair of aligned snapshots.

For a class c with aligned token pairs (e_before,i, e_after,i):

    mean drift       ||mean_i(e_after,i - e_before,i)||_2
    variance change  trace(cov_after,c) - trace(cov_before,c), no shrinkage
    covariance drift mean_{i<j} |d_M(after_i, after_j; cov_after,c)
                               - d_M(before_i, before_j; cov_before,c)|

Covariance drift enumerates all C(n,2) pairs up to a budget threshold and
switches to seeded without-replacement sampling beyond it, so reports are
reproducible byte for byte at any scale. Classes whose counts cannot support
a metric get a flag and an absent value, never a fabricated zero.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, stats
from .errors import InvalidValue
from .snapshot import AlignedPairSet, EmbeddingSnapshot, align

FLAG_COV_BEFORE = "covariance_before"
FLAG_COV_AFTER = "covariance_after"
FLAG_TOO_FEW_PAIRS = "too_few_pairs"


@dataclass(frozen=True)
class PairBudget:
    """Pair-count policy for covariance drift.

    full_threshold: enumerate every pair while C(n,2) stays at or below this.
    samples: number of distinct pairs drawn (without replacement) beyond it.
    """

    full_threshold: int = 250_000
    samples: int = 100_000

    def __post_init__(self):
        if self.full_threshold < 0 or self.samples < 1:
            raise InvalidValue("budget must have full_threshold >= 0, samples >= 1")


@dataclass(frozen=True)
class MetricConfig:
    shrinkage_lambda: float = 1e-3
    budget: PairBudget = field(default_factory=PairBudget)
    seed: int = 0

    def __post_init__(self):
        if self.shrinkage_lambda < 0:
            raise InvalidValue("shrinkage_lambda must be >= 0")


@dataclass
class ClassDrift:
    """One report row. Absent metrics are None, with the reason in flags."""

    class_id: str
    mean_drift: float | None
    var_change: float | None
    cov_drift: float | None
    n_before: int
    n_after: int
    n_aligned: int
    flags: set[str] = field(default_factory=set)


@dataclass
class DriftReport:
    pair_name: str
    classes: list[ClassDrift]
    config: MetricConfig
    metadata: dict

    def row(self, class_id: str) -> ClassDrift:
        for row in self.classes:
            if row.class_id == class_id:
                return row
        raise KeyError(class_id)


def mean_drift(pairs: AlignedPairSet, class_name: str) -> float:
    """L2 norm of the mean per-token embedding delta for one class."""
    n = pairs.n_aligned(class_name)
    if n < 1:
        raise InvalidValue(f"no aligned tokens for class {class_name!r}")
    before, after = pairs.pairs[class_name]
    delta = np.mean(
        after.astype(np.float64) - before.astype(np.float64), axis=0
    )
    return float(np.linalg.norm(delta))


def variance_change(before_stats: stats.ClassStats, after_stats: stats.ClassStats) -> float:
    """trace(cov_after) - trace(cov_before); positive means expansion."""
    for side in (before_stats, after_stats):
        if side.degenerate:
            raise InvalidValue(
                f"class {side.class_id!r}: variance undefined for {side.count} row(s)"
            )
    return after_stats.trace - before_stats.trace


def _pair_stream(seed: int, tag: str) -> np.random.Generator:
    # Counter-based generator keyed on (seed, hashed tag): any class or pair
    # name gets its own reproducible stream regardless of evaluation order.
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    key = np.array(
        [seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def sample_pair_indices(
    n: int, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """k distinct index pairs (i < j) out of C(n,2), without replacement."""
    total = n * (n - 1) // 2
    k = min(k, total)
    if 2 * k >= total:
        # Dense regime: permute the full enumeration.
        ii, jj = np.triu_indices(n, k=1)
        pick = rng.permutation(total)[:k]
        return ii[pick].astype(np.int64), jj[pick].astype(np.int64)
    # Sparse regime: rejection sampling in draw order.
    chosen = np.empty(0, dtype=np.uint64)
    while chosen.size < k:
        m = max(4 * (k - chosen.size), 1024)
        a = rng.integers(0, n, size=m, dtype=np.int64)
        b = rng.integers(0, n, size=m, dtype=np.int64)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        codes = (lo[lo != hi].astype(np.uint64) * np.uint64(n)) + hi[lo != hi]
        codes = codes[~np.isin(codes, chosen)]
        _, first = np.unique(codes, return_index=True)
        chosen = np.concatenate([chosen, codes[np.sort(first)]])
    chosen = chosen[:k]
    return (
        (chosen // np.uint64(n)).astype(np.int64),
        (chosen % np.uint64(n)).astype(np.int64),
    )


def covariance_drift(
    pairs: AlignedPairSet,
    class_name: str,
    before_stats: stats.ClassStats,
    after_stats: stats.ClassStats,
    budget: PairBudget,
    *,
    seed: int = 0,
    tag: str | None = None,
) -> float:
    """Mean absolute change of pairwise Mahalanobis distances for one class.

    Each side is whitened by its own covariance factor first, which turns
    every pair distance into a Euclidean one and leaves a flat reduction
    for the kernel backend.
    """
    n = pairs.n_aligned(class_name)
    if n < 2:
        raise InvalidValue(f"class {class_name!r}: need >= 2 aligned tokens, have {n}")
    before, after = pairs.pairs[class_name]
    before_w = before_stats.whiten(before)
    after_w = after_stats.whiten(after)
    total = n * (n - 1) // 2
    if total <= budget.full_threshold:
        return float(_kernels.pair_absdiff_mean_full(before_w, after_w))
    rng = _pair_stream(seed, tag if tag is not None else class_name)
    idx_i, idx_j = sample_pair_indices(n, budget.samples, rng)
    return float(_kernels.pair_absdiff_mean(before_w, after_w, idx_i, idx_j))


def _class_rows(before: EmbeddingSnapshot, after: EmbeddingSnapshot) -> list[str]:
    # Shared classes, entity names sorted, "O" pinned to the last row.
    shared = set(before.class_table) & set(after.class_table)
    return sorted(shared - {"O"}) + ["O"]


def _side_stats(snapshot: EmbeddingSnapshot, class_name: str, lam: float):
    """(raw, shrunk, count) covariance stats of one snapshot's class
    population; (None, None, count) when no estimate is possible."""
    mask = snapshot.tokens_of_class(class_name)
    count = int(mask.sum())
    if count < 2:
        return None, None, count
    emb = snapshot.embeddings[mask]
    raw = stats.covariance(emb, 0.0, class_id=class_name)
    shrunk = stats.covariance(emb, lam, class_id=class_name)
    return raw, shrunk, count


def compute_drift_report(
    before: EmbeddingSnapshot,
    after: EmbeddingSnapshot,
    config: MetricConfig | None = None,
    *,
    pair_name: str | None = None,
) -> DriftReport:
    """All three diagnostics for every class shared by the two snapshots.

    Per-class shortfalls (too few tokens, degenerate covariance) become
    flags on that row; they never abort the rest of the report.
    """
    cfg = config if config is not None else MetricConfig()
    name = pair_name or f"{before.stage_name}_vs_{after.stage_name}"
    aligned = align(before, after)

    rows = []
    for class_name in _class_rows(before, after):
        raw_b, shrunk_b, n_before = _side_stats(before, class_name, cfg.shrinkage_lambda)
        raw_a, shrunk_a, n_after = _side_stats(after, class_name, cfg.shrinkage_lambda)
        n_aligned = aligned.n_aligned(class_name)
        flags: set[str] = set()
        if raw_b is None:
            flags.add(FLAG_COV_BEFORE)
        if raw_a is None:
            flags.add(FLAG_COV_AFTER)
        if n_aligned < 2:
            flags.add(FLAG_TOO_FEW_PAIRS)

        md = mean_drift(aligned, class_name) if n_aligned >= 1 else None
        vc = (
            variance_change(raw_b, raw_a)
            if raw_b is not None and raw_a is not None
            else None
        )
        cd = None
        if n_aligned >= 2 and shrunk_b is not None and shrunk_a is not None:
            cd = covariance_drift(
                aligned,
                class_name,
                shrunk_b,
                shrunk_a,
                cfg.budget,
                seed=cfg.seed,
                tag=f"{name}|{class_name}",
            )
        rows.append(
            ClassDrift(
                class_id=class_name,
                mean_drift=md,
                var_change=vc,
                cov_drift=cd,
                n_before=n_before,
                n_after=n_after,
                n_aligned=n_aligned,
                flags=flags,
            )
        )

    metadata = {
        "covariance_divisor": "population",
        "mean_weighting": "token_count",
        "kernel_backend": _kernels.BACKEND,
        "dropped_before": aligned.dropped_before,
        "dropped_after": aligned.dropped_after,
    }
    return DriftReport(pair_name=name, classes=rows, config=cfg, metadata=metadata)


# -- Serialization -----------------------------------------------------------

CSV_COLUMNS = ["pair", "class", "mean_drift", "var_change", "cov_drift", "n_aligned", "flags"]


def report_to_dict(report: DriftReport) -> dict:
    return {
        "pair_name": report.pair_name,
        "metric_config": {
            "shrinkage_lambda": report.config.shrinkage_lambda,
            "pair_full_threshold": report.config.budget.full_threshold,
            "pair_samples": report.config.budget.samples,
            "seed": report.config.seed,
        },
        "metadata": dict(report.metadata),
        "classes": [
            {
                "class": row.class_id,
                "mean_drift": row.mean_drift,
                "var_change": row.var_change,
                "cov_drift": row.cov_drift,
                "n_before": row.n_before,
                "n_after": row.n_after,
                "n_aligned": row.n_aligned,
                "flags": sorted(row.flags),
            }
            for row in report.classes
        ],
    }


def report_to_json(report: DriftReport) -> str:
    return json.dumps(report_to_dict(report), indent=2)


def _cell(value: float | None) -> str:
    return "" if value is None else repr(value)


def reports_to_csv(reports: list[DriftReport]) -> str:
    """One CSV over any number of pair reports, Table-style column order."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        for row in report.classes:
            writer.writerow(
                [
                    report.pair_name,
                    row.class_id,
                    _cell(row.mean_drift),
                    _cell(row.var_change),
                    _cell(row.cov_drift),
                    row.n_aligned,
                    ";".join(sorted(row.flags)),
                ]
            )
    return out.getvalue()
