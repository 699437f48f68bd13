import json

import numpy as np
import pytest

from driftlens import metrics, snapshot as snap
from driftlens.errors import InvalidValue
from driftlens.metrics import MetricConfig, PairBudget
from driftlens.stats import COV_EPS_FLOOR


# -- Oracles ------------------------------------------------------------------

def cov_oracle(rows, lam):
    rows = np.asarray(rows, dtype=float)
    mu = rows.mean(axis=0)
    c = (rows - mu).T @ (rows - mu) / len(rows)
    if lam > 0:
        c = c + lam * (np.trace(c) / c.shape[0] + COV_EPS_FLOOR) * np.eye(c.shape[0])
    return c


def cov_drift_oracle(before, after, lam):
    # Full enumeration with explicit inverses, nothing shared with the
    # implementation under test.
    inv_b = np.linalg.inv(cov_oracle(before, lam))
    inv_a = np.linalg.inv(cov_oracle(after, lam))
    vals = []
    n = len(before)
    for i in range(n):
        for j in range(i + 1, n):
            db = np.sqrt((before[i] - before[j]) @ inv_b @ (before[i] - before[j]))
            da = np.sqrt((after[i] - after[j]) @ inv_a @ (after[i] - after[j]))
            vals.append(abs(da - db))
    return float(np.mean(vals))


# -- Builders -----------------------------------------------------------------

def build_snapshot(uids, labels, embeddings, classes, stage="s"):
    table = list(classes)
    return snap.EmbeddingSnapshot(
        stage_name=stage,
        dim=np.atleast_2d(np.asarray(embeddings)).shape[1],
        class_table=table,
        uids=np.asarray(uids, dtype=np.uint64),
        class_ids=np.array([table.index(l) for l in labels], dtype=np.uint16),
        embeddings=np.asarray(embeddings, dtype=np.float64),
    )


def random_pair(n=60, dim=4, classes=("O", "PER", "LOC"), seed=0, jitter=0.1):
    rng = np.random.default_rng(seed)
    uids = np.arange(n)
    labels = [classes[i % len(classes)] for i in range(n)]
    emb_b = rng.normal(size=(n, dim))
    emb_a = emb_b + jitter * rng.normal(size=(n, dim))
    return (
        build_snapshot(uids, labels, emb_b, classes, stage="before"),
        build_snapshot(uids, labels, emb_a, classes, stage="after"),
    )


# -- mean drift ---------------------------------------------------------------

def test_mean_drift_identical_is_zero():
    before, _ = random_pair(seed=1)
    pairs = snap.align(before, before)
    for name in ("O", "PER", "LOC"):
        assert metrics.mean_drift(pairs, name) == 0.0


def test_mean_drift_single_delta():
    b = build_snapshot([1], ["PER"], [[0.0, 0.0]], ("O", "PER"))
    a = build_snapshot([1], ["PER"], [[3.0, 4.0]], ("O", "PER"))
    assert metrics.mean_drift(snap.align(b, a), "PER") == pytest.approx(5.0)


def test_mean_drift_two_tokens():
    b = build_snapshot([1, 2], ["PER", "PER"], [[0.0, 0.0], [1.0, 1.0]], ("O", "PER"))
    a = build_snapshot([1, 2], ["PER", "PER"], [[3.0, 4.0], [1.0, 1.0]], ("O", "PER"))
    # mean delta (1.5, 2.0), norm 2.5
    assert metrics.mean_drift(snap.align(b, a), "PER") == pytest.approx(2.5)


def test_mean_drift_no_tokens_raises():
    b = build_snapshot([1], ["O"], [[0.0, 0.0]], ("O", "PER"))
    with pytest.raises(InvalidValue):
        metrics.mean_drift(snap.align(b, b), "PER")


def test_mean_drift_equals_centroid_difference_on_aligned():
    before, after = random_pair(seed=2)
    pairs = snap.align(before, after)
    b, a = pairs.pairs["PER"]
    want = np.linalg.norm(a.mean(axis=0) - b.mean(axis=0))
    assert metrics.mean_drift(pairs, "PER") == pytest.approx(want, rel=1e-12)


# -- variance change ----------------------------------------------------------

def test_variance_change_identical_stats():
    from driftlens.stats import covariance

    rng = np.random.default_rng(3)
    rows = rng.normal(size=(30, 4))
    cs = covariance(rows, 0.0)
    assert metrics.variance_change(cs, cs) == 0.0


def test_variance_change_expansion():
    from driftlens.stats import covariance

    cs_b = covariance([[0.0, 0.0], [2.0, 0.0]], 0.0)
    cs_a = covariance([[0.0, 0.0], [4.0, 0.0]], 0.0)
    assert metrics.variance_change(cs_b, cs_a) == pytest.approx(3.0)


def test_variance_change_contraction_negative():
    from driftlens.stats import covariance

    rng = np.random.default_rng(4)
    rows = rng.normal(size=(50, 3))
    shrunk_rows = rows.mean(axis=0) + 0.5 * (rows - rows.mean(axis=0))
    vc = metrics.variance_change(covariance(rows, 0.0), covariance(shrunk_rows, 0.0))
    assert vc < 0


def test_variance_change_degenerate_rejected():
    from driftlens.stats import covariance

    good = covariance([[0.0, 0.0], [1.0, 1.0]], 0.0)
    bad = covariance([[5.0, 5.0]], 0.0)
    with pytest.raises(InvalidValue):
        metrics.variance_change(good, bad)


# -- covariance drift ---------------------------------------------------------

def test_cov_drift_identical_snapshots():
    before, _ = random_pair(seed=5)
    pairs = snap.align(before, before)
    from driftlens.stats import covariance

    emb = pairs.pairs["PER"][0]
    cs = covariance(emb, 1e-3, class_id="PER")
    got = metrics.covariance_drift(pairs, "PER", cs, cs, PairBudget())
    assert got <= 1e-9


def test_cov_drift_four_tokens_vs_oracle():
    emb_b = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    emb_a = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    b = build_snapshot([1, 2, 3, 4], ["PER"] * 4, emb_b, ("O", "PER"))
    a = build_snapshot([1, 2, 3, 4], ["PER"] * 4, emb_a, ("O", "PER"))
    pairs = snap.align(b, a)
    from driftlens.stats import covariance

    for lam in (0.0, 1e-3):
        want = cov_drift_oracle(emb_b, emb_a, lam)
        got = metrics.covariance_drift(
            pairs,
            "PER",
            covariance(emb_b, lam, class_id="PER"),
            covariance(emb_a, lam, class_id="PER"),
            PairBudget(),
        )
        assert got == pytest.approx(want, rel=1e-10), f"lam={lam}"


def test_cov_drift_affine_invariance():
    rng = np.random.default_rng(6)
    n, d = 40, 3
    emb_b = rng.normal(size=(n, d))
    emb_a = emb_b + 0.2 * rng.normal(size=(n, d))
    A = rng.normal(size=(d, d)) + 4.0 * np.eye(d)
    uids = np.arange(n)
    from driftlens.stats import covariance

    base = metrics.covariance_drift(
        snap.align(
            build_snapshot(uids, ["PER"] * n, emb_b, ("O", "PER")),
            build_snapshot(uids, ["PER"] * n, emb_a, ("O", "PER")),
        ),
        "PER",
        covariance(emb_b, 0.0),
        covariance(emb_a, 0.0),
        PairBudget(),
    )
    mapped = metrics.covariance_drift(
        snap.align(
            build_snapshot(uids, ["PER"] * n, emb_b @ A.T, ("O", "PER")),
            build_snapshot(uids, ["PER"] * n, emb_b @ A.T, ("O", "PER")),
        ),
        "PER",
        covariance(emb_b @ A.T, 0.0),
        covariance(emb_b @ A.T, 0.0),
        PairBudget(),
    )
    # Mapping before onto itself: zero drift even in the new coordinates.
    assert mapped <= 1e-9
    # And a shared map applied to both sides leaves the drift unchanged.
    mapped_both = metrics.covariance_drift(
        snap.align(
            build_snapshot(uids, ["PER"] * n, emb_b @ A.T, ("O", "PER")),
            build_snapshot(uids, ["PER"] * n, emb_a @ A.T, ("O", "PER")),
        ),
        "PER",
        covariance(emb_b @ A.T, 0.0),
        covariance(emb_a @ A.T, 0.0),
        PairBudget(),
    )
    assert mapped_both == pytest.approx(base, rel=1e-6)


def test_cov_drift_needs_two_tokens():
    b = build_snapshot([1], ["PER"], [[0.0, 0.0]], ("O", "PER"))
    from driftlens.stats import ClassStats

    cs = ClassStats("PER", 5, np.zeros(2), np.eye(2), 1e-3)
    with pytest.raises(InvalidValue):
        metrics.covariance_drift(snap.align(b, b), "PER", cs, cs, PairBudget())


# -- pair sampling ------------------------------------------------------------

def test_sample_pairs_distinct_and_in_range():
    rng = np.random.default_rng(7)
    i, j = metrics.sample_pair_indices(50, 300, rng)
    assert i.shape == j.shape == (300,)
    assert np.all(i < j)
    assert np.all((0 <= i) & (j < 50))
    codes = i * 50 + j
    assert len(np.unique(codes)) == 300


def test_sample_pairs_dense_regime_covers_everything():
    rng = np.random.default_rng(8)
    i, j = metrics.sample_pair_indices(10, 45, rng)
    codes = set(zip(i.tolist(), j.tolist()))
    assert len(codes) == 45  # all C(10,2) pairs, each exactly once


def test_sample_pairs_clamped_to_total():
    rng = np.random.default_rng(9)
    i, _ = metrics.sample_pair_indices(5, 10_000, rng)
    assert i.shape[0] == 10


def test_sampled_cov_drift_tracks_full_enumeration():
    # Mini version of the acceptance property: 50% sampling, averaged over
    # 10 seed streams, lands within 2% of the full value.
    rng = np.random.default_rng(10)
    n, d = 120, 4
    emb_b = rng.normal(size=(n, d))
    emb_a = emb_b + 0.3 * rng.normal(size=(n, d))
    uids = np.arange(n)
    b = build_snapshot(uids, ["PER"] * n, emb_b, ("O", "PER"))
    a = build_snapshot(uids, ["PER"] * n, emb_a, ("O", "PER"))
    pairs = snap.align(b, a)
    from driftlens.stats import covariance

    cs_b = covariance(emb_b, 1e-3)
    cs_a = covariance(emb_a, 1e-3)
    total = n * (n - 1) // 2
    full = metrics.covariance_drift(pairs, "PER", cs_b, cs_a, PairBudget())
    sampled = [
        metrics.covariance_drift(
            pairs,
            "PER",
            cs_b,
            cs_a,
            PairBudget(full_threshold=0, samples=total // 2),
            seed=s,
        )
        for s in range(10)
    ]
    assert np.mean(sampled) == pytest.approx(full, rel=0.02)


def test_sampling_is_deterministic():
    before, after = random_pair(n=90, seed=11, jitter=0.4)
    cfg = MetricConfig(budget=PairBudget(full_threshold=10, samples=200), seed=123)
    r1 = metrics.compute_drift_report(before, after, cfg)
    r2 = metrics.compute_drift_report(before, after, cfg)
    assert metrics.report_to_json(r1) == metrics.report_to_json(r2)


# -- report assembly ----------------------------------------------------------

def test_report_self_comparison_zero():
    before, _ = random_pair(n=90, seed=12)
    report = metrics.compute_drift_report(before, before)
    for row in report.classes:
        assert row.mean_drift == 0.0
        assert row.var_change == 0.0
        assert row.cov_drift <= 1e-9
        assert row.flags == set()


def test_report_row_order_matches_table_layout():
    before, after = random_pair(classes=("O", "LOC", "PER", "ORG"), seed=13)
    report = metrics.compute_drift_report(before, after)
    assert [r.class_id for r in report.classes] == ["LOC", "ORG", "PER", "O"]


def test_report_seed_irrelevant_under_full_enumeration():
    before, after = random_pair(n=40, seed=14)
    r1 = metrics.compute_drift_report(before, after, MetricConfig(seed=1))
    r2 = metrics.compute_drift_report(before, after, MetricConfig(seed=2))
    d1, d2 = metrics.report_to_dict(r1), metrics.report_to_dict(r2)
    d1["metric_config"].pop("seed")
    d2["metric_config"].pop("seed")
    assert d1 == d2


def test_report_mean_drift_rotation_invariant():
    before, after = random_pair(n=60, dim=5, seed=15)
    rng = np.random.default_rng(16)
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    rotated_b = build_snapshot(
        before.uids, [before.class_name(i) for i in range(before.count)],
        before.embeddings @ Q.T, before.class_table,
    )
    rotated_a = build_snapshot(
        after.uids, [after.class_name(i) for i in range(after.count)],
        after.embeddings @ Q.T, after.class_table,
    )
    base = metrics.compute_drift_report(before, after)
    rot = metrics.compute_drift_report(rotated_b, rotated_a)
    for row_b, row_r in zip(base.classes, rot.classes):
        assert row_r.mean_drift == pytest.approx(row_b.mean_drift, rel=1e-9)


def test_report_mean_drift_shift_formula():
    before, after = random_pair(n=60, seed=17)
    pairs = snap.align(before, after)
    b, a = pairs.pairs["LOC"]
    m = (a - b).mean(axis=0)
    v = np.array([0.3, -0.2, 0.5, 0.1])
    shifted = after.embeddings.copy()
    shifted[after.tokens_of_class("LOC")] += v
    after_shifted = build_snapshot(
        after.uids, [after.class_name(i) for i in range(after.count)],
        shifted, after.class_table,
    )
    report = metrics.compute_drift_report(before, after_shifted)
    assert report.row("LOC").mean_drift == pytest.approx(
        np.linalg.norm(m + v), rel=1e-12
    )


def test_report_flags_single_token_class():
    b = build_snapshot(
        [1, 2, 3], ["PER", "O", "O"], np.eye(3), ("O", "PER")
    )
    a = build_snapshot(
        [1, 2, 3], ["PER", "O", "O"], np.eye(3) + 1.0, ("O", "PER")
    )
    report = metrics.compute_drift_report(b, a)
    row = report.row("PER")
    assert row.flags == {
        metrics.FLAG_COV_BEFORE,
        metrics.FLAG_COV_AFTER,
        metrics.FLAG_TOO_FEW_PAIRS,
    }
    assert row.mean_drift is not None  # one aligned token still has a delta
    assert row.var_change is None
    assert row.cov_drift is None
    assert row.n_aligned == 1


def test_report_includes_empty_class_with_flags():
    b = build_snapshot([1, 2], ["O", "O"], np.eye(2), ("O", "PER"))
    a = build_snapshot([1, 2], ["O", "O"], np.eye(2) * 2, ("O", "PER"))
    report = metrics.compute_drift_report(b, a)
    row = report.row("PER")
    assert row.n_before == row.n_after == row.n_aligned == 0
    assert row.mean_drift is None and row.cov_drift is None
    assert metrics.FLAG_TOO_FEW_PAIRS in row.flags


def test_report_always_has_o_row():
    before, after = random_pair(seed=18)
    report = metrics.compute_drift_report(before, after)
    assert report.classes[-1].class_id == "O"


# -- serialization ------------------------------------------------------------

def test_json_round_trips_through_loads():
    before, after = random_pair(seed=19)
    report = metrics.compute_drift_report(before, after)
    obj = json.loads(metrics.report_to_json(report))
    assert obj["pair_name"] == "before_vs_after"
    assert obj["metadata"]["covariance_divisor"] == "population"
    assert {c["class"] for c in obj["classes"]} == {"O", "PER", "LOC"}


def test_csv_layout():
    before, after = random_pair(seed=20)
    report = metrics.compute_drift_report(before, after)
    text = metrics.reports_to_csv([report])
    lines = text.strip().split("\n")
    assert lines[0] == "pair,class,mean_drift,var_change,cov_drift,n_aligned,flags"
    assert len(lines) == 1 + len(report.classes)
    first = lines[1].split(",")
    assert first[0] == "before_vs_after"
    assert float(first[2]) == report.classes[0].mean_drift


def test_csv_absent_values_are_empty_not_zero():
    b = build_snapshot([1, 2], ["O", "O"], np.eye(2), ("O", "PER"))
    a = build_snapshot([1, 2], ["O", "O"], np.eye(2) * 2, ("O", "PER"))
    text = metrics.reports_to_csv([metrics.compute_drift_report(b, a)])
    per_line = [ln for ln in text.splitlines() if ",PER," in ln][0]
    cells = per_line.split(",")
    assert cells[2] == "" and cells[3] == "" and cells[4] == ""
    assert "too_few_pairs" in cells[6]
