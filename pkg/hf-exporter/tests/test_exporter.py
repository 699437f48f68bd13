"""Exporter tests against tiny checkpoints built on the fly.

The checkpoints are two-layer BERT encoders with random weights and a
hand-written wordpiece vocabulary, so everything runs offline in a few
seconds. The exported files are validated with the drift toolkit's own
snapshot reader, which is the consumer contract.
"""

import json

import numpy as np
import pytest

from edrf_export import (
    DimMismatch,
    ExportJob,
    LabelMapError,
    export,
    token_uid,
)
from edrf_export.cli import main as cli_main
from edrf_export.data import load_dataset, load_label_map

from driftlens.snapshot import align, read_snapshot_file

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "ann", "##a", "works", "at", "acme", "in", "paris",
    "call", "##me", "maybe", "99", "##9",
]

CONLL = """\
Anna B-PER
works O
at O
Acme O
in O
Paris B-LOC

Callme O
maybe O
999 B-PHONE
"""

JSONL_LINES = [
    {"tokens": ["Anna", "works", "at", "Acme", "in", "Paris"],
     "labels": ["B-PER", "O", "O", "O", "O", "B-LOC"]},
    {"tokens": ["Callme", "maybe", "999"],
     "labels": ["O", "O", "B-PHONE"]},
]

LABEL_MAP = {"O": "O", "B-PER": "PER", "I-PER": "PER", "B-LOC": "LOC", "B-PHONE": "PHONE"}

N_TOKENS = 9


def _build_checkpoint(root, hidden: int, seed: int):
    import torch
    from transformers import BertConfig, BertForTokenClassification, BertTokenizerFast

    root.mkdir(parents=True, exist_ok=True)
    (root / "vocab.txt").write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    tokenizer = BertTokenizerFast(vocab=str(root / "vocab.txt"))
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=hidden,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=2 * hidden,
        max_position_embeddings=64,
    )
    torch.manual_seed(seed)
    model = BertForTokenClassification(config)
    model.save_pretrained(root)
    tokenizer.save_pretrained(root)
    return root


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("export")
    (root / "data.conll").write_text(CONLL, encoding="utf-8")
    (root / "data.jsonl").write_text(
        "\n".join(json.dumps(line) for line in JSONL_LINES) + "\n", encoding="utf-8"
    )
    (root / "labelmap.json").write_text(json.dumps(LABEL_MAP), encoding="utf-8")
    _build_checkpoint(root / "ckpt_a", hidden=32, seed=0)
    _build_checkpoint(root / "ckpt_b", hidden=32, seed=1)
    _build_checkpoint(root / "ckpt_narrow", hidden=16, seed=2)
    return root


def _job(workspace, model="ckpt_a", out="out.edrf", **kwargs) -> ExportJob:
    return ExportJob(
        model=str(workspace / model),
        data=str(workspace / "data.conll"),
        label_map=dict(LABEL_MAP),
        out=str(workspace / out),
        **kwargs,
    )


def test_export_passes_primary_validator(workspace, check):
    result = export(_job(workspace, out="valid.edrf"))
    snap = read_snapshot_file(workspace / "valid.edrf")  # validates on read
    check(
        "exported file passes the snapshot validator",
        snap.count == N_TOKENS
        and result.tokens == N_TOKENS
        and snap.dim == 32
        and snap.class_table == ["O", "LOC", "PER", "PHONE"]
        and snap.stage_name == "ckpt_a|layer=2|pooling=first_subtoken"
        and result.dropped == 0,
        f"{snap.count} records, dim {snap.dim}, stage {snap.stage_name!r}",
    )


def test_two_checkpoints_over_one_dataset_align(workspace, check):
    export(_job(workspace, model="ckpt_a", out="a.edrf"))
    export(_job(workspace, model="ckpt_b", out="b.edrf"))
    snap_a = read_snapshot_file(workspace / "a.edrf")
    snap_b = read_snapshot_file(workspace / "b.edrf")
    pairs = align(snap_a, snap_b)
    check(
        "two exports over one dataset align 100% of uids",
        pairs.total_aligned == N_TOKENS
        and pairs.total_dropped == 0
        and np.array_equal(np.sort(snap_a.uids), np.sort(snap_b.uids))
        and not np.array_equal(snap_a.embeddings, snap_b.embeddings),
        f"{pairs.total_aligned}/{N_TOKENS} aligned, embeddings differ",
    )


def test_same_checkpoint_twice_is_identical(workspace):
    export(_job(workspace, out="rep1.edrf"))
    export(_job(workspace, out="rep2.edrf"))
    one = (workspace / "rep1.edrf").read_bytes()
    two = (workspace / "rep2.edrf").read_bytes()
    assert one == two


def test_first_subtoken_pooling_matches_direct_forward(workspace):
    import torch
    from transformers import AutoModel, AutoTokenizer

    # batch_size=1 so the reference forward sees the identical tensors
    export(_job(workspace, out="pool.edrf", batch_size=1))
    snap = read_snapshot_file(workspace / "pool.edrf")

    tokenizer = AutoTokenizer.from_pretrained(str(workspace / "ckpt_a"))
    model = AutoModel.from_pretrained(str(workspace / "ckpt_a"))
    model.eval()
    tokens = ["Anna", "works", "at", "Acme", "in", "Paris"]
    enc = tokenizer([tokens], is_split_into_words=True, return_tensors="pt")
    word_ids = enc.word_ids(batch_index=0)
    assert word_ids.count(0) > 1, "test word should split into subtokens"
    first_pos = word_ids.index(0)
    with torch.no_grad():
        states = model(**enc, output_hidden_states=True).hidden_states
    expected = states[-1][0, first_pos].numpy().astype(np.float32)

    row = int(np.flatnonzero(snap.uids == np.uint64(token_uid("0", 0)))[0])
    assert snap.class_name(row) == "PER"
    np.testing.assert_array_equal(snap.embeddings[row], expected)


def test_label_outside_map_raises(workspace):
    job = _job(workspace, out="bad.edrf")
    job.label_map.pop("B-PHONE")
    with pytest.raises(LabelMapError, match="B-PHONE"):
        export(job)


def test_label_map_must_reach_background(workspace, tmp_path):
    target = tmp_path / "nom.json"
    target.write_text(json.dumps({"B-LOC": "LOC"}), encoding="utf-8")
    with pytest.raises(LabelMapError, match="'O'"):
        load_label_map(target)


def test_dim_mismatch_warns_but_writes(workspace):
    export(_job(workspace, out="dim.edrf"))
    with pytest.warns(DimMismatch):
        export(_job(workspace, model="ckpt_narrow", out="dim.edrf"))
    assert read_snapshot_file(workspace / "dim.edrf").dim == 16


def test_subsampling_cap_is_seeded_and_model_free(workspace):
    export(_job(workspace, out="s0.edrf", max_tokens=5, seed=0))
    export(_job(workspace, out="s0b.edrf", max_tokens=5, seed=0, model="ckpt_b"))
    export(_job(workspace, out="s1.edrf", max_tokens=5, seed=1))
    keep0 = set(read_snapshot_file(workspace / "s0.edrf").uids.tolist())
    keep0b = set(read_snapshot_file(workspace / "s0b.edrf").uids.tolist())
    keep1 = set(read_snapshot_file(workspace / "s1.edrf").uids.tolist())
    assert len(keep0) == 5
    assert keep0 == keep0b  # same data and seed: same tokens, any model
    assert keep0 != keep1


def test_conll_and_jsonl_readers_agree(workspace):
    conll = load_dataset(workspace / "data.conll")
    jsonl = load_dataset(workspace / "data.jsonl")
    assert [s.doc_id for s in conll] == [s.doc_id for s in jsonl]
    assert [s.tokens for s in conll] == [s.tokens for s in jsonl]
    assert [s.labels for s in conll] == [s.labels for s in jsonl]


def test_cli_round_trip(workspace, capsys):
    code = cli_main(
        [
            "--model", str(workspace / "ckpt_a"),
            "--data", str(workspace / "data.conll"),
            "--labelmap", str(workspace / "labelmap.json"),
            "--out", str(workspace / "cli.edrf"),
        ]
    )
    assert code == 0
    assert "wrote 9 tokens" in capsys.readouterr().out
    assert read_snapshot_file(workspace / "cli.edrf").count == N_TOKENS


def test_cli_reports_bad_label_map(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"B-LOC": "LOC"}), encoding="utf-8")
    code = cli_main(
        [
            "--model", str(workspace / "ckpt_a"),
            "--data", str(workspace / "data.conll"),
            "--labelmap", str(bad),
            "--out", str(tmp_path / "never.edrf"),
        ]
    )
    assert code == 1
    assert "error:" in capsys.readouterr().err
    assert not (tmp_path / "never.edrf").exists()
