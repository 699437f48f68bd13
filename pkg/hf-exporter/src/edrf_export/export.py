"""The export pipeline: dataset -> model hidden states -> EDRF file.

Token identity is a pure function of the dataset: uid = blake2b of
"(document id)|(token index)". The model never influences which tokens
are exported (the subsampling cap draws from the dataset alone), so any
two checkpoints exported over the same data produce aligned files.

Words split into several subtokens are pooled by their first subtoken;
the chosen hidden layer and the pooling rule are recorded in the
snapshot's stage name.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from pathlib import PurePath

import numpy as np

from .data import Sentence, load_dataset
from .edrf import peek_dim, write_edrf
from .errors import DimMismatch, ExportError, LabelMapError

POOLING = "first_subtoken"


@dataclass
class ExportJob:
    model: str  # local path or hub identifier
    data: str
    label_map: dict[str, str]
    out: str
    layer: int = -1  # index into the hidden-state stack, -1 = last
    max_tokens: int | None = None
    seed: int = 0
    batch_size: int = 16

    def validate(self) -> None:
        if self.max_tokens is not None and self.max_tokens < 1:
            raise ExportError("max_tokens must be >= 1")
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")
        if "O" not in self.label_map.values():
            raise LabelMapError("label map must send some dataset label to 'O'")


@dataclass
class ExportResult:
    path: str
    stage_name: str
    tokens: int
    dim: int
    class_table: list[str]
    dropped: int  # tokens lost to tokenizer truncation


def token_uid(doc_id: str, token_idx: int) -> int:
    """Stable 64-bit token identity, independent of any model."""
    digest = hashlib.blake2b(
        f"{doc_id}|{token_idx}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def class_table_of(label_map: dict[str, str]) -> list[str]:
    return ["O"] + sorted(set(label_map.values()) - {"O"})


def _target_ids(sentences: list[Sentence], label_map: dict[str, str]) -> list[list[int]]:
    table = class_table_of(label_map)
    index = {name: i for i, name in enumerate(table)}
    missing = sorted(
        {l for s in sentences for l in s.labels if l not in label_map}
    )
    if missing:
        raise LabelMapError(f"dataset labels outside the map: {missing}")
    return [[index[label_map[l]] for l in s.labels] for s in sentences]


def _kept_tokens(
    sentences: list[Sentence], max_tokens: int | None, seed: int
) -> list[np.ndarray]:
    """Per-sentence kept token indices under the subsampling cap.

    Depends only on the dataset shape and the seed, never on the model.
    """
    sizes = [len(s) for s in sentences]
    total = sum(sizes)
    if max_tokens is None or max_tokens >= total:
        return [np.arange(n) for n in sizes]
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(total, size=max_tokens, replace=False))
    bounds = np.cumsum([0] + sizes)
    return [
        pick[(pick >= lo) & (pick < hi)] - lo
        for lo, hi in zip(bounds[:-1], bounds[1:])
    ]


def export(job: ExportJob) -> ExportResult:
    # Heavy imports stay inside so `edrf-export --help` is instant.
    import torch
    from transformers import AutoModel, AutoTokenizer

    job.validate()
    sentences = load_dataset(job.data)
    table = class_table_of(job.label_map)
    targets = _target_ids(sentences, job.label_map)
    kept = _kept_tokens(sentences, job.max_tokens, job.seed)

    tokenizer = AutoTokenizer.from_pretrained(job.model)
    model = AutoModel.from_pretrained(job.model)
    model.eval()
    hidden_size = int(model.config.hidden_size)
    n_states = int(model.config.num_hidden_layers) + 1  # embeddings + blocks
    if not -n_states <= job.layer < n_states:
        raise ExportError(
            f"layer {job.layer} outside the {n_states} hidden-state layers"
        )
    resolved_layer = job.layer % n_states
    stage_name = f"{PurePath(job.model).name}|layer={resolved_layer}|pooling={POOLING}"

    work = [i for i, k in enumerate(kept) if k.size]
    uids: list[int] = []
    classes: list[int] = []
    rows: list[np.ndarray] = []
    dropped = 0
    with torch.no_grad():
        for start in range(0, len(work), job.batch_size):
            batch = work[start : start + job.batch_size]
            enc = tokenizer(
                [sentences[i].tokens for i in batch],
                is_split_into_words=True,
                padding=True,
                truncation=True,
                return_tensors="pt",
            )
            states = model(**enc, output_hidden_states=True).hidden_states
            emb = states[resolved_layer].cpu().numpy()
            for b, si in enumerate(batch):
                word_ids = enc.word_ids(batch_index=b)
                first: dict[int, int] = {}
                for pos, w in enumerate(word_ids):
                    if w is not None and w not in first:
                        first[w] = pos
                for ti in kept[si]:
                    pos = first.get(int(ti))
                    if pos is None:  # word fell past the truncation limit
                        dropped += 1
                        continue
                    uids.append(token_uid(sentences[si].doc_id, int(ti)))
                    classes.append(targets[si][ti])
                    rows.append(emb[b, pos])

    prior = peek_dim(job.out)
    if prior is not None and prior != hidden_size:
        warnings.warn(
            f"{job.out}: prior export has dim {prior}, this model emits "
            f"{hidden_size}; the file is being replaced",
            DimMismatch,
            stacklevel=2,
        )
    write_edrf(
        job.out,
        stage_name,
        table,
        np.asarray(uids, dtype=np.uint64),
        np.asarray(classes, dtype=np.uint16),
        np.stack(rows).astype(np.float32) if rows else np.empty((0, hidden_size), dtype=np.float32),
    )
    return ExportResult(
        path=str(job.out),
        stage_name=stage_name,
        tokens=len(uids),
        dim=hidden_size,
        class_table=table,
        dropped=dropped,
    )
