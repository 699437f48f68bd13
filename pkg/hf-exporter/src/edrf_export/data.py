"""Token/label dataset readers: CoNLL-style columns or JSONL.

CoNLL-style: one token per line, whitespace-separated columns with the
token first and the label last; blank lines separate sentences and
``-DOCSTART-`` marker lines are skipped. JSONL: one object per line with
``tokens`` and ``labels`` arrays and an optional ``id``.

Each sentence gets a document id (its ``id`` field when present, the
running sentence index otherwise). Uids downstream are derived from
(document id, token index), so ids must be unique within a file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DatasetError, LabelMapError


@dataclass
class Sentence:
    doc_id: str
    tokens: list[str]
    labels: list[str]

    def __len__(self) -> int:
        return len(self.tokens)


def read_conll(text: str) -> list[Sentence]:
    sentences = []
    tokens: list[str] = []
    labels: list[str] = []

    def flush():
        if tokens:
            sentences.append(Sentence(str(len(sentences)), list(tokens), list(labels)))
            tokens.clear()
            labels.clear()

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("-DOCSTART-"):
            flush()
            continue
        parts = stripped.split()
        if len(parts) < 2:
            raise DatasetError(f"line {lineno}: need token and label, got {line!r}")
        tokens.append(parts[0])
        labels.append(parts[-1])
    flush()
    return sentences


def read_jsonl(text: str) -> list[Sentence]:
    sentences = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: bad JSON: {exc}") from exc
        try:
            tokens, labels = list(obj["tokens"]), list(obj["labels"])
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"line {lineno}: missing tokens/labels") from exc
        if len(tokens) != len(labels):
            raise DatasetError(
                f"line {lineno}: {len(tokens)} tokens vs {len(labels)} labels"
            )
        doc_id = str(obj["id"]) if "id" in obj else str(len(sentences))
        if tokens:
            sentences.append(Sentence(doc_id, tokens, labels))
    return sentences


def load_dataset(path) -> list[Sentence]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path!r}: {exc}") from exc
    head = text.lstrip()[:1]
    if Path(path).suffix in (".jsonl", ".json") or head == "{":
        sentences = read_jsonl(text)
    else:
        sentences = read_conll(text)
    if not sentences:
        raise DatasetError(f"dataset {path!r} has no sentences")
    ids = [s.doc_id for s in sentences]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate document ids; token uids would collide")
    return sentences


def load_label_map(path) -> dict[str, str]:
    """dataset label -> class name; the values must include 'O'."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise LabelMapError(f"cannot read label map {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LabelMapError(f"label map {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in obj.items()
    ):
        raise LabelMapError("label map must be a JSON object of strings")
    if "O" not in obj.values():
        raise LabelMapError("label map must send some dataset label to 'O'")
    return obj
