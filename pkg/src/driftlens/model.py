"""A small trainable token classifier with per-head freeze control.

The network is deliberately tiny: hidden = tanh(W1 x + b1) as the shared
backbone, one linear head row (w_c, beta_c) per class on top. Training is
momentum SGD over mean softmax cross-entropy plus an L2 term carried inside
the loss gradients. Freezing works by masking: the update is computed for
everything and then discarded where the mask says frozen, which keeps frozen
parameters (and their momentum) bitwise identical no matter how many steps
run.

A training stage may restrict the softmax to an active subset of classes.
Heads outside the subset receive no gradient at all, so a zero-initialized
head stays exactly zero until a later stage activates it.

All parameters are float64; snapshot embeddings are downcast to float32 on
extraction to match the file format.
"""

from __future__ import annotations

import csv
import hashlib
import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_softmax

from .corpus import Corpus
from .errors import (
    CorruptFile,
    DimMismatch,
    EmptyCorpus,
    InvalidConfig,
    IoError,
    SchemaMismatch,
    UnknownClass,
    UnsupportedVersion,
)
from .snapshot import EmbeddingSnapshot

CHECKPOINT_MAGIC = b"TMPK"
CHECKPOINT_VERSION = 1


@dataclass
class ToyModelParams:
    class_table: list[str]
    W1: np.ndarray  # (hidden, d_in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (classes, hidden), one head row per class
    b2: np.ndarray  # (classes,)

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_table)

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(
            class_table=list(self.class_table),
            W1=self.W1.copy(),
            b1=self.b1.copy(),
            W2=self.W2.copy(),
            b2=self.b2.copy(),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


@dataclass
class Grads:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def zero_grads(params: ToyModelParams) -> Grads:
    return Grads(
        W1=np.zeros_like(params.W1),
        b1=np.zeros_like(params.b1),
        W2=np.zeros_like(params.W2),
        b2=np.zeros_like(params.b2),
    )


@dataclass
class FreezeMask:
    backbone_frozen: bool
    head_frozen: np.ndarray  # (classes,) bool

    @classmethod
    def none(cls, n_classes: int) -> "FreezeMask":
        return cls(False, np.zeros(n_classes, dtype=bool))

    @classmethod
    def all(cls, n_classes: int) -> "FreezeMask":
        return cls(True, np.ones(n_classes, dtype=bool))

    def freezing(self, class_table: list[str], names: set[str]) -> "FreezeMask":
        head = self.head_frozen.copy()
        for name in names:
            if name not in class_table:
                raise UnknownClass(name)
            head[class_table.index(name)] = True
        return replace(self, head_frozen=head)

    def validate(self, params: ToyModelParams) -> None:
        if self.head_frozen.shape != (params.n_classes,):
            raise SchemaMismatch(
                f"mask covers {self.head_frozen.shape[0]} heads, "
                f"model has {params.n_classes}"
            )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    l2_decay: float = 1e-4

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("learning_rate > 0, epochs >= 1, batch_size >= 1")
        if not 0.0 <= self.momentum < 1.0 or self.l2_decay < 0:
            raise InvalidConfig("momentum in [0,1), l2_decay >= 0")


def init_params(
    class_table: list[str], d_in: int, hidden: int = 64, seed: int = 0
) -> ToyModelParams:
    """Random backbone, zero heads: before any training every class is
    equally (un)likely, and untouched heads stay exactly zero."""
    rng = np.random.Generator(
        np.random.Philox(key=np.array([seed, 0xF0], dtype=np.uint64))
    )
    return ToyModelParams(
        class_table=list(class_table),
        W1=rng.normal(scale=1.0 / np.sqrt(d_in), size=(hidden, d_in)),
        b1=np.zeros(hidden),
        W2=np.zeros((len(class_table), hidden)),
        b2=np.zeros(len(class_table)),
    )


def forward(params: ToyModelParams, features) -> tuple[np.ndarray, np.ndarray]:
    """hidden = tanh(W1 x + b1); logit_c = w_c . hidden + beta_c."""
    x = np.asarray(features, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.d_in:
        raise DimMismatch(f"features dim {x.shape[1]}, model expects {params.d_in}")
    hidden = np.tanh(x @ params.W1.T + params.b1)
    logits = hidden @ params.W2.T + params.b2
    if squeeze:
        return hidden[0], logits[0]
    return hidden, logits


def loss_and_grads(
    params: ToyModelParams,
    features,
    class_ids,
    l2_decay: float = 0.0,
    active_classes: list[int] | None = None,
) -> tuple[float, Grads]:
    """Mean softmax cross-entropy over the active classes plus
    0.5 * l2_decay * ||params||^2, with gradients for every parameter.

    Heads outside active_classes take no part in the softmax and get a
    zero data gradient (their decay gradient still applies).
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(class_ids, dtype=np.int64)
    if x.shape[0] == 0:
        raise EmptyCorpus("empty batch")
    if y.min() < 0 or y.max() >= params.n_classes:
        raise UnknownClass(f"class id outside table of {params.n_classes}")

    active = (
        np.arange(params.n_classes, dtype=np.int64)
        if active_classes is None
        else np.asarray(sorted(active_classes), dtype=np.int64)
    )
    pos_of = -np.ones(params.n_classes, dtype=np.int64)
    pos_of[active] = np.arange(active.shape[0])
    y_pos = pos_of[y]
    if np.any(y_pos < 0):
        bad = sorted({params.class_table[c] for c in y[y_pos < 0]})
        raise UnknownClass(f"gold classes outside the active set: {bad}")

    hidden, logits = forward(params, x)
    n = x.shape[0]
    logp = log_softmax(logits[:, active], axis=1)
    ce = -float(np.mean(logp[np.arange(n), y_pos]))

    decay = 0.0
    if l2_decay > 0:
        decay = 0.5 * l2_decay * sum(
            float(np.sum(a * a)) for a in params.arrays().values()
        )

    dz = np.exp(logp)
    dz[np.arange(n), y_pos] -= 1.0
    dz /= n
    grads = zero_grads(params)
    grads.W2[active] = dz.T @ hidden
    grads.b2[active] = dz.sum(axis=0)
    dhidden = dz @ params.W2[active]
    dpre = dhidden * (1.0 - hidden * hidden)
    grads.W1[:] = dpre.T @ x
    grads.b1[:] = dpre.sum(axis=0)
    if l2_decay > 0:
        for name, g in grads.arrays().items():
            g += l2_decay * params.arrays()[name]
    return ce + decay, grads


def _mask_arrays(params: ToyModelParams, mask: FreezeMask) -> dict[str, np.ndarray]:
    head_rows = mask.head_frozen[:, None]
    return {
        "W1": np.full(params.W1.shape, mask.backbone_frozen),
        "b1": np.full(params.b1.shape, mask.backbone_frozen),
        "W2": np.broadcast_to(head_rows, params.W2.shape),
        "b2": mask.head_frozen,
    }


def sgd_step(
    params: ToyModelParams,
    grads: Grads,
    velocity: Grads,
    mask: FreezeMask,
    config: TrainConfig,
) -> None:
    """One in-place momentum update: v <- mu v + g, theta <- theta - lr v.

    Masked entries keep their previous parameter AND velocity values
    bit-exactly; the update is computed densely and dropped where frozen.
    """
    mask.validate(params)
    frozen = _mask_arrays(params, mask)
    p_arrays, g_arrays, v_arrays = params.arrays(), grads.arrays(), velocity.arrays()
    for name in p_arrays:
        p, g, v = p_arrays[name], g_arrays[name], v_arrays[name]
        v_new = config.momentum * v + g
        p_new = p - config.learning_rate * v_new
        np.copyto(v, np.where(frozen[name], v, v_new))
        np.copyto(p, np.where(frozen[name], p, p_new))


def _flatten(corpus: Corpus) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Token-level view of a corpus: features, class ids, stable uids."""
    index = {name: i for i, name in enumerate(corpus.config.class_names())}
    xs, ys, uids = [], [], []
    for seq in corpus.sequences:
        xs.append(seq.features)
        ys.extend(index[label] for label in seq.labels)
        uids.extend(token_uid(seq.seq_id, t) for t in range(len(seq)))
    if not ys:
        raise EmptyCorpus("corpus has no tokens")
    return (
        np.concatenate(xs).astype(np.float64),
        np.asarray(ys, dtype=np.int64),
        np.asarray(uids, dtype=np.uint64),
    )


def token_uid(seq_id: int, token_idx: int) -> int:
    """Stable 64-bit token identity: high word sequence, low word position."""
    return (int(seq_id) << 32) | int(token_idx)


def train_stage(
    params: ToyModelParams,
    corpus: Corpus,
    mask: FreezeMask,
    config: TrainConfig,
    active_classes: list[int] | None = None,
) -> tuple[ToyModelParams, list[float]]:
    """Momentum-SGD over shuffled token mini-batches; returns the trained
    copy (the input params are never touched) and per-epoch mean loss."""
    if corpus.config.class_names() != params.class_table:
        raise SchemaMismatch("corpus class table differs from the model's")
    x, y, _ = _flatten(corpus)
    out = params.copy()
    mask.validate(out)
    velocity = zero_grads(out)
    rng = np.random.Generator(
        np.random.Philox(key=np.array([config.seed, 0x7E], dtype=np.uint64))
    )
    n = x.shape[0]
    curve = []
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            pick = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(
                out, x[pick], y[pick], config.l2_decay, active_classes
            )
            sgd_step(out, grads, velocity, mask, config)
            total += loss * pick.shape[0]
        curve.append(total / n)
    return out, curve


def predict(
    params: ToyModelParams, features, allowed_classes: list[int] | None = None
) -> np.ndarray:
    """Argmax class ids, optionally restricted to an allowed subset."""
    _, logits = forward(params, np.atleast_2d(np.asarray(features)))
    if allowed_classes is None:
        return np.argmax(logits, axis=1)
    ids = np.asarray(sorted(allowed_classes), dtype=np.int64)
    return ids[np.argmax(logits[:, ids], axis=1)]


def extract_embeddings(
    params: ToyModelParams,
    corpus: Corpus,
    stage_name: str,
    probe_uids: np.ndarray | None = None,
) -> EmbeddingSnapshot:
    """Hidden-layer activations for every (probe) token, with gold labels.

    Pass the UNMASKED corpus: record classes are gold categories, so drift
    can be asked about tokens a masked training stage saw as 'O'.
    """
    x, y, uids = _flatten(corpus)
    if probe_uids is not None:
        keep = np.isin(uids, np.asarray(probe_uids, dtype=np.uint64))
        x, y, uids = x[keep], y[keep], uids[keep]
    hidden, _ = forward(params, x) if x.shape[0] else (np.empty((0, params.hidden)), None)
    return EmbeddingSnapshot(
        stage_name=stage_name,
        dim=params.hidden,
        class_table=list(params.class_table),
        uids=uids,
        class_ids=y.astype(np.uint16),
        embeddings=hidden.astype(np.float32),
    )


# -- checkpoints and curves ---------------------------------------------------

def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def params_to_bytes(params: ToyModelParams) -> bytes:
    head = io.BytesIO()
    head.write(CHECKPOINT_MAGIC)
    head.write(
        struct.pack(
            "<HHHH",
            CHECKPOINT_VERSION,
            params.d_in,
            params.hidden,
            params.n_classes,
        )
    )
    for name in params.class_table:
        head.write(_pack_str(name))
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (params.W1, params.b1, params.W2, params.b2)
    )
    return head.getvalue() + payload


def params_from_bytes(data: bytes) -> ToyModelParams:
    if data[:4] != CHECKPOINT_MAGIC:
        raise CorruptFile(f"bad checkpoint magic {data[:4]!r}")
    if len(data) < 12:
        raise CorruptFile("truncated checkpoint header")
    version, d_in, hidden, n_classes = struct.unpack("<HHHH", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}")
    pos = 12
    table = []
    for _ in range(n_classes):
        if pos + 2 > len(data):
            raise CorruptFile("truncated class table")
        (length,) = struct.unpack("<H", data[pos : pos + 2])
        pos += 2
        table.append(data[pos : pos + length].decode("utf-8"))
        pos += length
    counts = [hidden * d_in, hidden, n_classes * hidden, n_classes]
    if len(data) != pos + 8 * sum(counts):
        raise CorruptFile("checkpoint payload size mismatch")
    flat = np.frombuffer(data, dtype="<f8", offset=pos)
    offsets = np.cumsum([0] + counts)
    return ToyModelParams(
        class_table=table,
        W1=flat[offsets[0] : offsets[1]].reshape(hidden, d_in).copy(),
        b1=flat[offsets[1] : offsets[2]].copy(),
        W2=flat[offsets[2] : offsets[3]].reshape(n_classes, hidden).copy(),
        b2=flat[offsets[3] : offsets[4]].copy(),
    )


def save_params(params: ToyModelParams, path) -> str:
    """Write a checkpoint; returns the payload's blake2b hex digest."""
    data = params_to_bytes(params)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path!r}: {exc}") from exc
    return hashlib.blake2b(data, digest_size=16).hexdigest()


def load_params(path) -> ToyModelParams:
    try:
        with open(path, "rb") as fh:
            return params_from_bytes(fh.read())
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path!r}: {exc}") from exc


def save_loss_curve(curve: list[float], path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss"])
            for epoch, loss in enumerate(curve):
                writer.writerow([epoch, repr(float(loss))])
    except OSError as exc:
        raise IoError(f"cannot write loss curve {path!r}: {exc}") from exc
