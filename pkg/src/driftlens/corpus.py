"""Synthetic labeled token-sequence corpus with two feature channel groups.

Tokens are class-conditional Gaussians over a semantic channel group and a
pattern channel group. Pure semantic classes put their prototype on the
semantic channels, pure pattern classes on the pattern channels, and hybrid
classes split their signal: (1 - alpha) on their own semantic prototype and
alpha on a pattern-region direction shared with every pattern class. The
overlap knob alpha therefore controls how much a hybrid class geometrically
entangles with the pattern classes. Background tokens are pure noise.

Entity mentions are contiguous spans of 1 to 4 tokens. A configurable
fraction of sequences is "PII rich": pattern-class rates are boosted there
and damped elsewhere so expected global shares stay at base_rate, which
gives the A/B split a reliable pool of PII-dense sequences to draw from.

All randomness flows through counter-based per-sequence streams keyed on
(seed, sequence index), so corpora are reproducible and order-independent.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidConfig, IoError, SplitInfeasible, UnknownClass

KINDS = ("semantic", "pattern", "hybrid", "background")

# Default weight of the shared region direction inside each pattern-class
# prototype; the remainder is the class's own random direction. A pattern
# class can override it through its overlap_alpha.
REGION_SHARE = 0.5

# Norm of every entity prototype. Sets the signal-to-noise ratio jointly
# with noise_sigma; sized so a well-trained classifier is confident but the
# per-token problem is not trivial.
PROTO_NORM = 3.0

SPAN_LEN_MIN = 1
SPAN_LEN_MAX = 4
_MEAN_SPAN_LEN = (SPAN_LEN_MIN + SPAN_LEN_MAX) / 2


@dataclass(frozen=True)
class ClassSpec:
    name: str
    kind: str
    prototype_seed: int
    base_rate: float
    overlap_alpha: float = 0.0


@dataclass
class CorpusConfig:
    sequences: int = 2000
    seq_len_range: tuple[int, int] = (8, 30)
    dim_semantic: int = 16
    dim_pattern: int = 16
    noise_sigma: float = 0.35
    signal_strength: float = 1.0
    classes: list[ClassSpec] = field(default_factory=lambda: default_classes())
    seed: int = 0
    # PII clustering and split policy.
    pii_rich_fraction: float = 0.2
    pii_rich_boost: float = 3.0
    split_b_fraction: float = 0.15
    split_min_density_ratio: float = 3.0

    @property
    def dim(self) -> int:
        return self.dim_semantic + self.dim_pattern

    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def class_spec(self, name: str) -> ClassSpec:
        for c in self.classes:
            if c.name == name:
                return c
        raise UnknownClass(name)

    def pii_class_names(self) -> set[str]:
        """The pattern-kind classes: the 'new PII' side of every split."""
        return {c.name for c in self.classes if c.kind == "pattern"}

    def validate(self) -> None:
        if self.dim_semantic < 1 or self.dim_pattern < 1:
            raise InvalidConfig("channel group dims must be >= 1")
        lo, hi = self.seq_len_range
        if lo < 1 or lo > hi:
            raise InvalidConfig(f"bad seq_len_range {self.seq_len_range}")
        if self.sequences < 1:
            raise InvalidConfig("need at least one sequence")
        if self.noise_sigma < 0 or self.signal_strength < 0:
            raise InvalidConfig("noise_sigma and signal_strength must be >= 0")
        if not self.classes or self.classes[0].name != "O":
            raise InvalidConfig("classes must start with the background class 'O'")
        if self.classes[0].kind != "background":
            raise InvalidConfig("'O' must have kind background")
        names = self.class_names()
        if len(set(names)) != len(names):
            raise InvalidConfig("duplicate class names")
        total = 0.0
        for c in self.classes:
            if c.kind not in KINDS:
                raise InvalidConfig(f"class {c.name!r}: unknown kind {c.kind!r}")
            if not 0.0 < c.base_rate < 1.0:
                raise InvalidConfig(f"class {c.name!r}: base_rate out of (0,1)")
            if c.kind in ("background", "semantic") and c.overlap_alpha != 0.0:
                raise InvalidConfig(
                    f"class {c.name!r}: overlap_alpha needs a shared-region kind"
                )
            if not 0.0 <= c.overlap_alpha <= 1.0:
                raise InvalidConfig(f"class {c.name!r}: overlap_alpha out of [0,1]")
            total += c.base_rate
        if abs(total - 1.0) > 1e-9:
            raise InvalidConfig(f"base_rate values sum to {total}, expected 1")
        if not 0.0 <= self.pii_rich_fraction < 1.0 or self.pii_rich_boost < 1.0:
            raise InvalidConfig("bad PII clustering knobs")
        if not 0.0 < self.split_b_fraction < 1.0:
            raise InvalidConfig("split_b_fraction out of (0,1)")
        pii_rate = sum(c.base_rate for c in self.classes if c.kind == "pattern")
        if (self.pii_rich_boost - 1.0) * pii_rate >= self.classes[0].base_rate:
            raise InvalidConfig("pii_rich_boost drains the background rate below 0")


@dataclass
class LabeledSequence:
    seq_id: int
    features: np.ndarray  # (len, dim) float32
    labels: list[str]
    span_ids: list[int | None]  # None on background tokens

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Corpus:
    config: CorpusConfig
    sequences: list[LabeledSequence]

    @property
    def token_count(self) -> int:
        return sum(len(s) for s in self.sequences)

    def label_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in self.config.class_names()}
        for seq in self.sequences:
            for label in seq.labels:
                counts[label] += 1
        return counts


def default_classes() -> list[ClassSpec]:
    # PHONE carries most of the shared-region weight, so it is the PII class
    # that crowds the hybrid LOC prototype; the other pattern classes keep
    # strong own-directions and separate cleanly.
    return [
        ClassSpec("O", "background", 0, 0.70),
        ClassSpec("LOC", "hybrid", 1, 0.06, overlap_alpha=0.8),
        ClassSpec("PER", "semantic", 2, 0.06),
        ClassSpec("ORG", "semantic", 3, 0.06),
        ClassSpec("PHONE", "pattern", 4, 0.03, overlap_alpha=0.9),
        ClassSpec("EMAIL", "pattern", 5, 0.03),
        ClassSpec("IBAN", "pattern", 6, 0.03),
        ClassSpec("PDL", "pattern", 7, 0.03),
    ]

OLD_ENTITY_CLASSES = {"LOC", "PER", "ORG"}
PII_CLASSES = {"PHONE", "EMAIL", "IBAN", "PDL"}


def _tag_stream(*parts) -> np.random.Generator:
    tag = "|".join(str(p) for p in parts)
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=16).digest()
    key = np.array(
        [
            int.from_bytes(digest[:8], "little"),
            int.from_bytes(digest[8:], "little"),
        ],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def _unit(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


def pattern_region(dim_pattern: int) -> np.ndarray:
    """The region direction shared by all pattern-kind prototypes."""
    return _unit(_tag_stream("pattern-region", dim_pattern).normal(size=dim_pattern))


def class_prototype(spec: ClassSpec, config: CorpusConfig) -> np.ndarray:
    """Full-width mean feature vector of one class."""
    proto = np.zeros(config.dim)
    sem = slice(0, config.dim_semantic)
    pat = slice(config.dim_semantic, config.dim)
    own = _tag_stream("prototype", spec.kind, spec.prototype_seed)
    if spec.kind == "background":
        return proto
    if spec.kind == "semantic":
        proto[sem] = _unit(own.normal(size=config.dim_semantic))
    elif spec.kind == "pattern":
        # overlap_alpha of 0 means "use the corpus-wide default share".
        share = spec.overlap_alpha or REGION_SHARE
        shared = pattern_region(config.dim_pattern)
        mixed = share * shared + (1 - share) * _unit(
            own.normal(size=config.dim_pattern)
        )
        proto[pat] = _unit(mixed)
    elif spec.kind == "hybrid":
        proto[sem] = (1 - spec.overlap_alpha) * _unit(
            own.normal(size=config.dim_semantic)
        )
        proto[pat] = spec.overlap_alpha * pattern_region(config.dim_pattern)
    return PROTO_NORM * proto


def _unit_weights(config: CorpusConfig, rich: bool) -> np.ndarray:
    """Per-draw class weights. Entity rates are divided by the mean span
    length so token shares land on base_rate; in rich sequences pattern-class
    rates grow by the boost and elsewhere shrink to compensate, with the
    background rate absorbing the difference."""
    pii_names = config.pii_class_names()
    rich_total = config.pii_rich_fraction
    if rich_total > 0 and pii_names:
        damp = (1 - rich_total * config.pii_rich_boost) / (1 - rich_total)
        factor = config.pii_rich_boost if rich else damp
    else:
        factor = 1.0
    rates = []
    shifted = 0.0
    for spec in config.classes:
        rate = spec.base_rate
        if spec.name in pii_names:
            shifted += (factor - 1.0) * rate
            rate *= factor
        rates.append(rate)
    rates[0] -= shifted  # background absorbs the boost
    weights = np.array(
        [
            r if spec.kind == "background" else r / _MEAN_SPAN_LEN
            for r, spec in zip(rates, config.classes)
        ]
    )
    return weights / weights.sum()


def _generate_sequence(
    config: CorpusConfig,
    seq_id: int,
    prototypes: np.ndarray,
    weights_plain: np.ndarray,
    weights_rich: np.ndarray,
) -> LabeledSequence:
    rng = np.random.Generator(
        np.random.Philox(key=np.array([config.seed, seq_id], dtype=np.uint64))
    )
    rich = rng.random() < config.pii_rich_fraction
    weights = weights_rich if rich else weights_plain
    lo, hi = config.seq_len_range
    length = int(rng.integers(lo, hi + 1))

    labels: list[str] = []
    span_ids: list[int | None] = []
    class_ids: list[int] = []
    next_span = 0
    while len(labels) < length:
        ci = int(rng.choice(len(config.classes), p=weights))
        spec = config.classes[ci]
        if spec.kind == "background":
            labels.append(spec.name)
            span_ids.append(None)
            class_ids.append(ci)
            continue
        span_len = min(
            int(rng.integers(SPAN_LEN_MIN, SPAN_LEN_MAX + 1)), length - len(labels)
        )
        for _ in range(span_len):
            labels.append(spec.name)
            span_ids.append(next_span)
            class_ids.append(ci)
        next_span += 1

    noise = config.noise_sigma * rng.normal(size=(length, config.dim))
    features = noise + config.signal_strength * prototypes[class_ids]
    return LabeledSequence(
        seq_id=seq_id,
        features=features.astype(np.float32),
        labels=labels,
        span_ids=span_ids,
    )


def generate_corpus(config: CorpusConfig) -> Corpus:
    """Deterministic corpus for a validated config."""
    config.validate()
    prototypes = np.stack([class_prototype(c, config) for c in config.classes])
    weights_plain = _unit_weights(config, rich=False)
    weights_rich = _unit_weights(config, rich=True)
    sequences = [
        _generate_sequence(config, i, prototypes, weights_plain, weights_rich)
        for i in range(config.sequences)
    ]
    return Corpus(config=config, sequences=sequences)


def mask_labels(corpus: Corpus, keep_classes: set[str]) -> Corpus:
    """Relabel every entity class outside keep_classes as background 'O'.

    Feature vectors are untouched; masked tokens lose their span ids.
    """
    known = set(corpus.config.class_names())
    unknown = set(keep_classes) - known
    if unknown:
        raise UnknownClass(f"not in the corpus class table: {sorted(unknown)}")
    keep = set(keep_classes) | {"O"}
    masked = []
    for seq in corpus.sequences:
        labels = [l if l in keep else "O" for l in seq.labels]
        span_ids = [
            sid if l in keep else None for l, sid in zip(seq.labels, seq.span_ids)
        ]
        masked.append(
            LabeledSequence(seq.seq_id, seq.features, labels, span_ids)
        )
    return Corpus(config=corpus.config, sequences=masked)


def _span_census(seq: LabeledSequence, names: set[str]) -> int:
    spans = {
        sid for l, sid in zip(seq.labels, seq.span_ids)
        if sid is not None and l in names
    }
    return len(spans)


def split_ab(corpus: Corpus) -> tuple[Corpus, Corpus]:
    """Deterministic A/B split: B takes the configured minority share of
    sequences, chosen as the most PII-span-dense ones; A keeps the rest.
    Relative order inside each split is preserved."""
    if not corpus.sequences:
        raise SplitInfeasible("empty corpus")
    config = corpus.config
    pii = config.pii_class_names()
    old = {
        c.name for c in config.classes
        if c.kind != "background" and c.name not in pii
    }
    n = len(corpus.sequences)
    n_b = max(1, round(n * config.split_b_fraction))
    if n_b >= n:
        raise SplitInfeasible(f"corpus of {n} sequence(s) cannot give both splits")

    density = [
        (_span_census(seq, pii) / len(seq), seq.seq_id) for seq in corpus.sequences
    ]
    ranked = sorted(range(n), key=lambda i: (-density[i][0], density[i][1]))
    b_index = set(ranked[:n_b])
    seq_a = [s for i, s in enumerate(corpus.sequences) if i not in b_index]
    seq_b = [s for i, s in enumerate(corpus.sequences) if i in b_index]

    def span_density(seqs):
        tokens = sum(len(s) for s in seqs)
        spans = sum(_span_census(s, pii) for s in seqs)
        return spans / tokens if tokens else 0.0

    dens_a, dens_b = span_density(seq_a), span_density(seq_b)
    if dens_b < config.split_min_density_ratio * dens_a or dens_b == 0.0:
        raise SplitInfeasible(
            f"PII span density B/A = {dens_b:.4g}/{dens_a:.4g}, "
            f"need ratio >= {config.split_min_density_ratio}"
        )
    if sum(_span_census(s, old) for s in seq_b) < 1:
        raise SplitInfeasible("split B carries no correctly-labeled old-entity span")
    return (
        Corpus(config=config, sequences=seq_a),
        Corpus(config=config, sequences=seq_b),
    )


# -- JSONL persistence --------------------------------------------------------

def _config_to_dict(config: CorpusConfig) -> dict:
    out = asdict(config)
    out["seq_len_range"] = list(config.seq_len_range)
    return out


def config_from_dict(obj: dict) -> CorpusConfig:
    try:
        classes = [ClassSpec(**c) for c in obj.get("classes", [])]
        kwargs = {k: v for k, v in obj.items() if k != "classes"}
        if "seq_len_range" in kwargs:
            kwargs["seq_len_range"] = tuple(kwargs["seq_len_range"])
        if classes:
            kwargs["classes"] = classes
        config = CorpusConfig(**kwargs)
    except TypeError as exc:
        raise InvalidConfig(f"bad corpus config: {exc}") from exc
    config.validate()
    return config


def save_corpus(corpus: Corpus, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(_config_to_dict(corpus.config)) + "\n")
            for seq in corpus.sequences:
                line = {
                    "seq_id": seq.seq_id,
                    "tokens": [
                        {
                            "vec": [float(v) for v in vec],
                            "label": label,
                            "span": sid,
                        }
                        for vec, label, sid in zip(
                            seq.features, seq.labels, seq.span_ids
                        )
                    ],
                }
                fh.write(json.dumps(line) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write corpus to {path!r}: {exc}") from exc


def load_corpus(path) -> Corpus:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise IoError(f"cannot read corpus from {path!r}: {exc}") from exc
    if not lines:
        raise InvalidConfig("empty corpus file")
    config = config_from_dict(json.loads(lines[0]))
    sequences = []
    for line in lines[1:]:
        obj = json.loads(line)
        tokens = obj["tokens"]
        features = np.array([t["vec"] for t in tokens], dtype=np.float32)
        sequences.append(
            LabeledSequence(
                seq_id=int(obj["seq_id"]),
                features=features.reshape(len(tokens), config.dim),
                labels=[t["label"] for t in tokens],
                span_ids=[t["span"] for t in tokens],
            )
        )
    return Corpus(config=config, sequences=sequences)
