"""Corpus ingestion, vocabularies, balanced batching and synthetic corpora.

Corpus files hold one record per line::

    label<TAB>text<TAB>[[start, end], ...]

The third field is optional and lists half-open token-index spans marking the
gold rationale.  Text is lowercased and split on whitespace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream

PAD, UNK = "<pad>", "<unk>"
DEFAULT_MAX_LEN = 256


class CorpusError(ValueError):
    pass


class Vocabulary:
    """Bijective token/id map with ``<pad>`` at 0 and ``<unk>`` at 1."""

    pad_id = 0
    unk_id = 1

    def __init__(self, tokens=(), class_count=2):
        if class_count < 2:
            raise ValueError("class_count must be at least 2")
        self.class_count = int(class_count)
        self.id_to_token = [PAD, UNK]
        self.token_to_id = {PAD: 0, UNK: 1}
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        idx = self.token_to_id.get(token)
        if idx is None:
            idx = len(self.id_to_token)
            self.token_to_id[token] = idx
            self.id_to_token.append(token)
        return idx

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, tokens):
        return np.array([self.token_to_id.get(t, self.unk_id) for t in tokens], dtype=np.int64)

    def decode(self, ids):
        return [self.id_to_token[i] for i in ids]


@dataclass
class Example:
    token_ids: np.ndarray
    label: int
    gold_mask: np.ndarray | None = None

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        if self.gold_mask is not None:
            self.gold_mask = np.asarray(self.gold_mask, dtype=np.int64)
            if self.gold_mask.shape != self.token_ids.shape:
                raise ValueError(
                    f"gold mask length {len(self.gold_mask)} differs from token count {len(self.token_ids)}"
                )

    def __len__(self):
        return len(self.token_ids)


@dataclass
class DatasetSplit:
    examples: list
    vocab: Vocabulary
    name: str = ""

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    @property
    def labels(self):
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    @property
    def has_gold(self):
        return any(ex.gold_mask is not None for ex in self.examples)

    def write(self, path):
        """Write the split in the tab-separated corpus format."""
        with open(path, "w", encoding="utf-8") as fh:
            for ex in self.examples:
                fields = [str(ex.label), " ".join(self.vocab.decode(ex.token_ids))]
                if ex.gold_mask is not None:
                    fields.append(json.dumps(mask_to_spans(ex.gold_mask)))
                fh.write("\t".join(fields) + "\n")


@dataclass
class Batch:
    """Padded view of a list of examples."""

    ids: np.ndarray  # (B, T) int
    pad: np.ndarray  # (B, T) float, 1 on real tokens
    labels: np.ndarray  # (B,)
    gold: np.ndarray  # (B, T) int, zeros where absent
    has_gold: np.ndarray  # (B,) bool

    @property
    def lengths(self):
        return self.pad.sum(axis=1).astype(np.int64)

    def __len__(self):
        return len(self.labels)


def make_batch(examples):
    if not examples:
        raise ValueError("cannot batch an empty example list")
    T = max(len(ex) for ex in examples)
    B = len(examples)
    ids = np.zeros((B, T), dtype=np.int64)
    pad = np.zeros((B, T))
    gold = np.zeros((B, T), dtype=np.int64)
    has_gold = np.zeros(B, dtype=bool)
    for b, ex in enumerate(examples):
        n = len(ex)
        if n == 0:
            raise ValueError(f"example {b} is empty")
        ids[b, :n] = ex.token_ids
        pad[b, :n] = 1.0
        if ex.gold_mask is not None:
            gold[b, :n] = ex.gold_mask
            has_gold[b] = True
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return Batch(ids, pad, labels, gold, has_gold)


# ---------------------------------------------------------------------------
# masks and spans


def spans_to_mask(spans, length):
    mask = np.zeros(length, dtype=np.int64)
    for start, end in spans:
        if not (0 <= start < end <= length):
            raise ValueError(f"span [{start}, {end}) outside text of length {length}")
        mask[start:end] = 1
    return mask


def mask_to_spans(mask):
    """Maximal runs of ones as half-open ``[start, end)`` pairs."""
    m = np.concatenate([[0], np.asarray(mask, dtype=np.int64), [0]])
    edges = np.flatnonzero(np.diff(m))
    return [[int(s), int(e)] for s, e in zip(edges[::2], edges[1::2])]


# ---------------------------------------------------------------------------
# file loaders


@dataclass
class Embeddings:
    matrix: np.ndarray
    dim: int
    vocab: Vocabulary


def read_vector_file(path):
    """Parse ``token v1 ... vd`` lines into a dict; dimension must be uniform."""
    vectors, dim = {}, None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise CorpusError(f"line {lineno}: no vector values")
            elif len(values) != dim:
                raise CorpusError(f"line {lineno}: expected {dim} values, found {len(values)}")
            try:
                vectors[token] = np.array(values, dtype=np.float64)
            except ValueError:
                raise CorpusError(f"line {lineno}: non-numeric vector entry") from None
    if not vectors:
        raise CorpusError(f"{path}: no vectors")
    return vectors, dim


def load_embeddings(path, vocab=None):
    """Build an embedding matrix aligned to ``vocab``.

    Vocabulary tokens missing from the file get a zero row; the ``<unk>`` row is
    the mean of all loaded vectors.  Without a vocabulary, one is built from
    the file's tokens in order.
    """
    vectors, dim = read_vector_file(path)
    if vocab is None:
        vocab = Vocabulary(vectors)
    matrix = np.zeros((len(vocab), dim))
    for tok, idx in vocab.token_to_id.items():
        if tok in vectors and idx not in (vocab.pad_id, vocab.unk_id):
            matrix[idx] = vectors[tok]
    matrix[vocab.unk_id] = np.mean(np.stack(list(vectors.values())), axis=0)
    return Embeddings(matrix, dim, vocab)


def write_embeddings(path, vocab, matrix):
    with open(path, "w", encoding="utf-8") as fh:
        for idx, tok in enumerate(vocab.id_to_token):
            if idx in (vocab.pad_id, vocab.unk_id):
                continue
            fh.write(tok + " " + " ".join(repr(float(v)) for v in matrix[idx]) + "\n")


def parse_record(line, index):
    fields = line.rstrip("\n").split("\t")
    if len(fields) not in (2, 3):
        raise CorpusError(f"record {index}: expected 2 or 3 tab-separated fields, found {len(fields)}")
    try:
        label = int(fields[0])
    except ValueError:
        raise CorpusError(f"record {index}: unknown label {fields[0]!r}") from None
    tokens = fields[1].lower().split()
    spans = None
    if len(fields) == 3 and fields[2].strip():
        try:
            spans = json.loads(fields[2])
        except json.JSONDecodeError:
            raise CorpusError(f"record {index}: rationale field is not a JSON span list") from None
    return label, tokens, spans


def load_dataset(path, vocab=None, max_len=DEFAULT_MAX_LEN, class_count=2, name=None):
    """Read a corpus file into a :class:`DatasetSplit`.

    When ``vocab`` is None a fresh vocabulary is grown from the file; otherwise
    unseen tokens map to ``<unk>`` and the vocabulary's class count applies.
    """
    grow = vocab is None
    if grow:
        vocab = Vocabulary(class_count=class_count)
    examples = []
    with open(path, encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            if not line.strip():
                continue
            label, tokens, spans = parse_record(line, index)
            if not 0 <= label < vocab.class_count:
                raise CorpusError(f"record {index}: unknown label {label} (class count {vocab.class_count})")
            if not tokens:
                raise CorpusError(f"record {index}: empty text")
            gold = None
            if spans is not None:
                try:
                    gold = spans_to_mask(spans, len(tokens))
                except (ValueError, TypeError) as err:
                    raise CorpusError(f"record {index}: {err}") from None
                gold = gold[:max_len]
            tokens = tokens[:max_len]
            ids = np.array([vocab.add(t) for t in tokens]) if grow else vocab.encode(tokens)
            examples.append(Example(ids, label, gold))
    return DatasetSplit(examples, vocab, name or Path(path).stem)


# ---------------------------------------------------------------------------
# batching


def class_indices(split):
    labels = split.labels
    classes = range(split.vocab.class_count)
    groups = [np.flatnonzero(labels == c) for c in classes]
    empty = [c for c, g in zip(classes, groups) if len(g) == 0]
    if empty:
        raise ValueError(f"class(es) {empty} have no examples; cannot balance")
    return groups


def balanced_epoch(split, seed, epoch=0, tag="batches"):
    """Indices for one balanced epoch: each class undersampled to the minority count."""
    groups = class_indices(split)
    per_class = min(len(g) for g in groups)
    rng = stream(seed, tag, epoch)
    chosen = np.concatenate([rng.permutation(g)[:per_class] for g in groups])
    return rng.permutation(chosen)


def balanced_batches(split, batch_size, seed, epoch=0, tag="batches"):
    """Yield :class:`Batch` objects covering one balanced epoch."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = balanced_epoch(split, seed, epoch, tag)
    for start in range(0, len(order), batch_size):
        yield make_batch([split.examples[i] for i in order[start:start + batch_size]])


def sequential_batches(split, batch_size):
    for start in range(0, len(split), batch_size):
        yield make_batch(split.examples[start:start + batch_size])


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass
class SyntheticSpec:
    """Parameters of a planted causal/spurious corpus.

    Every example holds a causal span whose cue tokens determine the label and,
    with probability ``rho``, a spurious span whose cue tokens also agree with
    the label.  With ``first_segment`` > 0 the spurious span always sits inside
    the first ``first_segment`` positions and the causal span after them.
    """

    vocab_size: int = 100
    n_train: int = 2000
    n_dev: int = 500
    n_test: int = 500
    seq_len: int = 40
    causal_len: int = 4
    spurious_len: int = 4
    rho: float = 0.8
    cues_per_set: int = 4
    first_segment: int = 0
    emb_dim: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if min(self.causal_len, self.spurious_len, self.seq_len, self.cues_per_set) < 1:
            raise ValueError("span lengths, sequence length and cue set size must be positive")
        if self.first_segment:
            if self.spurious_len > self.first_segment or self.first_segment + self.causal_len > self.seq_len:
                raise ValueError("spans cannot fit around the first segment")
        elif self.causal_len + self.spurious_len > self.seq_len:
            raise ValueError(
                f"spans cannot fit: {self.causal_len} + {self.spurious_len} > sequence length {self.seq_len}"
            )
        reserved = 2 + 4 * self.cues_per_set
        if self.vocab_size <= reserved:
            raise ValueError(f"vocab_size must exceed {reserved} to leave room for filler tokens")

    @property
    def causal_fraction(self):
        return self.causal_len / self.seq_len


@dataclass
class SyntheticCorpus:
    train: DatasetSplit
    dev: DatasetSplit
    test: DatasetSplit
    vocab: Vocabulary
    embeddings: np.ndarray
    has_spurious: dict = field(default_factory=dict)
    spurious_masks: dict = field(default_factory=dict)


def synthetic_vocab(spec):
    k = spec.cues_per_set
    tokens = [f"c{c}_{j}" for c in (0, 1) for j in range(k)]
    tokens += [f"s{c}_{j}" for c in (0, 1) for j in range(k)]
    n_filler = spec.vocab_size - 2 - len(tokens)
    tokens += [f"w{j}" for j in range(n_filler)]
    return Vocabulary(tokens, class_count=2)


def _cue_ids(vocab, role, label, k):
    return np.array([vocab.token_to_id[f"{role}{label}_{j}"] for j in range(k)])


def _make_split(spec, vocab, n, rng, name):
    k = spec.cues_per_set
    filler = np.arange(2 + 4 * k, len(vocab))
    L, lc, ls = spec.seq_len, spec.causal_len, spec.spurious_len
    examples, spurious_flags, spurious_masks = [], [], []
    for _ in range(n):
        label = int(rng.integers(2))
        ids = rng.choice(filler, size=L)
        with_spurious = bool(rng.random() < spec.rho)
        if spec.first_segment:
            c_start = int(rng.integers(spec.first_segment, L - lc + 1))
            s_start = int(rng.integers(0, spec.first_segment - ls + 1))
        elif with_spurious:
            # uniform over non-overlapping (causal, spurious) offset pairs
            while True:
                c_start = int(rng.integers(0, L - lc + 1))
                s_start = int(rng.integers(0, L - ls + 1))
                if s_start + ls <= c_start or c_start + lc <= s_start:
                    break
        else:
            c_start = int(rng.integers(0, L - lc + 1))
            s_start = -1
        ids[c_start:c_start + lc] = rng.choice(_cue_ids(vocab, "c", label, k), size=lc)
        smask = np.zeros(L, dtype=np.int64)
        if with_spurious:
            ids[s_start:s_start + ls] = rng.choice(_cue_ids(vocab, "s", label, k), size=ls)
            smask[s_start:s_start + ls] = 1
        gold = np.zeros(L, dtype=np.int64)
        gold[c_start:c_start + lc] = 1
        examples.append(Example(ids, label, gold))
        spurious_flags.append(with_spurious)
        spurious_masks.append(smask)
    return DatasetSplit(examples, vocab, name), np.array(spurious_flags), spurious_masks


def generate_synthetic(spec):
    """Build train/dev/test splits with gold masks on the causal span."""
    vocab = synthetic_vocab(spec)
    corpus = {}
    flags, smasks = {}, {}
    for offset, (name, n) in enumerate((("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test))):
        rng = stream(spec.seed, "synthetic", offset)
        corpus[name], flags[name], smasks[name] = _make_split(spec, vocab, n, rng, name)
    emb = stream(spec.seed, "synthetic", "embeddings").normal(0.0, 1.0, size=(len(vocab), spec.emb_dim))
    emb[vocab.pad_id] = 0.0
    emb[vocab.unk_id] = emb[2:].mean(axis=0)
    return SyntheticCorpus(corpus["train"], corpus["dev"], corpus["test"], vocab, emb, flags, smasks)
