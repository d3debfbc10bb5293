"""Synthetic classification tasks over integer token sequences.

parity
    Tokens are uniform over the vocabulary. The bit channel of a token is its
    lowest bit; the label is the XOR of that bit over the first
    ``parity_span`` positions (all positions when unset).
copy-classify
    Position 0 holds a class token ``c`` in ``[0, n_classes)`` that is
    repeated at one other random position. All other positions are filler
    drawn from the remaining class tokens and the non-class tokens, so ``c``
    is the only class token seen twice. The label is ``c``.
needle
    The last vocabulary id is a marker placed at a uniformly random position
    (never the last one). The token right after it is a class token, which is
    the label. Filler never contains the marker.

With ``min_len`` set, each sequence length is drawn uniformly from
``[min_len, seq_len]``; sequences are stored right-padded with ``-1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

TASK_KINDS = ("parity", "copy-classify", "needle")
PAD = -1


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "parity"
    seq_len: int = 64
    n_train: int = 1000
    n_eval: int = 500
    vocab: int = 16
    seed: int = 0
    n_classes: int = 4
    parity_span: int | None = None
    min_len: int | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}", "kind")
        for key in ("seq_len", "n_train", "n_eval", "vocab"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1", key)
        if self.min_len is not None and not 2 <= self.min_len <= self.seq_len:
            raise ConfigError("min_len must lie in [2, seq_len]", "min_len")
        if self.kind == "parity":
            if self.vocab < 2:
                raise ConfigError("parity needs a vocabulary of at least 2 tokens", "vocab")
            span = self.parity_span
            if span is not None and not 1 <= span <= (self.min_len or self.seq_len):
                raise ConfigError("parity_span must lie in [1, shortest length]", "parity_span")
        else:
            if self.n_classes < 2:
                raise ConfigError("n_classes must be >= 2", "n_classes")
            if self.vocab < self.n_classes + 1:
                raise ConfigError(
                    f"{self.kind} needs vocab > n_classes ({self.vocab} <= {self.n_classes})", "vocab"
                )
            if self.seq_len < 2:
                raise ConfigError(f"{self.kind} needs seq_len >= 2", "seq_len")

    @property
    def classes(self) -> int:
        return 2 if self.kind == "parity" else self.n_classes


@dataclass
class Dataset:
    tokens: np.ndarray  # (n, max_len), right-padded with PAD
    lengths: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.int64)
        return Dataset(self.tokens[idx], self.lengths[idx], self.labels[idx])

    def groups(self) -> dict[int, np.ndarray]:
        """Sample indices per sequence length, lengths ascending."""
        return {int(n): np.flatnonzero(self.lengths == n) for n in np.unique(self.lengths)}

    def batches(self, batch_size: int, order: np.ndarray | None = None):
        """Yield ``(tokens, labels, indices)`` with one length per batch."""
        if batch_size < 1:
            raise InputError("batch_size must be >= 1")
        for n, idx in self.groups().items():
            if order is not None:
                idx = idx[np.argsort(order[idx], kind="stable")]
            for start in range(0, len(idx), batch_size):
                b = idx[start:start + batch_size]
                yield self.tokens[b, :n], self.labels[b], b


def parity_label(tokens: np.ndarray, span: int | None = None) -> int:
    bits = np.asarray(tokens[:span] if span else tokens) & 1
    return int(bits.sum() % 2)


def copy_label(tokens: np.ndarray) -> int:
    return int(tokens[0])


def needle_label(tokens: np.ndarray, vocab: int) -> int:
    pos = np.flatnonzero(np.asarray(tokens) == vocab - 1)
    if len(pos) != 1 or pos[0] + 1 >= len(tokens):
        raise InputError("needle sequence must hold exactly one marker before the last position")
    return int(tokens[pos[0] + 1])


def label_of(spec: TaskSpec, tokens: np.ndarray) -> int:
    """Recompute the label of one unpadded sequence from its tokens."""
    if spec.kind == "parity":
        return parity_label(tokens, spec.parity_span)
    if spec.kind == "copy-classify":
        return copy_label(tokens)
    return needle_label(tokens, spec.vocab)


def _sample(spec: TaskSpec, n: int, rng: np.random.Generator) -> Dataset:
    if spec.min_len is None:
        lengths = np.full(n, spec.seq_len, dtype=np.int64)
    else:
        lengths = rng.integers(spec.min_len, spec.seq_len + 1, size=n)
    tokens = np.full((n, spec.seq_len), PAD, dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    C, V = spec.n_classes, spec.vocab
    for i, length in enumerate(lengths):
        length = int(length)
        if spec.kind == "parity":
            seq = rng.integers(0, V, size=length)
            labels[i] = parity_label(seq, spec.parity_span)
        elif spec.kind == "copy-classify":
            c = int(rng.integers(0, C))
            others = np.array([v for v in range(V) if v != c])
            seq = others[rng.integers(0, len(others), size=length)]
            seq[0] = c
            seq[int(rng.integers(1, length))] = c
            labels[i] = c
        else:
            c = int(rng.integers(0, C))
            marker = V - 1
            seq = rng.integers(0, marker, size=length)
            p = int(rng.integers(0, length - 1))
            seq[p] = marker
            seq[p + 1] = c
            labels[i] = c
        tokens[i, :length] = seq
    return Dataset(tokens, lengths.astype(np.int64), labels)


def gen_task(spec: TaskSpec) -> tuple[Dataset, Dataset]:
    """Deterministic (train, eval) split for ``spec``."""
    rng_train, rng_eval = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2))
    return _sample(spec, spec.n_train, rng_train), _sample(spec, spec.n_eval, rng_eval)
