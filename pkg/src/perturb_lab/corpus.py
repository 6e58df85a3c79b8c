"""Corpus handling: tokenization, vocabulary, TSV loading, splits, subsampling."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

UNK_TOKEN = "<unk>"
UNK_INDEX = 0


class TsvFormatError(ValueError):
    """A dataset file violates the `<label>\\t<text>` one-example-per-line format."""


@dataclass(frozen=True)
class Vocabulary:
    """Token <-> index mapping; index 0 is reserved for the unknown token."""

    token_to_index: dict[str, int]
    index_to_token: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index


@dataclass(frozen=True)
class LabeledExample:
    tokens: tuple[int, ...]
    label: int


@dataclass(frozen=True)
class Dataset:
    examples: tuple[LabeledExample, ...]
    num_classes: int
    name: str = ""

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        for ex in self.examples:
            if not 0 <= ex.label < self.num_classes:
                raise ValueError(f"label {ex.label} out of range [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.examples)

    def labels(self) -> list[int]:
        return [ex.label for ex in self.examples]


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokenization; empty input yields an empty list."""
    return text.lower().split()


def build_vocab(corpus: Sequence[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from token sequences.

    Tokens occurring at least ``min_count`` times get indices 1.. in order of
    descending frequency, ties broken lexicographically. Index 0 is the
    unknown token; a literal ``<unk>`` in the corpus is ignored.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    counts.pop(UNK_TOKEN, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    index_to_token = (UNK_TOKEN, *kept)
    token_to_index = {t: i for i, t in enumerate(index_to_token)}
    return Vocabulary(token_to_index, index_to_token)


def encode(vocab: Vocabulary, tokens: Sequence[str]) -> tuple[int, ...]:
    """Map tokens to indices; out-of-vocabulary tokens map to index 0."""
    return tuple(vocab.token_to_index.get(t, UNK_INDEX) for t in tokens)


def read_tsv_rows(path: str | Path) -> list[tuple[int, str, str]]:
    """Read `<label>\\t<text>` rows, returning (line number, label, text) triples.

    Blank lines and lines starting with ``#`` are skipped.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if "\t" not in line:
                raise TsvFormatError(
                    f"{path}: line {lineno}: expected '<label>\\t<text>'")
            label, text = line.split("\t", 1)
            rows.append((lineno, label, text))
    return rows


def load_tsv(path: str | Path, vocab: Vocabulary,
             label_map: dict[str, int]) -> Dataset:
    """Load a TSV dataset, encoding each text with ``vocab``.

    Empty texts encode to the single-token sequence (0,) so every example has
    length >= 1. Unknown labels raise :class:`TsvFormatError`.
    """
    examples = []
    for lineno, label, text in read_tsv_rows(path):
        if label not in label_map:
            raise TsvFormatError(f"{path}: line {lineno}: unknown label {label!r}")
        ids = encode(vocab, tokenize(text)) or (UNK_INDEX,)
        examples.append(LabeledExample(ids, label_map[label]))
    num_classes = max(label_map.values()) + 1
    return Dataset(tuple(examples), num_classes, name=Path(path).stem)


def split_cv(dataset: Dataset, k: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Split into k disjoint (train, dev) cross-validation partitions.

    Fold sizes differ by at most one; the assignment is a seeded permutation.
    """
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    n = len(dataset)
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} examples")
    perm = np.random.default_rng(seed).permutation(n)
    out = []
    for fold in np.array_split(perm, k):
        dev_idx = {int(j) for j in fold}
        dev = tuple(dataset.examples[j] for j in sorted(dev_idx))
        train = tuple(dataset.examples[j] for j in range(n) if j not in dev_idx)
        out.append((replace(dataset, examples=train),
                    replace(dataset, examples=dev)))
    return out


def stratified_indices(labels: Sequence[int], fraction: float,
                       rng: np.random.Generator) -> list[int]:
    """Pick ceil(fraction * N) indices without replacement, stratified by label.

    Per-class quotas are floor(fraction * n_c) plus a largest-remainder
    distribution of the leftover, capped at each class size. Returned indices
    are sorted ascending.
    """
    n = len(labels)
    target = math.ceil(fraction * n)
    by_class: dict[int, list[int]] = {}
    for i, y in enumerate(labels):
        by_class.setdefault(y, []).append(i)
    classes = sorted(by_class)
    quotas = {c: math.floor(fraction * len(by_class[c])) for c in classes}
    by_remainder = sorted(
        classes, key=lambda c: (-(fraction * len(by_class[c]) % 1.0), c))
    need = target - sum(quotas.values())
    while need > 0:
        progressed = False
        for c in by_remainder:
            if need == 0:
                break
            if quotas[c] < len(by_class[c]):
                quotas[c] += 1
                need -= 1
                progressed = True
        if not progressed:
            break
    picked: list[int] = []
    for c in classes:
        if quotas[c]:
            chosen = rng.choice(np.asarray(by_class[c]), size=quotas[c],
                                replace=False)
            picked.extend(int(i) for i in chosen)
    picked.sort()
    return picked


def subsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Retain ceil(fraction * N) examples, stratified per class where counts allow."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return dataset
    rng = np.random.default_rng(seed)
    picked = stratified_indices(dataset.labels(), fraction, rng)
    return replace(dataset, examples=tuple(dataset.examples[i] for i in picked))
