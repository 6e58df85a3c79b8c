"""Embedding matrix storage, pretrained-vector loading, lookup, and row updates."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Vocabulary


@dataclass(eq=False)
class EmbeddingMatrix:
    """V x d matrix of word vectors; row 0 is the unknown-token vector."""

    weights: np.ndarray
    trainable: bool = True

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise ValueError(f"weights must be a V x d matrix, got shape {self.weights.shape}")
        if not np.isfinite(self.weights).all():
            raise ValueError("embedding weights contain non-finite entries")

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.weights.copy(), self.trainable)


@dataclass(eq=False, frozen=True)
class EmbeddedSequence:
    """An l x d embedded sentence together with its source token indices."""

    values: np.ndarray
    token_indices: tuple[int, ...]


def init_random(vocab_size: int, dim: int, scale: float, seed: int) -> EmbeddingMatrix:
    """Random embeddings with entries i.i.d. uniform in [-scale, scale]."""
    if vocab_size < 1 or dim < 1:
        raise ValueError(f"need vocab_size >= 1 and dim >= 1, got {vocab_size}, {dim}")
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(rng.uniform(-scale, scale, size=(vocab_size, dim)))


def load_pretrained(path: str | Path, vocab: Vocabulary, dim: int, *,
                    fallback_scale: float = 0.25,
                    seed: int = 0) -> tuple[EmbeddingMatrix, float]:
    """Load word vectors from a text file, one `<token> <v1> ... <vd>` per line.

    An optional first line `<count> <dim>` is detected and skipped. Vocabulary
    tokens absent from the file (including the unknown token) are initialized
    uniform in [-fallback_scale, fallback_scale]. Returns the matrix and the
    coverage fraction (matched tokens / V).
    """
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-fallback_scale, fallback_scale, size=(vocab.size, dim))
    matched: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh):
            parts = raw.split()
            if not parts:
                continue
            if lineno == 0 and len(parts) == 2 and dim != 1 and _all_ints(parts):
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ValueError(
                    f"{path}: token {token!r}: expected {dim} values, got {len(values)}")
            if token in vocab:
                idx = vocab.token_to_index[token]
                weights[idx] = [float(v) for v in values]
                matched.add(idx)
    coverage = len(matched) / vocab.size
    return EmbeddingMatrix(weights), coverage


def _all_ints(parts: list[str]) -> bool:
    try:
        [int(p) for p in parts]
    except ValueError:
        return False
    return True


def lookup(emb: EmbeddingMatrix, tokens) -> EmbeddedSequence:
    """Embed a nonempty index sequence as the l x d matrix of its rows."""
    if len(tokens) == 0:
        raise ValueError("cannot embed an empty token sequence")
    idx = np.asarray(tokens, dtype=np.intp)
    if idx.min() < 0 or idx.max() >= emb.vocab_size:
        raise ValueError(
            f"token index out of range [0, {emb.vocab_size}): {tokens}")
    return EmbeddedSequence(emb.weights[idx], tuple(int(t) for t in tokens))


def accumulate_update(emb: EmbeddingMatrix, token_indices, grad: np.ndarray,
                      lr: float) -> EmbeddingMatrix:
    """Apply `weights[tokens[i]] -= lr * grad[i]` in place, accumulating repeats."""
    if not emb.trainable:
        raise ValueError("embedding matrix is frozen (trainable=False)")
    grad = np.asarray(grad, dtype=np.float64)
    expected = (len(token_indices), emb.dim)
    if grad.shape != expected:
        raise ValueError(f"gradient shape {grad.shape} != {expected}")
    np.add.at(emb.weights, np.asarray(token_indices, dtype=np.intp), -lr * grad)
    return emb
