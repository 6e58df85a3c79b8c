"""Synthetic two-class corpus generator.

Each sentence mixes distractor tokens with planted sentiment tokens; the
label's planted set always outnumbers the opposite set, so a count-based
decision rule classifies every example correctly (Bayes accuracy 1.0, well
above 0.95). Classes are generated in equal proportion.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

POSITIVE_WORDS = ("good", "great", "excellent", "superb", "delightful")
NEGATIVE_WORDS = ("bad", "awful", "terrible", "dreadful", "boring")
MIN_LENGTH = 6
MAX_LENGTH = 12


def gen_toy_corpus(n_examples: int, vocab_size: int, seed: int,
                   out_path: str | Path) -> Path:
    """Write a deterministic TSV corpus of n_examples labeled sentences.

    Labels are "0" (negative) and "1" (positive), exactly balanced up to
    rounding. ``vocab_size`` controls the number of distinct distractor
    tokens. Re-running with the same arguments produces a byte-identical
    file.
    """
    if n_examples < 10:
        raise ValueError(f"n_examples must be >= 10, got {n_examples}")
    if vocab_size < 1:
        raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
    rng = np.random.default_rng(seed)
    distractors = [f"w{i:03d}" for i in range(vocab_size)]

    labels = np.array([i % 2 for i in range(n_examples)])
    rng.shuffle(labels)

    lines = []
    for label in labels:
        length = int(rng.integers(MIN_LENGTH, MAX_LENGTH + 1))
        n_signal = int(rng.integers(1, 4))
        n_opposite = int(rng.integers(0, n_signal))  # strictly fewer than n_signal
        own, other = ((POSITIVE_WORDS, NEGATIVE_WORDS) if label == 1
                      else (NEGATIVE_WORDS, POSITIVE_WORDS))
        tokens = list(rng.choice(own, size=n_signal))
        tokens += list(rng.choice(other, size=n_opposite))
        tokens += list(rng.choice(distractors, size=length - len(tokens)))
        rng.shuffle(tokens)
        lines.append(f"{label}\t{' '.join(tokens)}")

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return out_path
