"""Multiplicative noise strategies over an embedded token sequence.

Every strategy except word dropout is expressed as an l x d mask ``e``
applied elementwise to the embedded sequence. Binary masks are rescaled by
1/p at application time so the expected activation matches evaluation time;
word dropout substitutes token indices (no mask, no rescaling).

The adversarial variants move the mask one step in the direction that
increases the loss: a unit-norm gradient step for continuous masks, and a
budgeted sign-guided bit flip for binary masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import UNK_INDEX
from .embed import EmbeddedSequence, EmbeddingMatrix, lookup

STRATEGIES = (
    "none",
    "gaussian",
    "bernoulli",
    "adversarial",
    "word_dropout",
    "semantic_dropout",
    "gaussian_adv",
    "bernoulli_adv",
)

FLIP_ORDERS = ("descending", "ascending")

MASK_CONTINUOUS = "continuous"
MASK_BINARY = "binary"

# grad_input callback: maps a perturbed l x d input to the loss gradient
# with respect to that input.
LossGradFn = Callable[[np.ndarray], np.ndarray]


@dataclass(eq=False)
class NoiseMask:
    """An l x d multiplicative perturbation matrix.

    Binary masks hold {0, 1} entries and carry the keep probability used for
    1/p rescaling at application time.
    """

    values: np.ndarray
    kind: str
    keep_prob: float | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"mask must be an l x d matrix, got shape {self.values.shape}")
        if self.kind not in (MASK_CONTINUOUS, MASK_BINARY):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.kind == MASK_BINARY:
            if self.keep_prob is None:
                raise ValueError("binary masks require keep_prob")
            if not ((self.values == 0.0) | (self.values == 1.0)).all():
                raise ValueError("binary mask entries must be 0 or 1")
        elif self.keep_prob is not None:
            raise ValueError("keep_prob is only meaningful for binary masks")


@dataclass
class PerturbConfig:
    """Strategy selector with keep probability p and noise scale / step size sigma."""

    strategy: str = "none"
    p: float = 1.0
    sigma: float = 0.0
    flip_order: str = "descending"

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must be in (0, 1], got {self.p}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.flip_order not in FLIP_ORDERS:
            raise ValueError(f"flip_order must be one of {FLIP_ORDERS}")


def gaussian_mask(l: int, d: int, sigma: float, rng: np.random.Generator) -> NoiseMask:
    """Continuous mask with entries i.i.d. Normal(mean 1, std sigma)."""
    if l < 1 or d < 1:
        raise ValueError(f"need l >= 1 and d >= 1, got {l}, {d}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    values = 1.0 + sigma * rng.standard_normal((l, d))
    return NoiseMask(values, MASK_CONTINUOUS)


def bernoulli_mask(l: int, d: int, p: float, rng: np.random.Generator) -> NoiseMask:
    """Binary mask with entries kept (=1) independently with probability p."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    values = (rng.random((l, d)) < p).astype(np.float64)
    return NoiseMask(values, MASK_BINARY, keep_prob=p)


def word_dropout(tokens: Sequence[int], p: float,
                 rng: np.random.Generator) -> tuple[int, ...]:
    """Keep each token with probability p, else replace its index with 0 (UNK).

    Length is preserved and no rescaling is applied.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    keep = rng.random(len(tokens)) < p
    return tuple(int(t) if k else UNK_INDEX for t, k in zip(tokens, keep))


def semantic_mask(l: int, d: int, p: float, rng: np.random.Generator) -> NoiseMask:
    """Binary mask dropping whole embedding dimensions: d column decisions,
    each column all-ones or all-zeros across the l rows."""
    if l < 1 or d < 1:
        raise ValueError(f"need l >= 1 and d >= 1, got {l}, {d}")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    cols = (rng.random(d) < p).astype(np.float64)
    return NoiseMask(np.repeat(cols[None, :], l, axis=0), MASK_BINARY, keep_prob=p)


def adversarial_step(mask: NoiseMask, grad_e: np.ndarray, sigma: float) -> NoiseMask:
    """One loss-increasing step: e + sigma * g / ||g||_F.

    A zero gradient returns the mask unchanged (avoids 0/0); the result is a
    continuous mask.
    """
    grad_e = np.asarray(grad_e, dtype=np.float64)
    if grad_e.shape != mask.values.shape:
        raise ValueError(f"gradient shape {grad_e.shape} != mask shape {mask.values.shape}")
    if not np.isfinite(grad_e).all():
        raise ValueError("gradient contains non-finite entries")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    norm = float(np.linalg.norm(grad_e))
    if norm == 0.0:
        return mask
    return NoiseMask(mask.values + sigma * grad_e / norm, MASK_CONTINUOUS)


def flip_budget(n_units: int, p: float) -> int:
    """Flip budget floor(n_units * (1 - p)), guarded against float noise so
    exact products like 3000 * 0.1 do not land one below the integer."""
    raw = n_units * (1.0 - p)
    return int(math.floor(raw + 1e-9 * max(1.0, raw)))


def adversarial_dropout(mask: NoiseMask, grad_e: np.ndarray, p: float,
                        flip_order: str = "descending") -> NoiseMask:
    """Flip binary mask units in the loss-increasing direction under a budget.

    Units are visited in |g| order (descending by default); a unit flips
    1 -> 0 when its gradient is negative and 0 -> 1 when positive. Zero or
    wrong-signed gradients are skipped. Flipping stops once
    floor(l * d * (1 - p)) flips have been made.
    """
    if mask.kind != MASK_BINARY:
        raise ValueError("adversarial_dropout requires a binary mask")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if flip_order not in FLIP_ORDERS:
        raise ValueError(f"flip_order must be one of {FLIP_ORDERS}")
    grad_e = np.asarray(grad_e, dtype=np.float64)
    if grad_e.shape != mask.values.shape:
        raise ValueError(f"gradient shape {grad_e.shape} != mask shape {mask.values.shape}")
    if not np.isfinite(grad_e).all():
        raise ValueError("gradient contains non-finite entries")

    flat_e = mask.values.ravel().copy()
    flat_g = grad_e.ravel()
    magnitudes = np.abs(flat_g)
    if flip_order == "descending":
        order = np.argsort(-magnitudes, kind="stable")
    else:
        order = np.argsort(magnitudes, kind="stable")

    budget = flip_budget(flat_e.size, p)
    flips = 0
    for idx in order:
        if flips >= budget:
            break
        g = flat_g[idx]
        if g < 0.0 and flat_e[idx] == 1.0:
            flat_e[idx] = 0.0
            flips += 1
        elif g > 0.0 and flat_e[idx] == 0.0:
            flat_e[idx] = 1.0
            flips += 1
    return NoiseMask(flat_e.reshape(mask.values.shape), MASK_BINARY, keep_prob=p)


def apply_mask(x: EmbeddedSequence, mask: NoiseMask) -> np.ndarray:
    """Elementwise product; binary masks are additionally scaled by 1/keep_prob."""
    if mask.values.shape != x.values.shape:
        raise ValueError(f"mask shape {mask.values.shape} != input shape {x.values.shape}")
    if mask.kind == MASK_BINARY:
        return x.values * mask.values * (1.0 / mask.keep_prob)
    return x.values * mask.values


def grad_wrt_mask(x: EmbeddedSequence, grad_input: np.ndarray,
                  scale: float = 1.0) -> np.ndarray:
    """Gradient of the loss w.r.t. the mask, by the chain rule through x * e.

    ``grad_input`` is the loss gradient at the perturbed input. For scaled
    binary masks pass the same 1/p factor ``apply_mask`` uses, so the result
    matches finite differences of the loss in the mask entries.
    """
    grad_input = np.asarray(grad_input, dtype=np.float64)
    if grad_input.shape != x.values.shape:
        raise ValueError(
            f"gradient shape {grad_input.shape} != input shape {x.values.shape}")
    return grad_input * x.values * scale


def is_identity(cfg: PerturbConfig) -> bool:
    """True when the configured strategy provably leaves the input unchanged."""
    if cfg.strategy == "none":
        return True
    if cfg.strategy in ("gaussian", "adversarial", "gaussian_adv"):
        return cfg.sigma == 0.0
    return cfg.p == 1.0  # bernoulli, word_dropout, semantic_dropout, bernoulli_adv


@dataclass(eq=False)
class PerturbOutcome:
    """A perturbed training input.

    ``factor`` is the elementwise multiplier (rescaling folded in) linking the
    original embedded values to the perturbed ones, used to backpropagate into
    embedding rows; it is None when the perturbed values are a direct lookup
    of ``tokens`` (identity and word-level strategies).
    """

    tokens: tuple[int, ...]
    values: np.ndarray
    factor: np.ndarray | None


def perturb_example(cfg: PerturbConfig, emb: EmbeddingMatrix, x: EmbeddedSequence,
                    tokens: Sequence[int], loss_grad_fn: LossGradFn,
                    rng: np.random.Generator) -> PerturbOutcome:
    """Apply one strategy to one embedded example.

    Identity configurations (strategy none, sigma = 0, p = 1) consume no
    randomness and return the input values unchanged, so their training
    trajectories coincide bit-for-bit with the baseline.
    """
    tokens = tuple(int(t) for t in tokens)
    if is_identity(cfg):
        return PerturbOutcome(tokens, x.values, None)

    l, d = x.values.shape
    strategy = cfg.strategy
    if strategy == "gaussian":
        mask = gaussian_mask(l, d, cfg.sigma, rng)
        return PerturbOutcome(tokens, apply_mask(x, mask), mask.values)
    if strategy == "bernoulli":
        mask = bernoulli_mask(l, d, cfg.p, rng)
        return PerturbOutcome(tokens, apply_mask(x, mask), mask.values / cfg.p)
    if strategy == "semantic_dropout":
        mask = semantic_mask(l, d, cfg.p, rng)
        return PerturbOutcome(tokens, apply_mask(x, mask), mask.values / cfg.p)
    if strategy == "word_dropout":
        dropped = word_dropout(tokens, cfg.p, rng)
        return PerturbOutcome(dropped, lookup(emb, dropped).values, None)
    if strategy == "adversarial":
        mask = NoiseMask(np.ones((l, d)), MASK_CONTINUOUS)
        grad_input = loss_grad_fn(apply_mask(x, mask))
        stepped = adversarial_step(mask, grad_wrt_mask(x, grad_input), cfg.sigma)
        return PerturbOutcome(tokens, apply_mask(x, stepped), stepped.values)
    if strategy == "gaussian_adv":
        mask = gaussian_mask(l, d, cfg.sigma, rng)
        grad_input = loss_grad_fn(apply_mask(x, mask))
        stepped = adversarial_step(mask, grad_wrt_mask(x, grad_input), cfg.sigma)
        return PerturbOutcome(tokens, apply_mask(x, stepped), stepped.values)
    if strategy == "bernoulli_adv":
        mask = bernoulli_mask(l, d, cfg.p, rng)
        grad_input = loss_grad_fn(apply_mask(x, mask))
        g = grad_wrt_mask(x, grad_input, scale=1.0 / cfg.p)
        flipped = adversarial_dropout(mask, g, cfg.p, cfg.flip_order)
        return PerturbOutcome(tokens, apply_mask(x, flipped), flipped.values / cfg.p)
    raise AssertionError(f"unhandled strategy {strategy!r}")


def make_perturbation(cfg: PerturbConfig, emb: EmbeddingMatrix, x: EmbeddedSequence,
                      tokens: Sequence[int], loss_grad_fn: LossGradFn,
                      rng: np.random.Generator) -> tuple[tuple[int, ...], np.ndarray]:
    """Dispatch one strategy; returns (perturbed tokens, perturbed l x d matrix)."""
    outcome = perturb_example(cfg, emb, x, tokens, loss_grad_fn, rng)
    return outcome.tokens, outcome.values
