"""Small sentence classifiers with hand-derived exact gradients.

Two architectures share the softmax + cross-entropy head:

* ``meanpool_linear`` -- mean of the embedded rows followed by an affine map.
* ``conv_maxpool`` -- F filters of width w, tanh activations, max-pooling
  over positions, affine map to class logits. Sequences shorter than the
  filter width are zero-padded.

``backward`` returns the gradient with respect to the l x d input matrix,
which is what the adversarial perturbation strategies consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

ARCH_MEANPOOL = "meanpool_linear"
ARCH_CONV = "conv_maxpool"
ARCHITECTURES = (ARCH_MEANPOOL, ARCH_CONV)

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    arch: str = ARCH_MEANPOOL
    filters: int = 8
    width: int = 3
    init_scale: float = 0.1

    def __post_init__(self) -> None:
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.filters < 1 or self.width < 1:
            raise ValueError("filters and width must be >= 1")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be > 0")


@dataclass(eq=False)
class ClassifierParams:
    """Weights of one classifier. ``filters``/``filter_bias`` are conv-only."""

    arch: str
    out_weight: np.ndarray            # meanpool: (d, C); conv: (F, C)
    out_bias: np.ndarray              # (C,)
    filters: np.ndarray | None = None       # (F, w, d)
    filter_bias: np.ndarray | None = None   # (F,)

    def named_arrays(self) -> dict[str, np.ndarray]:
        arrays = {"out_weight": self.out_weight, "out_bias": self.out_bias}
        if self.filters is not None:
            arrays["filters"] = self.filters
            arrays["filter_bias"] = self.filter_bias
        return arrays

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            self.arch,
            self.out_weight.copy(),
            self.out_bias.copy(),
            None if self.filters is None else self.filters.copy(),
            None if self.filter_bias is None else self.filter_bias.copy(),
        )


@dataclass(eq=False)
class ForwardTrace:
    """Cached intermediates from ``forward``, sufficient for exact backprop."""

    logits: np.ndarray
    pooled: np.ndarray
    seq_len: int
    x_padded: np.ndarray | None = None   # conv: zero-padded input
    argmax: np.ndarray | None = None     # conv: winning position per filter


def init_params(cfg: ModelConfig, dim: int, num_classes: int,
                rng: np.random.Generator) -> ClassifierParams:
    """Uniform [-init_scale, init_scale] weights, zero biases."""
    s = cfg.init_scale
    if cfg.arch == ARCH_MEANPOOL:
        return ClassifierParams(
            cfg.arch,
            rng.uniform(-s, s, size=(dim, num_classes)),
            np.zeros(num_classes),
        )
    return ClassifierParams(
        cfg.arch,
        rng.uniform(-s, s, size=(cfg.filters, num_classes)),
        np.zeros(num_classes),
        rng.uniform(-s, s, size=(cfg.filters, cfg.width, dim)),
        np.zeros(cfg.filters),
    )


def forward(params: ClassifierParams, x: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Compute class logits for an l x d input matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"input must be an l x d matrix with l >= 1, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite entries")
    if params.arch == ARCH_MEANPOOL:
        pooled = x.mean(axis=0)
        logits = params.out_weight.T @ pooled + params.out_bias
        return logits, ForwardTrace(logits, pooled, seq_len=x.shape[0])

    n_filters, width, dim = params.filters.shape
    if x.shape[1] != dim:
        raise ValueError(f"input dim {x.shape[1]} != filter dim {dim}")
    xp = x
    if x.shape[0] < width:
        xp = np.zeros((width, dim))
        xp[: x.shape[0]] = x
    windows = np.lib.stride_tricks.sliding_window_view(xp, (width, dim))[:, 0]
    pre = np.einsum("twd,fwd->ft", windows, params.filters) + params.filter_bias[:, None]
    act = np.tanh(pre)
    arg = act.argmax(axis=1)  # ties: lowest position wins
    pooled = act[np.arange(n_filters), arg]
    logits = params.out_weight.T @ pooled + params.out_bias
    return logits, ForwardTrace(logits, pooled, seq_len=x.shape[0],
                                x_padded=xp, argmax=arg)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def loss(logits: np.ndarray, label: int) -> float:
    """Cross-entropy -log softmax(logits)[label], stabilized by max-subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    z = logits - np.max(logits)
    return float(np.log(np.exp(z).sum()) - z[label])


def backward(params: ClassifierParams, x: np.ndarray, label: int,
             trace: ForwardTrace) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of the loss w.r.t. all parameters and the l x d input."""
    dlogits = softmax(trace.logits)
    dlogits[label] -= 1.0
    grads = {
        "out_weight": np.outer(trace.pooled, dlogits),
        "out_bias": dlogits,
    }
    dpooled = params.out_weight @ dlogits

    if params.arch == ARCH_MEANPOOL:
        input_grad = np.tile(dpooled / trace.seq_len, (trace.seq_len, 1))
        return grads, input_grad

    n_filters, width, _ = params.filters.shape
    dact = dpooled * (1.0 - trace.pooled ** 2)  # tanh'
    dfilters = np.zeros_like(params.filters)
    dfilter_bias = np.zeros(n_filters)
    dxp = np.zeros_like(trace.x_padded)
    for f in range(n_filters):
        t = int(trace.argmax[f])
        dfilters[f] = dact[f] * trace.x_padded[t : t + width]
        dfilter_bias[f] = dact[f]
        dxp[t : t + width] += dact[f] * params.filters[f]
    grads["filters"] = dfilters
    grads["filter_bias"] = dfilter_bias
    return grads, dxp[: trace.seq_len]


def predict(params: ClassifierParams, x: np.ndarray) -> int:
    """Argmax class; ties resolve to the lowest class index."""
    logits, _ = forward(params, x)
    return int(np.argmax(logits))


def sgd_step(params: ClassifierParams, grads: dict[str, np.ndarray], lr: float) -> None:
    params.out_weight -= lr * grads["out_weight"]
    params.out_bias -= lr * grads["out_bias"]
    if params.filters is not None:
        params.filters -= lr * grads["filters"]
        params.filter_bias -= lr * grads["filter_bias"]


def save_params(params: ClassifierParams, path: str | Path) -> None:
    """Write a checkpoint: a versioned .npz container of named arrays."""
    np.savez(path, __version__=np.int64(CHECKPOINT_VERSION),
             __arch__=np.str_(params.arch), **params.named_arrays())


def load_params(path: str | Path) -> ClassifierParams:
    with np.load(path) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        arch = str(data["__arch__"])
        return ClassifierParams(
            arch,
            data["out_weight"],
            data["out_bias"],
            data["filters"] if "filters" in data else None,
            data["filter_bias"] if "filter_bias" in data else None,
        )
