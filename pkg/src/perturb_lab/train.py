"""SGD training with per-step perturbation, noise-free evaluation, grid search,
and multi-seed experiment execution."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import Dataset, split_cv, stratified_indices, subsample
from .embed import EmbeddingMatrix, accumulate_update, lookup
from .model import ClassifierParams, ModelConfig, backward, forward, init_params, loss, predict, sgd_step
from .perturb import PerturbConfig, perturb_example


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 16
    seed: int = 0
    dev_fraction: float | None = 0.2
    cv_folds: int | None = None
    early_metric: str = "accuracy"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.cv_folds is None:
            if self.dev_fraction is None or not 0.0 < self.dev_fraction < 1.0:
                raise ValueError("dev_fraction must be in (0, 1) when cv_folds is unset")
        elif self.cv_folds < 2:
            raise ValueError(f"cv_folds must be >= 2, got {self.cv_folds}")
        if self.early_metric != "accuracy":
            raise ValueError(f"unsupported early_metric {self.early_metric!r}")


@dataclass(frozen=True)
class DataSplits:
    train: Dataset
    dev: Dataset
    test: Dataset | None = None


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    train_accuracy: float
    dev_accuracy: float


@dataclass
class RunResult:
    dev_metric: float
    test_metric: float
    history: tuple[EpochStats, ...]
    config: dict
    params_digest: str


@dataclass
class Grid:
    p_values: tuple[float, ...] = (0.7, 0.8, 0.9, 0.95)
    sigma_values: tuple[float, ...] = (0.001, 0.01, 0.1)

    def __post_init__(self) -> None:
        self.p_values = tuple(self.p_values)
        self.sigma_values = tuple(self.sigma_values)
        if not self.p_values or not self.sigma_values:
            raise ValueError("grid must contain at least one p and one sigma value")


@dataclass(frozen=True)
class GridPoint:
    p: float | None
    sigma: float | None
    mean_dev: float
    n_runs: int


@dataclass(frozen=True)
class StrategyRow:
    strategy: str
    chosen_p: float | None
    chosen_sigma: float | None
    mean: float | None
    std: float | None
    min: float | None
    max: float | None
    n_runs: int
    metrics: tuple[float, ...] = ()


@dataclass
class ExperimentReport:
    rows: list[StrategyRow]
    metadata: dict


@dataclass(frozen=True)
class SweepRow:
    fraction: float
    strategy: str
    mean: float
    std: float


# Strategies share grid dimensions they actually use; the rest collapse.
_USES_P = {"bernoulli", "word_dropout", "semantic_dropout", "bernoulli_adv"}
_USES_SIGMA = {"gaussian", "adversarial", "gaussian_adv", "bernoulli_adv"}


def derive_seed(base_seed: int, *parts) -> int:
    """Stable per-purpose seed: hash of the base seed and a label path.

    Independent of process hash randomization, so run k's seed never depends
    on how many runs were requested.
    """
    key = ":".join([str(base_seed), *map(str, parts)])
    digest = hashlib.blake2b(key.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def holdout_split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split into (rest, held) where held has ceil(fraction * N) examples."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"holdout fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    held_idx = stratified_indices(dataset.labels(), fraction, rng)
    held_set = set(held_idx)
    rest = tuple(ex for i, ex in enumerate(dataset.examples) if i not in held_set)
    held = tuple(dataset.examples[i] for i in held_idx)
    return replace(dataset, examples=rest), replace(dataset, examples=held)


def _params_digest(params: ClassifierParams, emb: EmbeddingMatrix) -> str:
    h = hashlib.sha256()
    for name, arr in sorted(params.named_arrays().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(emb.weights.tobytes())
    return h.hexdigest()


def evaluate(params: ClassifierParams, emb: EmbeddingMatrix, dataset: Dataset) -> float:
    """Fraction of examples whose prediction matches the label. Consumes no RNG."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = sum(
        predict(params, lookup(emb, ex.tokens).values) == ex.label
        for ex in dataset.examples
    )
    return correct / len(dataset)


def predict_dataset(params: ClassifierParams, emb: EmbeddingMatrix,
                    dataset: Dataset) -> np.ndarray:
    """Predicted class per example, as an int64 vector."""
    return np.asarray(
        [predict(params, lookup(emb, ex.tokens).values) for ex in dataset.examples],
        dtype=np.int64,
    )


def train_one(dataset: Dataset | DataSplits, model_init: ModelConfig,
              emb: EmbeddingMatrix, perturb_cfg: PerturbConfig,
              train_cfg: TrainConfig) -> RunResult:
    """Train one classifier with perturbation applied to training examples only.

    Accepts either prepared :class:`DataSplits` or a bare dataset (which is
    then split into train/dev per ``train_cfg.dev_fraction``). The model with
    the best dev accuracy (earliest epoch on ties) is kept; dev and test
    evaluation never apply noise. Deterministic given the config seed.
    """
    if isinstance(dataset, Dataset):
        train_set, dev_set = holdout_split(
            dataset, train_cfg.dev_fraction, derive_seed(train_cfg.seed, "dev"))
        splits = DataSplits(train_set, dev_set, None)
    else:
        splits = dataset
    if len(splits.train) == 0 or len(splits.dev) == 0:
        raise ValueError("train and dev splits must be nonempty")

    num_classes = splits.train.num_classes
    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(model_init, emb.dim, num_classes, rng)
    emb_run = emb.copy()

    best_dev = -1.0
    best_params = params.copy()
    best_emb = emb_run.copy()
    history: list[EpochStats] = []

    n_train = len(splits.train)
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n_train)
        loss_sum = 0.0
        for start in range(0, n_train, train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            grad_acc: dict[str, np.ndarray] = {}
            emb_updates: list[tuple[tuple[int, ...], np.ndarray]] = []
            inv = 1.0 / len(batch)
            for j in batch:
                ex = splits.train.examples[int(j)]
                x = lookup(emb_run, ex.tokens)

                def loss_grad_fn(perturbed: np.ndarray) -> np.ndarray:
                    logits_0, trace_0 = forward(params, perturbed)
                    return backward(params, perturbed, ex.label, trace_0)[1]

                outcome = perturb_example(
                    perturb_cfg, emb_run, x, ex.tokens, loss_grad_fn, rng)
                logits, trace = forward(params, outcome.values)
                step_loss = loss(logits, ex.label)
                if not math.isfinite(step_loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, step {start + int(j)}")
                loss_sum += step_loss
                grads, input_grad = backward(params, outcome.values, ex.label, trace)
                for name, g in grads.items():
                    if name in grad_acc:
                        grad_acc[name] += g * inv
                    else:
                        grad_acc[name] = g * inv
                if emb_run.trainable:
                    rows = input_grad if outcome.factor is None else input_grad * outcome.factor
                    emb_updates.append((outcome.tokens, rows * inv))
            sgd_step(params, grad_acc, train_cfg.lr)
            for toks, rows in emb_updates:
                accumulate_update(emb_run, toks, rows, train_cfg.lr)

        train_acc = evaluate(params, emb_run, splits.train)
        dev_acc = evaluate(params, emb_run, splits.dev)
        history.append(EpochStats(epoch, loss_sum / n_train, train_acc, dev_acc))
        if dev_acc > best_dev:
            best_dev = dev_acc
            best_params = params.copy()
            best_emb = emb_run.copy()

    if splits.test is not None and len(splits.test) > 0:
        test_metric = evaluate(best_params, best_emb, splits.test)
    else:
        test_metric = best_dev

    config = {
        "strategy": perturb_cfg.strategy,
        "p": perturb_cfg.p,
        "sigma": perturb_cfg.sigma,
        "flip_order": perturb_cfg.flip_order,
        "arch": model_init.arch,
        "epochs": train_cfg.epochs,
        "lr": train_cfg.lr,
        "batch_size": train_cfg.batch_size,
        "seed": train_cfg.seed,
        "dev_fraction": train_cfg.dev_fraction,
        "cv_folds": train_cfg.cv_folds,
    }
    return RunResult(best_dev, test_metric, tuple(history), config,
                     _params_digest(best_params, best_emb))


def grid_points(strategy: str, grid: Grid) -> list[tuple[float | None, float | None]]:
    """Grid points relevant to a strategy; unused dimensions collapse to None."""
    ps = grid.p_values if strategy in _USES_P else (None,)
    sigmas = grid.sigma_values if strategy in _USES_SIGMA else (None,)
    return [(p, s) for p in ps for s in sigmas]


def _perturb_config(strategy: str, p: float | None, sigma: float | None,
                    flip_order: str = "descending") -> PerturbConfig:
    return PerturbConfig(strategy, p if p is not None else 1.0,
                         sigma if sigma is not None else 0.0, flip_order)


def _tuning_splits(pool: Dataset, train_cfg: TrainConfig, run_index: int) -> DataSplits:
    if train_cfg.cv_folds is not None:
        folds = split_cv(pool, train_cfg.cv_folds,
                         derive_seed(train_cfg.seed, "cv-folds"))
        tr, dv = folds[run_index % train_cfg.cv_folds]
    else:
        run_seed = derive_seed(train_cfg.seed, "run", run_index)
        tr, dv = holdout_split(pool, train_cfg.dev_fraction,
                               derive_seed(run_seed, "dev"))
    return DataSplits(tr, dv, None)


def grid_search(dataset: Dataset, strategy: str, grid: Grid, train_cfg: TrainConfig,
                runs_per_point: int, *, model_init: ModelConfig, emb: EmbeddingMatrix,
                flip_order: str = "descending",
                train_fn: Callable[..., RunResult] = train_one,
                ) -> tuple[tuple[float | None, float | None], list[GridPoint]]:
    """Average dev accuracy over seeded runs per grid point; pick the best.

    Ties break toward larger p, then smaller sigma. Run seeds depend only on
    the base seed and run index, so all grid points (and all strategies) see
    the same splits and are compared paired.
    """
    if runs_per_point < 1:
        raise ValueError(f"runs_per_point must be >= 1, got {runs_per_point}")
    table = []
    for p, sigma in grid_points(strategy, grid):
        cfg = _perturb_config(strategy, p, sigma, flip_order)
        scores = []
        for r in range(runs_per_point):
            run_seed = derive_seed(train_cfg.seed, "grid", r)
            splits = _tuning_splits(dataset, train_cfg, r)
            res = train_fn(splits, model_init, emb, cfg,
                           replace(train_cfg, seed=run_seed))
            scores.append(res.dev_metric)
        table.append(GridPoint(p, sigma, float(np.mean(scores)), runs_per_point))

    def rank(point: GridPoint):
        return (point.mean_dev,
                point.p if point.p is not None else 0.0,
                -(point.sigma if point.sigma is not None else 0.0))

    best = max(table, key=rank)
    return (best.p, best.sigma), table


def run_experiment(dataset: Dataset, strategies: Sequence[str], train_cfg: TrainConfig,
                   n_runs: int = 5, *, model_init: ModelConfig, emb: EmbeddingMatrix,
                   grid: Grid | None = None, grid_runs: int = 3,
                   test_fraction: float = 0.2, flip_order: str = "descending",
                   on_row: Callable[[StrategyRow], None] | None = None,
                   ) -> ExperimentReport:
    """Tune each strategy on held-out dev data, then test it over n_runs seeds.

    A stratified test split is held out once; per strategy, grid search picks
    (p, sigma) by mean dev accuracy and the chosen point is retrained n_runs
    times with per-run seeds, reporting test accuracy mean/std/min/max. The
    baseline strategy (none) is always the first row.
    """
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    ordered = ["none"] + [s for s in dict.fromkeys(strategies) if s != "none"]
    grid = grid or Grid()
    pool, test_set = holdout_split(dataset, test_fraction,
                                   derive_seed(train_cfg.seed, "test-holdout"))
    rows: list[StrategyRow] = []
    for strategy in ordered:
        (best_p, best_sigma), _ = grid_search(
            pool, strategy, grid, train_cfg, grid_runs,
            model_init=model_init, emb=emb, flip_order=flip_order)
        cfg = _perturb_config(strategy, best_p, best_sigma, flip_order)
        metrics = []
        for k in range(n_runs):
            run_seed = derive_seed(train_cfg.seed, "final", k)
            splits = _tuning_splits(pool, train_cfg, k)
            res = train_one(DataSplits(splits.train, splits.dev, test_set),
                            model_init, emb, cfg,
                            replace(train_cfg, seed=run_seed))
            metrics.append(res.test_metric)
        arr = np.asarray(metrics)
        row = StrategyRow(strategy, best_p, best_sigma,
                          float(arr.mean()), float(arr.std()),
                          float(arr.min()), float(arr.max()),
                          n_runs, tuple(metrics))
        rows.append(row)
        if on_row is not None:
            on_row(row)
    metadata = {
        "dataset": dataset.name,
        "arch": model_init.arch,
        "n_runs": n_runs,
        "grid_runs": grid_runs,
        "base_seed": train_cfg.seed,
        "test_fraction": test_fraction,
    }
    return ExperimentReport(rows, metadata)


def fraction_sweep(dataset: Dataset, strategies: Sequence[str], fractions: Sequence[float],
                   train_cfg: TrainConfig, n_runs: int = 5, *, model_init: ModelConfig,
                   emb: EmbeddingMatrix, grid: Grid | None = None, grid_runs: int = 3,
                   test_fraction: float = 0.2, flip_order: str = "descending",
                   ) -> list[SweepRow]:
    """Run the full experiment on stratified subsamples of the dataset,
    one per training fraction; rows are sorted by (fraction, strategy)."""
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fractions must be in (0, 1], got {f}")
    rows: list[SweepRow] = []
    for fraction in fractions:
        sub = subsample(dataset, fraction,
                        derive_seed(train_cfg.seed, "fraction", repr(fraction)))
        report = run_experiment(sub, strategies, train_cfg, n_runs,
                                model_init=model_init, emb=emb, grid=grid,
                                grid_runs=grid_runs, test_fraction=test_fraction,
                                flip_order=flip_order)
        rows.extend(SweepRow(fraction, r.strategy, r.mean, r.std)
                    for r in report.rows)
    rows.sort(key=lambda r: (r.fraction, r.strategy))
    return rows
