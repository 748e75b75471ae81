"""Link-prediction training: splits, negative sampling, Adam, metrics.

The trainer builds the simplicial complex and the convolution operator from
the training edges only, resamples training negatives every epoch, tracks
validation loss for early stopping, and restores the best parameters.  AUC is
the rank statistic (ties count one half); the significance test is Welch's
one-sided two-sample t statistic with the regularized incomplete beta
evaluated by continued fraction.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .complex_core import Graph
from .model import BscnetsModel, ModelConfig, VARIANTS, save_checkpoint


class TrainingError(ValueError):
    """Raised for invalid splits, configs, or diverging optimizations."""


#: learning rates searched by the grid command unless overridden
LEARNING_RATE_GRID = (0.001, 0.005, 0.008, 0.01, 0.05)

VAL_FRACTION = 0.05
TEST_FRACTION = 0.10
MIN_SPLIT_EDGES = 20


@dataclass
class TrainConfig:
    """Optimization settings shared by every run of an experiment."""

    learning_rate: float = 0.01
    max_epochs: int = 5000
    patience: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    runs: int = 20
    seed: int = 0

    def validation_errors(self) -> list[str]:
        errors = []
        if not self.learning_rate >= 0:
            errors.append(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            errors.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            errors.append(f"patience must be >= 1, got {self.patience}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                errors.append(f"{name} must lie in [0, 1), got {value}")
        if not self.eps > 0:
            errors.append(f"eps must be positive, got {self.eps}")
        if self.runs < 1:
            errors.append(f"runs must be >= 1, got {self.runs}")
        return errors

    def validate(self) -> None:
        errors = self.validation_errors()
        if errors:
            raise TrainingError("; ".join(errors))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise TrainingError(f"unknown train settings: {', '.join(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class EdgeSplit:
    """Disjoint train/val/test edges plus fixed negative pairs.

    Negatives are true non-edges of the full graph; validation and test
    negatives never overlap each other.
    """

    n: int
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    seed: int

    def train_graph(self) -> Graph:
        return Graph.from_edges(self.n, self.train_pos)


def _pack_pairs(pairs: np.ndarray, n: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return pairs[:, 0] * n + pairs[:, 1]


def _unpack_codes(codes: np.ndarray, n: int) -> np.ndarray:
    return np.column_stack([codes // n, codes % n]).astype(np.int64)


def _non_edge_codes(graph: Graph) -> np.ndarray:
    """Packed u*n+v codes of every unordered non-edge, ascending."""
    n = graph.n
    adjacent = graph.adjacency_bool
    uu, vv = np.triu_indices(n, k=1)
    keep = ~adjacent[uu, vv]
    return uu[keep] * n + vv[keep]


def sample_negatives(graph: Graph, count: int, exclude=(), seed=0) -> np.ndarray:
    """Draw `count` distinct non-edges uniformly, avoiding `exclude` pairs.

    `seed` may be an int or a numpy Generator (consumed in place, which lets
    one generator produce several dependent draws).
    """
    if count < 0:
        raise TrainingError(f"negative sample count must be >= 0, got {count}")
    codes = _non_edge_codes(graph)
    exclude = np.asarray(exclude, dtype=np.int64).reshape(-1, 2)
    if exclude.size:
        codes = codes[~np.isin(codes, _pack_pairs(exclude, graph.n))]
    if count > codes.size:
        raise TrainingError(
            f"requested {count} negatives but only {codes.size} non-edges remain"
        )
    rng = np.random.default_rng(seed)
    picked = rng.choice(codes.size, size=count, replace=False)
    return _unpack_codes(codes[picked], graph.n)


def split_edges(graph: Graph, seed: int) -> EdgeSplit:
    """Split edges 85/5/10 (train gets the rounding remainder) with fixed
    validation and test negatives of matching sizes."""
    m = graph.m
    if m < MIN_SPLIT_EDGES:
        raise TrainingError(f"need at least {MIN_SPLIT_EDGES} edges to split, got {m}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    n_val = int(m * VAL_FRACTION)
    n_test = int(m * TEST_FRACTION)
    val_pos = graph.edges[np.sort(perm[:n_val])]
    test_pos = graph.edges[np.sort(perm[n_val : n_val + n_test])]
    train_pos = graph.edges[np.sort(perm[n_val + n_test :])]
    val_neg = sample_negatives(graph, n_val, seed=rng)
    test_neg = sample_negatives(graph, n_test, exclude=val_neg, seed=rng)
    return EdgeSplit(
        n=graph.n,
        train_pos=train_pos,
        val_pos=val_pos,
        test_pos=test_pos,
        val_neg=val_neg,
        test_neg=test_neg,
        seed=seed,
    )


class _NegativePool:
    """Cached complement of the edge set for per-epoch negative draws."""

    def __init__(self, graph: Graph, reserved: np.ndarray):
        codes = _non_edge_codes(graph)
        if reserved.size:
            codes = codes[~np.isin(codes, _pack_pairs(reserved, graph.n))]
        self._codes = codes
        self._n = graph.n

    def draw(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if count > self._codes.size:
            raise TrainingError(
                f"requested {count} negatives but only {self._codes.size} remain"
            )
        picked = rng.choice(self._codes.size, size=count, replace=False)
        return _unpack_codes(self._codes[picked], self._n)


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        correct1 = 1.0 - b1**self.step_count
        correct2 = 1.0 - b2**self.step_count
        for name, grad in grads.items():
            if grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            update = (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            self.params[name] -= self.learning_rate * update


@dataclass
class TrainResult:
    """Best-validation parameters plus the per-epoch loss history."""

    model: BscnetsModel
    params: dict[str, np.ndarray]
    history: dict[str, np.ndarray]
    best_epoch: int
    best_val_loss: float
    epochs_run: int


def train(
    graph: Graph,
    features: np.ndarray,
    split: EdgeSplit,
    model_config: ModelConfig,
    train_config: TrainConfig,
    variant: str = "full",
    seed: int | None = None,
) -> TrainResult:
    """Optimize one model on a split; the complex and the convolution
    operator both come from the training edges alone."""
    model_config.validate()
    train_config.validate()
    if variant not in VARIANTS:
        raise TrainingError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    init_seed = train_config.seed if seed is None else seed

    train_graph = split.train_graph()
    model = BscnetsModel(model_config, variant, train_graph, features, seed=init_seed)
    reserved = np.vstack([split.val_neg, split.test_neg])
    pool = _NegativePool(graph, reserved)
    rng = np.random.default_rng(init_seed)
    adam = Adam(
        model.params,
        train_config.learning_rate,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        eps=train_config.eps,
    )

    best_val = math.inf
    best_epoch = -1
    best_params: dict[str, np.ndarray] = {}
    wait = 0
    train_losses: list[float] = []
    val_losses: list[float] = []

    for epoch in range(train_config.max_epochs):
        negatives = pool.draw(len(split.train_pos), rng)
        tape, loss_tensor, wrapped = model.loss(
            split.train_pos, negatives, train=True, rng=rng
        )
        train_loss = float(loss_tensor.values[0, 0])
        if not math.isfinite(train_loss):
            raise TrainingError(f"training loss diverged at epoch {epoch}")
        tape.backward(loss_tensor)
        adam.step({k: t.grad for k, t in wrapped.items()})

        _, val_tensor, _ = model.loss(split.val_pos, split.val_neg, train=False)
        val_loss = float(val_tensor.values[0, 0])
        if not math.isfinite(val_loss):
            raise TrainingError(f"validation loss diverged at epoch {epoch}")
        train_losses.append(train_loss)
        val_losses.append(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            wait = 0
        else:
            wait += 1
            if wait >= train_config.patience:
                break

    for name, values in best_params.items():
        model.params[name] = values.copy()
    return TrainResult(
        model=model,
        params=model.params,
        history={
            "train_loss": np.asarray(train_losses),
            "val_loss": np.asarray(val_losses),
        },
        best_epoch=best_epoch,
        best_val_loss=best_val,
        epochs_run=len(train_losses),
    )


def roc_auc(scores_pos, scores_neg) -> float:
    """Rank-statistic AUC: fraction of (pos, neg) pairs ordered correctly,
    ties counted one half."""
    pos = np.asarray(scores_pos, dtype=np.float64).ravel()
    neg = np.asarray(scores_neg, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise TrainingError("roc_auc needs nonempty score sets")
    merged = np.concatenate([pos, neg])
    order = np.argsort(merged, kind="mergesort")
    ordered = merged[order]
    starts = np.flatnonzero(np.concatenate(([True], ordered[1:] != ordered[:-1])))
    ends = np.concatenate((starts[1:], [merged.size]))
    average = (starts + ends + 1) / 2.0  # one-based rank averaged within ties
    ranks = np.empty(merged.size)
    ranks[order] = np.repeat(average, ends - starts)
    rank_sum = ranks[: pos.size].sum()
    return float(
        (rank_sum - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size)
    )


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz evaluation of the incomplete-beta continued fraction."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 301):
        m2 = 2 * m
        numer = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + numer * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numer / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        numer = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + numer * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numer / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            break
    return h


def _regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def _student_t_survival(t: float, dof: float) -> float:
    """P(T >= t) for Student's t with `dof` degrees of freedom."""
    x = dof / (dof + t * t)
    tail = 0.5 * _regularized_incomplete_beta(dof / 2.0, 0.5, x)
    return tail if t >= 0.0 else 1.0 - tail


def t_test_one_sided(sample_a, sample_b) -> float:
    """Welch one-sided p-value for mean(a) > mean(b).

    Zero-variance pairs degenerate to 0, 1, or 0.5 by the sign of the mean
    difference.
    """
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise TrainingError("t_test_one_sided needs at least two values per sample")
    mean_a, mean_b = a.mean(), b.mean()
    var_a = a.var(ddof=1)
    var_b = b.var(ddof=1)
    se2 = var_a / a.size + var_b / b.size
    if se2 == 0.0:
        if mean_a > mean_b:
            return 0.0
        if mean_a < mean_b:
            return 1.0
        return 0.5
    t = (mean_a - mean_b) / math.sqrt(se2)
    dof = se2**2 / (
        (var_a / a.size) ** 2 / (a.size - 1) + (var_b / b.size) ** 2 / (b.size - 1)
    )
    return _student_t_survival(t, dof)


def _worker_count() -> int:
    raw = os.environ.get("BSCNETS_THREADS", "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise TrainingError(f"BSCNETS_THREADS must be an integer, got {raw!r}") from exc
    return max(1, value)


def _summary(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean_auc": float(arr.mean()),
        "std_auc": float(arr.std()),
        "per_run": [float(v) for v in values],
    }


def run_experiment(
    dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    variants=("full",),
    resplit: bool = False,
    collect_history: bool = False,
    checkpoint_path=None,
) -> dict:
    """Train `runs` seeds per variant and report mean and std test AUC.

    `dataset` exposes `name`, `graph`, and `features`.  All runs reuse one
    split drawn from the experiment seed unless `resplit` is set, in which
    case each run resplits with its own seed.  Worker threads are capped by
    BSCNETS_THREADS (default 1).  When `checkpoint_path` is given, the
    primary variant's first run is saved there after training.
    """
    model_config.validate()
    train_config.validate()
    unknown = sorted(set(variants) - set(VARIANTS))
    if unknown:
        raise TrainingError(f"unknown variants: {', '.join(unknown)}")
    if not variants:
        raise TrainingError("need at least one variant")

    graph, features = dataset.graph, dataset.features
    base_split = split_edges(graph, train_config.seed)
    jobs = []
    for run_index in range(train_config.runs):
        run_seed = train_config.seed + 1 + run_index
        split = split_edges(graph, run_seed) if resplit else base_split
        for variant in variants:
            jobs.append((variant, run_index, run_seed, split))

    def execute(job):
        variant, run_index, run_seed, split = job
        result = train(
            graph, features, split, model_config, train_config,
            variant=variant, seed=run_seed,
        )
        auc = roc_auc(
            result.model.pair_probabilities(split.test_pos),
            result.model.pair_probabilities(split.test_neg),
        )
        if checkpoint_path is not None and variant == variants[0] and run_index == 0:
            save_checkpoint(
                checkpoint_path,
                result.model,
                meta={
                    "dataset": getattr(dataset, "name", "dataset"),
                    "split_seed": split.seed,
                    "run_seed": run_seed,
                    "test_auc": auc,
                },
            )
        history = result.history if collect_history else None
        return variant, run_index, auc, result.best_epoch, history

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(execute, jobs))
    else:
        outcomes = [execute(job) for job in jobs]

    aucs: dict[str, list[float]] = {v: [0.0] * train_config.runs for v in variants}
    best_epochs: dict[str, list[int]] = {v: [0] * train_config.runs for v in variants}
    histories: dict[str, dict[str, np.ndarray]] = {}
    for variant, run_index, auc, best_epoch, history in outcomes:
        aucs[variant][run_index] = auc
        best_epochs[variant][run_index] = best_epoch
        if history is not None and run_index == 0:
            histories[variant] = history

    primary = variants[0]
    report = {
        "dataset": getattr(dataset, "name", "dataset"),
        "runs": train_config.runs,
        **_summary(aucs[primary]),
        "best_epochs": best_epochs[primary],
        "ablation": {
            v: {**_summary(aucs[v]), "best_epochs": best_epochs[v]}
            for v in variants
            if v != primary
        },
        "config": {
            "model": model_config.to_dict(),
            "train": train_config.to_dict(),
            "variants": list(variants),
            "resplit": resplit,
        },
    }
    if "full" in variants and "only_L1" in variants and train_config.runs >= 2:
        report["significance"] = {
            "full_greater_than_only_L1_p": t_test_one_sided(
                aucs["full"], aucs["only_L1"]
            )
        }
    if collect_history:
        report["history"] = {
            v: {k: [float(x) for x in arr] for k, arr in h.items()}
            for v, h in histories.items()
        }
    return report
