"""Domain discrepancy between a selected subset and the task set.

The discrepancy is the proxy A-distance ``2 * (1 - 2 * err)`` where ``err`` is
the (symmetrized) held-out error of a linear logistic classifier trained to
tell source samples from target samples. Also here: a nearest-centroid
downstream proxy and the seeded Gaussian-mixture generator used by the
synthetic benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError, ValidationError
from .vecstore import EmbeddingPool, normalize

MIN_DOMAIN_SAMPLES = 20
LOSS_SLACK = 1e-9
MAX_HALVINGS = 10


@dataclass(eq=False)
class LinearDomainClassifier:
    weights: np.ndarray
    bias: float
    epochs: int
    learning_rate: float
    final_loss: float
    loss_history: list[float] = field(default_factory=list)

    def decision(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.decision(x) > 0).astype(np.int64)


@dataclass(frozen=True)
class DiscrepancyEstimate:
    proxy_a_distance: float
    classifier_holdout_error: float  # symmetrized, in [0, 0.5]
    raw_holdout_error: float
    n_source: int
    n_target: int
    seed: int


def _split(params: np.ndarray) -> tuple[np.ndarray, float]:
    return params[:-1], float(params[-1])


def logistic_loss(params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Mean logistic loss; ``params`` is the weight vector with the bias appended."""
    w, b = _split(np.asarray(params, dtype=np.float64))
    z = np.asarray(x, dtype=np.float64) @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def classifier_gradient(params: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`logistic_loss`, laid out like ``params``."""
    params = np.asarray(params, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.isfinite(params).all() and np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("non-finite input to classifier_gradient")
    w, b = _split(params)
    resid = _sigmoid(x @ w + b) - y
    n = len(y)
    return np.concatenate([x.T @ resid / n, [resid.sum() / n]])


def train_domain_classifier(
    x: np.ndarray, y: np.ndarray, epochs: int = 200, learning_rate: float = 1.0
) -> LinearDomainClassifier:
    """Full-batch gradient descent from zero weights.

    An epoch whose step would raise the loss by more than ``LOSS_SLACK`` is
    retried with the step halved, at most ``MAX_HALVINGS`` times; the reduced
    step is kept for later epochs.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    params = np.zeros(x.shape[1] + 1)
    lr = float(learning_rate)
    loss = logistic_loss(params, x, y)
    history = [loss]
    for _ in range(epochs):
        grad = classifier_gradient(params, x, y)
        for _ in range(MAX_HALVINGS + 1):
            trial = params - lr * grad
            trial_loss = logistic_loss(trial, x, y)
            if not np.isfinite(trial_loss):
                raise TrainingError("non-finite training loss")
            if trial_loss <= loss + LOSS_SLACK:
                break
            lr /= 2.0
        else:
            raise TrainingError(f"loss kept rising after {MAX_HALVINGS} step halvings")
        params, loss = trial, trial_loss
        history.append(loss)
    w, b = _split(params)
    return LinearDomainClassifier(w, b, epochs, lr, loss, history)


def estimate_discrepancy(
    source: EmbeddingPool,
    target: EmbeddingPool,
    train_fraction: float = 0.5,
    epochs: int = 200,
    learning_rate: float = 1.0,
    seed: int = 0,
) -> DiscrepancyEstimate:
    if source.dimension != target.dimension:
        raise ValidationError(
            f"source dimension {source.dimension} != target dimension {target.dimension}"
        )
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if min(len(source), len(target)) < MIN_DOMAIN_SAMPLES:
        raise ValidationError(
            f"need at least {MIN_DOMAIN_SAMPLES} samples per domain, "
            f"got {len(source)} source / {len(target)} target"
        )
    rng = np.random.default_rng(seed)
    n = min(len(source), len(target))

    def balanced(pool: EmbeddingPool) -> np.ndarray:
        if len(pool) == n:
            return pool.vectors.astype(np.float64)
        rows = np.sort(rng.choice(len(pool), n, replace=False))
        return pool.vectors[rows].astype(np.float64)

    # one shared permutation: identical domains then yield paired train/holdout rows
    src, tgt = balanced(source), balanced(target)
    perm = rng.permutation(n)
    src, tgt = src[perm], tgt[perm]
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)

    x_train = np.vstack([src[:n_train], tgt[:n_train]])
    y_train = np.concatenate([np.zeros(n_train), np.ones(n_train)])
    x_test = np.vstack([src[n_train:], tgt[n_train:]])
    y_test = np.concatenate([np.zeros(n - n_train), np.ones(n - n_train)])

    clf = train_domain_classifier(x_train, y_train, epochs, learning_rate)
    err = float(np.mean(clf.predict(x_test) != y_test))
    sym = min(err, 1.0 - err)
    return DiscrepancyEstimate(2.0 * (1.0 - 2.0 * sym), sym, err, n, n, int(seed))


# ---------------------------------------------------------------------------
# downstream proxy
# ---------------------------------------------------------------------------


def _nearest(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", centroids, centroids)[None, :]
        - 2.0 * x @ centroids.T
    )
    return np.argmin(d2, axis=1)


def eval_downstream_proxy(
    selected: EmbeddingPool,
    train: EmbeddingPool,
    train_labels: np.ndarray,
    test: EmbeddingPool,
    test_labels: np.ndarray,
) -> float:
    """Nearest-class-mean accuracy on ``test`` after one pseudo-label refinement.

    Each selected sample takes the label of its nearest task-train class mean;
    the means are then re-estimated once over train plus the pseudo-labeled
    samples.
    """
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    if len(train_labels) != len(train) or len(test_labels) != len(test):
        raise ValidationError("label count does not match pool size")
    classes = np.unique(np.concatenate([train_labels, test_labels]))
    missing = np.setdiff1d(classes, train_labels)
    if len(missing):
        raise ValidationError(f"classes with no training samples: {missing.tolist()}")
    xt = train.vectors.astype(np.float64)
    yt = np.searchsorted(classes, train_labels)
    k = len(classes)

    def class_means(x, y):
        counts = np.bincount(y, minlength=k)
        sums = np.zeros((k, x.shape[1]))
        np.add.at(sums, y, x)
        return sums / counts[:, None]

    centroids = class_means(xt, yt)
    if len(selected):
        xs = selected.vectors.astype(np.float64)
        pseudo = _nearest(xs, centroids)
        centroids = class_means(np.vstack([xt, xs]), np.concatenate([yt, pseudo]))
    pred = classes[_nearest(test.vectors.astype(np.float64), centroids)]
    return float(np.mean(pred == test_labels))


# ---------------------------------------------------------------------------
# synthetic mixtures
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class MixtureSpec:
    means: np.ndarray
    stddev: float
    weights: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        k = len(self.means)
        if k == 0:
            raise ValidationError("mixture needs at least one component")
        if self.weights is None:
            self.weights = np.full(k, 1.0 / k)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (k,):
            raise ValidationError(f"{k} components but {self.weights.size} weights")
        if (self.weights < 0).any() or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValidationError("weights must be non-negative and sum to 1")
        if not self.stddev > 0:
            raise ValidationError(f"stddev must be positive, got {self.stddev}")
        if not np.isfinite(self.means).all():
            raise ValidationError("non-finite component mean")

    @property
    def dimension(self) -> int:
        return self.means.shape[1]


def random_unit_means(components: int, dimension: int, seed: int) -> np.ndarray:
    m = np.random.default_rng(seed).standard_normal((components, dimension))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def generate_mixture_pool(
    spec: MixtureSpec, n: int, metric: str = "cosine", id_start: int = 0
) -> tuple[EmbeddingPool, np.ndarray]:
    """``n`` i.i.d. draws; returns the pool and each sample's component index."""
    if n < 1:
        raise ValidationError(f"n must be positive, got {n}")
    rng = np.random.default_rng(spec.seed)
    comp = rng.choice(len(spec.means), size=n, p=spec.weights)
    x = spec.means[comp] + spec.stddev * rng.standard_normal((n, spec.dimension))
    pool = EmbeddingPool(np.arange(id_start, id_start + n), x, metric)
    if metric == "cosine":
        pool = normalize(pool)
    return pool, comp.astype(np.int64)
