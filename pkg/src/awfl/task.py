"""Synthetic classification task, non-IID sharding and a small numpy MLP.

Models are flat parameter vectors; ``MlpSpec`` knows how to slice them into
layers. ``hidden=0`` gives multinomial logistic regression (convex).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .wireless import STREAM_DATA, STREAM_INIT, STREAM_TRAIN, stream_rng


class TaskConfigError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be N x D with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels must lie in 0..C-1")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)

    def save(self, path) -> None:
        np.savez(path, features=self.features, labels=self.labels, n_classes=self.n_classes)

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as z:
            return cls(z["features"], z["labels"], int(z["n_classes"]))


def class_means(C: int, D: int, separation: float, seed: int) -> np.ndarray:
    """Cluster centres forming a regular simplex: every centre sits exactly
    ``separation`` away from each pairwise decision boundary."""
    rng = stream_rng(seed, STREAM_DATA, 0)
    if D >= C:
        q, _ = np.linalg.qr(rng.standard_normal((D, C)))
        return separation * math.sqrt(2.0) * q.T
    # not enough dimensions for orthogonal centres; random directions instead
    v = rng.standard_normal((C, D))
    return 2.0 * separation * v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_synthetic(C: int, D: int, per_class: int, seed: int, separation: float = 3.0,
                       draw: int = 0) -> Dataset:
    """Gaussian clusters with identity covariance, ``per_class`` points each.

    ``draw`` selects an independent sample from the same clusters (0 for the
    training set, 1 for a test set, ...). Rows are ordered by class.
    """
    if min(C, D, per_class) < 1:
        raise ValueError("C, D and per_class must be >= 1")
    means = class_means(C, D, separation, seed)
    rng = stream_rng(seed, STREAM_DATA, 1 + draw)
    labels = np.repeat(np.arange(C), per_class)
    x = means[labels] + rng.standard_normal((C * per_class, D))
    return Dataset(x, labels, C)


def nearest_centroid_accuracy(train: Dataset, test: Dataset) -> float:
    cent = np.stack([train.features[train.labels == c].mean(axis=0) for c in range(train.n_classes)])
    d = ((test.features[:, None, :] - cent[None]) ** 2).sum(axis=2)
    return float(np.mean(d.argmin(axis=1) == test.labels))


@dataclass
class ShardPlan:
    """``assignment[k]`` lists shard ids for client ``k`` (1-based);
    ``shards[s]`` holds the row indices of shard ``s``."""

    assignment: dict
    d: int
    shards: list
    shard_labels: list

    def to_json(self) -> str:
        return json.dumps({
            "d": self.d,
            "assignment": {str(k): v for k, v in self.assignment.items()},
            "shards": [s.tolist() for s in self.shards],
            "shard_labels": self.shard_labels,
        })

    @classmethod
    def from_json(cls, text: str) -> "ShardPlan":
        raw = json.loads(text)
        return cls({int(k): v for k, v in raw["assignment"].items()}, raw["d"],
                   [np.asarray(s, dtype=np.int64) for s in raw["shards"]], raw["shard_labels"])

    def client_indices(self, k: int) -> np.ndarray:
        return np.concatenate([self.shards[s] for s in self.assignment[k]])

    def audit(self, ds: Dataset) -> None:
        """Raise if the plan is not an exact, label-distinct partition."""
        sizes = {len(s) for s in self.shards}
        if len(sizes) != 1:
            raise AssertionError(f"unequal shard sizes {sizes}")
        used = np.concatenate([self.client_indices(k) for k in self.assignment])
        if len(used) != len(set(used.tolist())):
            raise AssertionError("shards overlap")
        if len(used) != len(ds):
            raise AssertionError("shards do not cover the dataset")
        for k, ids in self.assignment.items():
            labels = [self.shard_labels[s] for s in ids]
            if len(ids) != self.d or len(set(labels)) != self.d:
                raise AssertionError(f"client {k} holds labels {labels}")
            for s in ids:
                if np.any(ds.labels[self.shards[s]] != self.shard_labels[s]):
                    raise AssertionError(f"shard {s} mixes labels")


def partition_non_iid(ds: Dataset, K: int, d: int, seed: int) -> ShardPlan:
    """Split every class into ``d*K/C`` shards and deal ``d`` distinct-label
    shards to each client."""
    C = ds.n_classes
    if not 1 <= d <= C:
        raise TaskConfigError(f"d must lie in 1..{C}, got {d}")
    if (d * K) % C:
        raise TaskConfigError(f"d*K = {d * K} is not divisible by the number of classes {C}")
    m = d * K // C
    counts = np.bincount(ds.labels, minlength=C)
    if np.any(counts % m):
        raise TaskConfigError(f"class sizes {counts.tolist()} are not divisible by {m} shards")
    rng = stream_rng(seed, STREAM_DATA, 100)
    label_order = rng.permutation(C)
    shards, shard_labels = [], []
    for c in label_order:
        rows = rng.permutation(np.flatnonzero(ds.labels == c))
        shards.extend(np.split(rows, m))
        shard_labels.extend([int(c)] * m)
    # shard i carries label block i // m, and m <= K, so positions k, k+K, ...
    # always land in different blocks
    clients = rng.permutation(K) + 1
    assignment = {int(clients[j]): [j + i * K for i in range(d)] for j in range(K)}
    return ShardPlan(dict(sorted(assignment.items())), d, shards, shard_labels)


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes ``D -> H -> C`` (``hidden=0``: no hidden layer)."""

    n_in: int
    hidden: int
    n_out: int

    @property
    def shapes(self):
        if self.hidden == 0:
            return [(self.n_in, self.n_out), (self.n_out,)]
        return [(self.n_in, self.hidden), (self.hidden,), (self.hidden, self.n_out), (self.n_out,)]

    @property
    def parameter_count(self) -> int:
        return sum(math.prod(s) for s in self.shapes)

    @property
    def size_bits(self) -> int:
        return 32 * self.parameter_count

    def unpack(self, theta):
        out, i = [], 0
        for s in self.shapes:
            n = math.prod(s)
            out.append(theta[i:i + n].reshape(s))
            i += n
        return out

    def init(self, seed: int) -> np.ndarray:
        """Uniform in +-1/sqrt(fan_in) for weights and biases alike."""
        rng = stream_rng(seed, STREAM_INIT)
        parts = []
        fan_in = self.n_in
        for s in self.shapes:
            if len(s) == 2:
                fan_in = s[0]
            bound = 1.0 / math.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=math.prod(s)))
        return np.concatenate(parts)

    def logits(self, theta, X):
        if self.hidden == 0:
            W, b = self.unpack(theta)
            return X @ W + b
        W1, b1, W2, b2 = self.unpack(theta)
        return np.maximum(X @ W1 + b1, 0.0) @ W2 + b2

    def loss_grad(self, theta, X, y, weights=None):
        """Mean (or ``weights``-weighted) softmax cross-entropy and its gradient."""
        n = X.shape[0]
        wts = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
        if self.hidden == 0:
            W, b = self.unpack(theta)
            z = X @ W + b
        else:
            W1, b1, W2, b2 = self.unpack(theta)
            a = X @ W1 + b1
            h = np.maximum(a, 0.0)
            z = h @ W2 + b2
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        loss = float(np.dot(wts, lse - z[np.arange(n), y]))
        dz = np.exp(z - lse[:, None])
        dz[np.arange(n), y] -= 1.0
        dz *= wts[:, None]
        if self.hidden == 0:
            grads = [X.T @ dz, dz.sum(axis=0)]
        else:
            dh = (dz @ W2.T) * (a > 0)
            grads = [X.T @ dh, dh.sum(axis=0), h.T @ dz, dz.sum(axis=0)]
        return loss, np.concatenate([g.ravel() for g in grads])


@dataclass
class MlpModel:
    """A parameter vector bound to its layer layout."""

    spec: MlpSpec
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.spec.parameter_count,):
            raise ValueError(f"expected {self.spec.parameter_count} parameters, got {self.theta.shape}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("parameters must be finite")

    @classmethod
    def initial(cls, spec: MlpSpec, seed: int) -> "MlpModel":
        return cls(spec, spec.init(seed))

    @property
    def parameter_count(self) -> int:
        return self.spec.parameter_count

    @property
    def size_bits(self) -> int:
        return self.spec.size_bits

    def layers(self):
        return self.spec.unpack(self.theta)


def local_train(spec: MlpSpec, theta, X, y, steps: int, lr: float, batch: int,
                rng: np.random.Generator) -> np.ndarray:
    """``steps`` mini-batch SGD updates; returns a new parameter vector."""
    theta = np.array(theta, dtype=np.float64, copy=True)
    n = X.shape[0]
    for _ in range(steps):
        idx = rng.choice(n, size=min(batch, n), replace=False)
        _, g = spec.loss_grad(theta, X[idx], y[idx])
        theta -= lr * g
    return theta


def evaluate(spec: MlpSpec, theta, ds: Dataset):
    """Mean cross-entropy and top-1 accuracy."""
    loss, _ = spec.loss_grad(theta, ds.features, ds.labels)
    acc = float(np.mean(spec.logits(theta, ds.features).argmax(axis=1) == ds.labels))
    return loss, acc


def global_grad_norm_sq(spec: MlpSpec, theta, ds: Dataset, weights=None) -> float:
    _, g = spec.loss_grad(theta, ds.features, ds.labels, weights)
    return float(g @ g)


# ---------------------------------------------------------------- tasks for the engine

@dataclass
class ClassificationTask:
    """Synthetic non-IID classification as seen by the training engine."""

    train: Dataset
    test: Dataset
    plan: ShardPlan
    spec: MlpSpec
    lr: float = 0.01
    batch: int = 10
    local_steps: int = 5
    seed: int = 0
    _client_data: dict = field(default_factory=dict, repr=False)

    @classmethod
    def synthetic(cls, K: int, C: int = 10, D: int = 20, hidden: int = 32, per_class: int = 500,
                  test_per_class: int = 100, d: int = 5, separation: float = 3.0,
                  lr: float = 0.01, batch: int = 10, local_steps: int = 5, seed: int = 0):
        train = generate_synthetic(C, D, per_class, seed, separation, draw=0)
        test = generate_synthetic(C, D, test_per_class, seed, separation, draw=1)
        plan = partition_non_iid(train, K, d, seed)
        return cls(train, test, plan, MlpSpec(D, hidden, C), lr, batch, local_steps, seed)

    @property
    def model_size_bits(self) -> int:
        return self.spec.size_bits

    def initial_params(self) -> np.ndarray:
        return self.spec.init(self.seed)

    def client_data(self, k: int):
        if k not in self._client_data:
            idx = self.plan.client_indices(k)
            self._client_data[k] = (self.train.features[idx], self.train.labels[idx])
        return self._client_data[k]

    def local_update(self, theta, k: int, rnd: int) -> np.ndarray:
        X, y = self.client_data(k)
        rng = stream_rng(self.seed, STREAM_TRAIN, k, rnd)
        return local_train(self.spec, theta, X, y, self.local_steps, self.lr, self.batch, rng)

    def metrics(self, theta):
        """``(train_loss, test_accuracy, grad_norm_sq)`` of a global model."""
        loss, g = self.spec.loss_grad(theta, self.train.features, self.train.labels)
        _, acc = evaluate(self.spec, theta, self.test)
        return loss, acc, float(g @ g)


@dataclass
class QuadraticTask:
    """Client ``k`` minimises ``0.5*||x - c_k||^2`` with plain gradient steps.

    Deterministic, so protocol traces can be unrolled by hand.
    """

    centers: np.ndarray
    lr: float = 0.1
    local_steps: int = 1
    x0: np.ndarray | None = None
    model_size_bits: int = 32

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))

    def initial_params(self):
        return np.zeros(self.centers.shape[1]) if self.x0 is None else np.array(self.x0, dtype=np.float64)

    def local_update(self, x, k: int, rnd: int):
        x = np.array(x, dtype=np.float64, copy=True)
        for _ in range(self.local_steps):
            x -= self.lr * (x - self.centers[k - 1])
        return x

    def metrics(self, x):
        diff = x - self.centers
        loss = 0.5 * float(np.mean(np.sum(diff ** 2, axis=1)))
        g = diff.mean(axis=0)
        return loss, float("nan"), float(g @ g)
