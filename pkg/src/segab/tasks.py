"""Learning tasks and datasets for the training loop.

The workhorse is L2-regularized multinomial logistic regression on synthetic
Gaussian blobs: small enough that the exact optimum is computable by
full-batch descent and strongly convex, so optimality gaps and the
convergence-bound checks are meaningful.  A quadratic task supports
closed-form unit tests, and a small one-hidden-layer network provides
qualitative (non-convex) curves only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UnsupportedTaskError
from .linalg import as_generator


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _augment(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)


@dataclass(frozen=True)
class LogisticTask:
    """C-class multinomial logistic regression with an L2 penalty.

    The parameter vector stacks the (n_features + 1)-long weight rows of all
    classes (bias last).  Each device's local loss carries the same L2 term,
    so the global loss is strongly convex with modulus ``l2_reg``.
    """

    n_features: int
    n_classes: int
    l2_reg: float = 0.1

    @property
    def dim(self) -> int:
        return (self.n_features + 1) * self.n_classes

    def _mat(self, theta: np.ndarray) -> np.ndarray:
        return theta.reshape(self.n_classes, self.n_features + 1)

    def loss(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        th = self._mat(theta)
        logits = _augment(x) @ th.T
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        nll = -float(np.mean(logp[np.arange(len(y)), y]))
        return nll + 0.5 * self.l2_reg * float(theta @ theta)

    def grad(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        th = self._mat(theta)
        xa = _augment(x)
        p = _softmax(xa @ th.T)
        p[np.arange(len(y)), y] -= 1.0
        g = (p.T @ xa) / len(y)
        return g.reshape(-1) + self.l2_reg * theta

    def predict(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.argmax(_augment(x) @ self._mat(theta).T, axis=1)

    def accuracy(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(theta, x) == y))

    def smoothness_bound(self, x: np.ndarray) -> float:
        """Upper bound on the Hessian spectral norm of the local loss:
        quarter of the data Gram's top eigenvalue over the sample count,
        plus the regularizer."""
        xa = _augment(x)
        top = float(np.linalg.eigvalsh(xa.T @ xa)[-1])
        return 0.25 * top / xa.shape[0] + self.l2_reg

    @property
    def strong_convexity(self) -> float:
        return self.l2_reg


@dataclass(frozen=True)
class QuadraticTask:
    """``0.5 * ||theta - center||^2 + 0.5 * l2_reg * ||theta||^2`` (data-free).

    With ``center=None`` the loss is the pure ridge term; gradients ignore
    any mini-batch, which makes sampled and full gradients identical.
    """

    dim_: int
    center: np.ndarray | None = None
    l2_reg: float = 0.0

    @property
    def dim(self) -> int:
        return self.dim_

    def loss(self, theta, x=None, y=None) -> float:
        val = 0.5 * self.l2_reg * float(theta @ theta)
        if self.center is not None:
            d = theta - self.center
            val += 0.5 * float(d @ d)
        return val

    def grad(self, theta, x=None, y=None) -> np.ndarray:
        g = self.l2_reg * theta
        if self.center is not None:
            g = g + (theta - self.center)
        return g

    def smoothness_bound(self, x=None) -> float:
        return (1.0 if self.center is not None else 0.0) + self.l2_reg

    @property
    def strong_convexity(self) -> float:
        return (1.0 if self.center is not None else 0.0) + self.l2_reg


@dataclass(frozen=True)
class MlpTask:
    """One-hidden-layer tanh network with softmax output.

    Provided for qualitative learning curves only; it is not convex, so the
    bound machinery refuses it.
    """

    n_features: int
    n_classes: int
    n_hidden: int = 16
    l2_reg: float = 1e-3

    @property
    def dim(self) -> int:
        return self.n_hidden * (self.n_features + 1) \
            + self.n_classes * (self.n_hidden + 1)

    def _unpack(self, theta):
        h, d, c = self.n_hidden, self.n_features, self.n_classes
        w1 = theta[: h * (d + 1)].reshape(h, d + 1)
        w2 = theta[h * (d + 1):].reshape(c, h + 1)
        return w1, w2

    def _forward(self, theta, x):
        w1, w2 = self._unpack(theta)
        a1 = np.tanh(_augment(x) @ w1.T)
        return _augment(a1) @ w2.T, a1

    def loss(self, theta, x, y) -> float:
        logits, _ = self._forward(theta, x)
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        nll = -float(np.mean(logp[np.arange(len(y)), y]))
        return nll + 0.5 * self.l2_reg * float(theta @ theta)

    def grad(self, theta, x, y) -> np.ndarray:
        w1, w2 = self._unpack(theta)
        xa = _augment(x)
        a1 = np.tanh(xa @ w1.T)
        a1a = _augment(a1)
        p = _softmax(a1a @ w2.T)
        p[np.arange(len(y)), y] -= 1.0
        p /= len(y)
        g2 = p.T @ a1a
        back = (p @ w2[:, :-1]) * (1.0 - a1 ** 2)
        g1 = back.T @ xa
        return np.concatenate([g1.reshape(-1), g2.reshape(-1)]) + self.l2_reg * theta

    def predict(self, theta, x) -> np.ndarray:
        logits, _ = self._forward(theta, x)
        return np.argmax(logits, axis=1)

    def accuracy(self, theta, x, y) -> float:
        return float(np.mean(self.predict(theta, x) == y))


@dataclass
class Dataset:
    """Per-device training shards plus a shared test split.

    ``weights`` are the aggregation weights A_k / A.
    """

    features: list[np.ndarray]
    labels: list[np.ndarray]
    test_features: np.ndarray
    test_labels: np.ndarray
    seed: int
    n_classes: int

    def __post_init__(self):
        if len(self.features) != len(self.labels) or not self.features:
            raise ValueError("need one (features, labels) pair per device")
        for x, y in zip(self.features, self.labels):
            if x.shape[0] != y.shape[0] or x.shape[0] < 1:
                raise ValueError("every device needs at least one sample")

    @property
    def n_devices(self) -> int:
        return len(self.features)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([x.shape[0] for x in self.features])

    @property
    def weights(self) -> np.ndarray:
        sizes = self.sizes.astype(np.float64)
        return sizes / sizes.sum()

    @property
    def n_features(self) -> int:
        return self.features[0].shape[1]


def make_blobs_dataset(
    seed: int,
    n_devices: int,
    n_per_device: int = 120,
    n_features: int = 16,
    n_classes: int = 4,
    test_size: int = 512,
    class_radius: float = 2.0,
    rng=None,
) -> Dataset:
    """Gaussian blobs with class means on a sphere, split evenly and randomly
    across devices (IID shards)."""
    gen = as_generator(rng) if rng is not None else as_generator(seed)
    means = gen.standard_normal((n_classes, n_features))
    means *= class_radius / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(n):
        y = gen.integers(0, n_classes, n)
        x = means[y] + gen.standard_normal((n, n_features))
        return x, y

    features, labels = [], []
    for _ in range(n_devices):
        x, y = draw(n_per_device)
        features.append(x)
        labels.append(y)
    tx, ty = draw(test_size)
    return Dataset(features=features, labels=labels, test_features=tx,
                   test_labels=ty, seed=seed, n_classes=n_classes)


def pooled(dataset: Dataset):
    x = np.concatenate(dataset.features, axis=0)
    y = np.concatenate(dataset.labels, axis=0)
    return x, y


def global_loss_grad(task, dataset: Dataset, theta: np.ndarray):
    """Weighted global loss and gradient, sum_k (A_k / A) F_k."""
    w = dataset.weights
    loss = 0.0
    grad = np.zeros_like(theta)
    for r, x, y in zip(w, dataset.features, dataset.labels):
        loss += r * task.loss(theta, x, y)
        grad += r * task.grad(theta, x, y)
    return loss, grad


def solve_optimum(
    task,
    dataset: Dataset,
    grad_tol: float = 1e-12,
    max_iter: int = 20_000,
) -> np.ndarray:
    """Global-loss minimizer via deterministic full-batch descent with a
    backtracking line search.

    The task must be strongly convex; the iterate is cached on the dataset
    object keyed by the task, so repeated runs reuse it.
    """
    if isinstance(task, MlpTask):
        raise UnsupportedTaskError("the network task is not strongly convex")
    cache = getattr(dataset, "_optimum_cache", None)
    if cache is None:
        cache = {}
        dataset._optimum_cache = cache
    key = repr(task)
    if key in cache:
        return cache[key].copy()

    theta = np.zeros(task.dim)
    step = 1.0
    loss, grad = global_loss_grad(task, dataset, theta)
    for _ in range(max_iter):
        gnorm2 = float(grad @ grad)
        if np.sqrt(gnorm2) <= grad_tol:
            break
        while step > 1e-18:
            cand = theta - step * grad
            cand_loss, cand_grad = global_loss_grad(task, dataset, cand)
            if cand_loss <= loss - 0.5 * step * gnorm2:
                break
            step *= 0.5
        theta, loss, grad = cand, cand_loss, cand_grad
        step = min(step * 2.0, 1e6)
    cache[key] = theta.copy()
    return theta


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write one flat binary matrix file per device plus a manifest.

    The manifest records, per device, the sample count, the feature
    dimension, the class count, and the dataset seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    devices = []
    for k, (x, y) in enumerate(zip(dataset.features, dataset.labels)):
        fx, fy = f"device_{k}_features.npy", f"device_{k}_labels.npy"
        np.save(out / fx, x)
        np.save(out / fy, y)
        devices.append({
            "features_file": fx,
            "labels_file": fy,
            "n_samples": int(x.shape[0]),
            "n_features": int(x.shape[1]),
            "n_classes": int(dataset.n_classes),
            "seed": int(dataset.seed),
        })
    np.save(out / "test_features.npy", dataset.test_features)
    np.save(out / "test_labels.npy", dataset.test_labels)
    manifest = {
        "devices": devices,
        "test_features_file": "test_features.npy",
        "test_labels_file": "test_labels.npy",
        "seed": int(dataset.seed),
        "n_classes": int(dataset.n_classes),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_dataset(manifest_path) -> Dataset:
    path = Path(manifest_path)
    manifest = json.loads(path.read_text())
    base = path.parent
    features, labels = [], []
    for dev in manifest["devices"]:
        features.append(np.load(base / dev["features_file"]))
        labels.append(np.load(base / dev["labels_file"]))
    return Dataset(
        features=features,
        labels=labels,
        test_features=np.load(base / manifest["test_features_file"]),
        test_labels=np.load(base / manifest["test_labels_file"]),
        seed=int(manifest["seed"]),
        n_classes=int(manifest["n_classes"]),
    )
