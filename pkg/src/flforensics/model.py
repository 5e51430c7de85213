"""Small classifiers with hand-derived gradients.

Parameters of every model kind live in one flat float64 vector. Layouts:

    LinearSoftmax:  W (C x d, row-major) | b (C)
    MLP1 (tanh):    W1 (h x d) | b1 (h) | W2 (C x h) | b2 (C)
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

LOG_CLAMP = 1e-12


class ModelKind(str, enum.Enum):
    LINEAR_SOFTMAX = "LinearSoftmax"
    MLP1 = "MLP1"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.LINEAR_SOFTMAX
    input_dim: int = 64
    num_classes: int = 10
    hidden: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.input_dim < 1 or self.num_classes < 2:
            raise ValueError("need input_dim >= 1 and num_classes >= 2")
        if self.kind is ModelKind.MLP1 and self.hidden < 1:
            raise ValueError("MLP1 needs hidden >= 1")

    @property
    def num_params(self) -> int:
        d, c, h = self.input_dim, self.num_classes, self.hidden
        if self.kind is ModelKind.LINEAR_SOFTMAX:
            return d * c + c
        return d * h + h + h * c + c


@dataclass(frozen=True)
class Example:
    input: np.ndarray
    label: int


@dataclass
class Dataset:
    """Row-stacked examples: ``X`` is (n, d) float64, ``y`` is (n,) int64."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} inputs but {self.y.shape[0]} labels")

    def __len__(self) -> int:
        return self.y.shape[0]

    def __getitem__(self, idx) -> Example:
        return Example(self.X[idx], int(self.y[idx]))

    def subset(self, idx) -> Dataset:
        return Dataset(self.X[idx], self.y[idx])

    @classmethod
    def from_examples(cls, examples, d: int | None = None) -> Dataset:
        examples = list(examples)
        if not examples:
            return cls(np.empty((0, d or 0)), np.empty(0, dtype=np.int64))
        return cls(np.stack([e.input for e in examples]), [e.label for e in examples])

    @staticmethod
    def concat(*parts: Dataset) -> Dataset:
        return Dataset(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]))


def _unpack(w: np.ndarray, spec: ModelSpec):
    d, c, h = spec.input_dim, spec.num_classes, spec.hidden
    if w.shape != (spec.num_params,):
        raise ValueError(f"parameter vector has shape {w.shape}, expected ({spec.num_params},)")
    if spec.kind is ModelKind.LINEAR_SOFTMAX:
        return w[: d * c].reshape(c, d), w[d * c :]
    o = 0
    W1 = w[o : o + h * d].reshape(h, d); o += h * d
    b1 = w[o : o + h]; o += h
    W2 = w[o : o + c * h].reshape(c, h); o += c * h
    b2 = w[o : o + c]
    return W1, b1, W2, b2


def _check_inputs(X: np.ndarray, y: np.ndarray, spec: ModelSpec):
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"input dimension {X.shape[-1]} does not match model input_dim {spec.input_dim}")
    if y.size and (y.min() < 0 or y.max() >= spec.num_classes):
        raise ValueError("label out of range")


def init_model(spec: ModelSpec) -> np.ndarray:
    a = 1.0 / np.sqrt(spec.input_dim)
    rng = np.random.default_rng(spec.seed)
    return rng.uniform(-a, a, size=spec.num_params)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits(X: np.ndarray, w: np.ndarray, spec: ModelSpec) -> np.ndarray:
    X = np.atleast_2d(X)
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"input dimension {X.shape[1]} does not match model input_dim {spec.input_dim}")
    if spec.kind is ModelKind.LINEAR_SOFTMAX:
        W, b = _unpack(w, spec)
        return X @ W.T + b
    W1, b1, W2, b2 = _unpack(w, spec)
    return np.tanh(X @ W1.T + b1) @ W2.T + b2


def predict(X: np.ndarray, w: np.ndarray, spec: ModelSpec) -> np.ndarray:
    return np.argmax(logits(X, w, spec), axis=1)


def accuracy(data: Dataset, w: np.ndarray, spec: ModelSpec) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return float(np.mean(predict(data.X, w, spec) == data.y))


def batch_loss_grad(X: np.ndarray, y: np.ndarray, w: np.ndarray, spec: ModelSpec):
    """Mean cross-entropy over the batch and its gradient w.r.t. ``w``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    _check_inputs(X, y, spec)
    n = X.shape[0]
    rows = np.arange(n)
    grad = np.empty(spec.num_params)

    if spec.kind is ModelKind.LINEAR_SOFTMAX:
        W, b = _unpack(w, spec)
        p = _softmax(X @ W.T + b)
        loss = -np.log(np.maximum(p[rows, y], LOG_CLAMP)).mean()
        delta = p
        delta[rows, y] -= 1.0
        delta /= n
        d, c = spec.input_dim, spec.num_classes
        grad[: d * c] = (delta.T @ X).ravel()
        grad[d * c :] = delta.sum(axis=0)
        return float(loss), grad

    W1, b1, W2, b2 = _unpack(w, spec)
    a = np.tanh(X @ W1.T + b1)
    p = _softmax(a @ W2.T + b2)
    loss = -np.log(np.maximum(p[rows, y], LOG_CLAMP)).mean()
    delta = p
    delta[rows, y] -= 1.0
    delta /= n
    back = (delta @ W2) * (1.0 - a * a)
    d, c, h = spec.input_dim, spec.num_classes, spec.hidden
    o = 0
    grad[o : o + h * d] = (back.T @ X).ravel(); o += h * d
    grad[o : o + h] = back.sum(axis=0); o += h
    grad[o : o + c * h] = (delta.T @ a).ravel(); o += c * h
    grad[o : o + c] = delta.sum(axis=0)
    return float(loss), grad


def ce_loss(example: Example, w: np.ndarray, spec: ModelSpec) -> float:
    x = np.asarray(example.input, dtype=np.float64).reshape(1, -1)
    y = np.array([example.label])
    _check_inputs(x, y, spec)
    p = _softmax(logits(x, w, spec))[0]
    return float(-np.log(max(p[example.label], LOG_CLAMP)))


def ce_grad(example: Example, w: np.ndarray, spec: ModelSpec) -> np.ndarray:
    return batch_loss_grad(np.reshape(example.input, (1, -1)), [example.label], w, spec)[1]


def local_train(
    data: Dataset,
    w0: np.ndarray,
    spec: ModelSpec,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
) -> np.ndarray:
    """Plain minibatch SGD (no momentum, no weight decay) with seeded shuffling."""
    if len(data) == 0:
        raise ValueError("local training needs at least one example")
    w = np.array(w0, dtype=np.float64, copy=True)
    rng = np.random.default_rng(seed)
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, g = batch_loss_grad(data.X[idx], data.y[idx], w, spec)
            w -= lr * g
    return w
