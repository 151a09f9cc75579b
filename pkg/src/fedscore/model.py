"""Desk-scale models, local SGD training, evaluation and parameter averaging.

Models are stored as flat float64 parameter vectors. Two architectures are
supported:

``logistic``
    Multinomial logistic regression in reference-class form: class 0 has a
    fixed logit of zero and the remaining ``C - 1`` classes carry a weight
    column and a bias, giving ``(d + 1) * (C - 1)`` parameters.
``mlp``
    Fully connected ReLU network with the configured hidden widths and a
    ``C``-way linear output layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with integer labels in ``[0, num_classes)``.

    ``meta`` carries bookkeeping such as realized label-flip counts; it is
    not used by training.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ConfigurationError("features must be a 2-D array")
        if y.shape != (x.shape[0],):
            raise ConfigurationError("labels must have one entry per feature row")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be at least 2")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ConfigurationError("label out of range")
        if not np.all(np.isfinite(x)):
            raise ConfigurationError("features must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)

    def with_labels(self, labels, **meta):
        return LabeledDataset(self.features, labels, self.num_classes, {**self.meta, **meta})


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "logistic"
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.kind == "logistic" and self.hidden:
            raise ConfigurationError("logistic model takes no hidden layers")
        if self.kind == "mlp" and (not self.hidden or min(self.hidden) < 1):
            raise ConfigurationError("mlp requires positive hidden sizes")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def layer_shapes(self, d, num_classes):
        if self.kind == "logistic":
            return [(d, num_classes - 1)]
        sizes = [d, *self.hidden, num_classes]
        return list(zip(sizes[:-1], sizes[1:]))

    def dim(self, d, num_classes):
        return sum((i + 1) * o for i, o in self.layer_shapes(d, num_classes))


@dataclass(frozen=True)
class TrainConfig:
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    model: ModelSpec = ModelSpec()

    def __post_init__(self):
        if int(self.local_epochs) < 1:
            raise ConfigurationError("local_epochs must be >= 1")
        if int(self.batch_size) < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if not self.weight_decay >= 0:
            raise ConfigurationError("weight_decay must be nonnegative")


class Utility(NamedTuple):
    accuracy: float
    loss: float


def _layers(params, spec, d, num_classes):
    """Split a flat vector into (W, b) views, in layer order."""
    out = []
    pos = 0
    for fan_in, fan_out in spec.layer_shapes(d, num_classes):
        W = params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def _check_dim(params, spec, data):
    expected = spec.dim(data.dim, data.num_classes)
    if params.ndim != 1 or params.shape[0] != expected:
        raise ConfigurationError(
            f"parameter vector has {params.size} entries, {spec.kind} model on "
            f"d={data.dim}, C={data.num_classes} needs {expected}"
        )


def init_params(spec, d, num_classes, seed):
    """He-style random initialization (scaled down for the logistic model)."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.dim(d, num_classes))
    for W, _ in _layers(params, spec, d, num_classes):
        scale = 0.01 if spec.kind == "logistic" else np.sqrt(2.0 / W.shape[0])
        W[...] = rng.normal(0.0, scale, size=W.shape)
    return params


def _logits(layers, x, kind):
    acts = [x]
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    if kind == "logistic":
        h = np.concatenate([np.zeros((h.shape[0], 1)), h], axis=1)
    return h, acts


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(params, data, spec=ModelSpec()):
    """Mean cross-entropy over ``data`` and its gradient w.r.t. ``params``."""
    params = np.asarray(params, dtype=np.float64)
    _check_dim(params, spec, data)
    grad = np.zeros_like(params)
    loss = _loss_grad_into(params, grad, data.features, data.labels, spec, data.dim, data.num_classes)
    return loss, grad


def _loss_grad_into(params, grad, x, y, spec, d, num_classes):
    layers = _layers(params, spec, d, num_classes)
    glayers = _layers(grad, spec, d, num_classes)
    logits, acts = _logits(layers, x, spec.kind)
    logp = _log_softmax(logits)
    n = x.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, y].mean()
    delta = np.exp(logp)
    delta[rows, y] -= 1.0
    delta /= n
    if spec.kind == "logistic":
        delta = delta[:, 1:]
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW, gb = glayers[i]
        np.matmul(acts[i].T, delta, out=gW)
        gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W.T) * (acts[i] > 0)
    return float(loss)


def train_local(start, data, cfg, seed):
    """Run ``cfg.local_epochs`` epochs of mini-batch SGD from ``start``.

    Momentum and weight decay follow the usual heavy-ball convention
    (``buf = momentum * buf + grad + wd * w``; ``w -= lr * buf``). Batches are
    drawn from a fresh permutation each epoch using ``seed``. Returns a new
    vector; ``start`` is left untouched.
    """
    start = np.asarray(start, dtype=np.float64)
    if len(data) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    spec = cfg.model
    _check_dim(start, spec, data)
    w = start.copy()
    grad = np.empty_like(w)
    buf = None
    rng = np.random.default_rng(seed)
    n = len(data)
    bs = int(cfg.batch_size)
    x_all, y_all = data.features, data.labels
    for epoch in range(int(cfg.local_epochs)):
        order = rng.permutation(n)
        for batch, lo in enumerate(range(0, n, bs)):
            idx = order[lo:lo + bs]
            loss = _loss_grad_into(w, grad, x_all[idx], y_all[idx], spec, data.dim, data.num_classes)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch}")
            if cfg.weight_decay:
                grad += cfg.weight_decay * w
            if cfg.momentum:
                if buf is None:
                    buf = grad.copy()
                else:
                    buf *= cfg.momentum
                    buf += grad
                step = buf
            else:
                step = grad
            w -= cfg.learning_rate * step
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite parameters after training")
    return w


def predict(params, features, num_classes, spec=ModelSpec()):
    features = np.asarray(features, dtype=np.float64)
    layers = _layers(np.asarray(params, dtype=np.float64), spec, features.shape[1], num_classes)
    logits, _ = _logits(layers, features, spec.kind)
    return logits.argmax(axis=1)


def evaluate(params, data, spec=ModelSpec()):
    """Accuracy and mean cross-entropy of ``params`` on ``data``."""
    params = np.asarray(params, dtype=np.float64)
    if len(data) == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    _check_dim(params, spec, data)
    layers = _layers(params, spec, data.dim, data.num_classes)
    logits, _ = _logits(layers, data.features, spec.kind)
    logp = _log_softmax(logits)
    correct = int(np.count_nonzero(logits.argmax(axis=1) == data.labels))
    loss = float(-logp[np.arange(len(data)), data.labels].mean())
    return Utility(correct / len(data), loss)


def weighted_average(models: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Componentwise ``sum(w_i * m_i) / sum(w_i)``.

    Weights are normalized before the sum, so a single model comes back
    bit-for-bit unchanged.
    """
    if len(models) == 0:
        raise ConfigurationError("cannot average an empty list of models")
    if len(models) != len(weights):
        raise ConfigurationError("models and weights differ in length")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigurationError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ConfigurationError("weights sum to zero")
    stack = np.stack([np.asarray(m, dtype=np.float64) for m in models])
    if stack.ndim != 2:
        raise ConfigurationError("models must be 1-D parameter vectors of equal length")
    w = w / total
    out = w[0] * stack[0]
    for wi, m in zip(w[1:], stack[1:]):
        out = out + wi * m
    return out
