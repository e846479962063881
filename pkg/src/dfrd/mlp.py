"""Multi-layer perceptron shared by every teacher and student.

ReLU hidden layers, softmax output, cross-entropy loss, and plain mini-batch
gradient descent, all in numpy.  Weight matrices are stored ``(fan_in,
fan_out)`` so a batch ``X`` of shape ``(n, in_dim)`` goes through ``X @ W + b``.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError
from .rrf import rank_of

MAGIC = b"DFRDMLP1"


@dataclass(frozen=True)
class MlpConfig:
    in_dim: int
    out_dim: int
    hidden_dims: tuple[int, ...] = (256,)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if min((self.in_dim, self.out_dim) + self.hidden_dims) < 1:
            raise InvalidInputError(f"all layer sizes must be >= 1: {self}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.in_dim,) + self.hidden_dims + (self.out_dim,)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    step_size: float = 0.01
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError(f"epochs and batch_size must be >= 1: {self}")
        if self.step_size < 0:
            raise InvalidInputError(f"step_size must be >= 0: {self}")


@dataclass
class LabeledDataset:
    """Dense inputs ``x`` of shape (n, in_dim) and integer labels ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise InvalidInputError(
                f"inconsistent dataset shapes x={self.x.shape} y={self.y.shape}")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> LabeledDataset:
        return LabeledDataset(self.x[idx], self.y[idx])


@dataclass
class MlpModel:
    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def params(self) -> list[np.ndarray]:
        """Parameters in file order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> MlpModel:
        return MlpModel(self.config, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def same_params(self, other: MlpModel) -> bool:
        return (self.config.dims == other.config.dims
                and all(np.array_equal(a, b) for a, b in zip(self.params, other.params)))


def init_mlp(config: MlpConfig, rng: np.random.Generator | None = None) -> MlpModel:
    """Uniform fan-scaled weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dims = config.dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(config, weights, biases)


def zero_mlp(config: MlpConfig) -> MlpModel:
    model = init_mlp(config, np.random.default_rng(0))
    for p in model.params:
        p[...] = 0.0
    return model


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.config.in_dim:
        raise InvalidInputError(
            f"input has dimension {x.shape[-1]}, model expects {model.config.in_dim}")
    return x


def _forward(model, x):
    """Return (logits, activations); activations[0] is the input."""
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if i < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            return z, acts


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits(model: MlpModel, x) -> np.ndarray:
    x = _check_input(model, x)
    return _forward(model, x)[0]


def forward_softmax(model: MlpModel, x) -> np.ndarray:
    """Class probabilities for one input (1-D) or a batch (2-D)."""
    return softmax(logits(model, x))


def predict_rank(model: MlpModel, x) -> np.ndarray:
    return rank_of(forward_softmax(model, x))


def predict_top1(model: MlpModel, x) -> np.ndarray:
    """Rank-1 class per row of a batch (lowest index wins ties)."""
    p = forward_softmax(model, np.atleast_2d(x))
    return np.argmax(p, axis=1)


def _loss_grad_targets(model, x, targets):
    """Mean cross-entropy against a (n, C) target distribution, with gradients."""
    n = len(x)
    z, acts = _forward(model, x)
    zs = z - z.max(axis=1, keepdims=True)
    log_p = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
    loss = float(-(targets * log_p).sum() / n)
    delta = (np.exp(log_p) - targets) / n
    gw = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, gw, gb


def _onehot(y, c):
    t = np.zeros((len(y), c))
    t[np.arange(len(y)), y] = 1.0
    return t


def _check_labels(model, y):
    if len(y) and (y.min() < 0 or y.max() >= model.config.out_dim):
        raise InvalidInputError(f"labels must lie in [0,{model.config.out_dim})")


def loss_and_grad(model: MlpModel, batch: LabeledDataset):
    """Mean cross-entropy of ``batch`` and its exact gradients.

    Gradients are returned as a list aligned with :attr:`MlpModel.params`.
    """
    if len(batch) == 0:
        raise InvalidInputError("empty batch")
    x = _check_input(model, batch.x)
    _check_labels(model, batch.y)
    loss, gw, gb = _loss_grad_targets(model, x, _onehot(batch.y, model.config.out_dim))
    grads = []
    for w, b in zip(gw, gb):
        grads.extend((w, b))
    return loss, grads


def loss_and_grad_soft(model: MlpModel, x, targets):
    x = _check_input(model, x)
    loss, gw, gb = _loss_grad_targets(model, x, np.asarray(targets, dtype=np.float64))
    grads = []
    for w, b in zip(gw, gb):
        grads.extend((w, b))
    return loss, grads


def train(model: MlpModel, data: LabeledDataset, tc: TrainConfig, targets=None):
    """Mini-batch gradient descent with a fixed step size.

    The sample order is reshuffled every epoch from ``tc.shuffle_seed``.
    ``targets`` optionally replaces the 1-hot labels with a (n, C) matrix of
    soft target distributions.  Returns ``(trained_copy, per_epoch_mean_loss)``.
    """
    if len(data) == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    x = _check_input(model, data.x)
    if targets is None:
        _check_labels(model, data.y)
        t = _onehot(data.y, model.config.out_dim)
    else:
        t = np.asarray(targets, dtype=np.float64)
    out = model.copy()
    rng = np.random.default_rng(tc.shuffle_seed)
    n = len(x)
    trace = []
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gw, gb = _loss_grad_targets(out, x[idx], t[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            total += loss * len(idx)
            if tc.step_size:
                for w, g in zip(out.weights, gw):
                    w -= tc.step_size * g
                for b, g in zip(out.biases, gb):
                    b -= tc.step_size * g
        trace.append(total / n)
    return out, trace


def save_mlp(model: MlpModel, path) -> None:
    """Binary layout: magic, layer-size count and sizes (int32 LE), then f64 LE params."""
    dims = model.config.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(f"<{len(dims) + 1}i", len(dims), *dims))
        for p in model.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_mlp(path) -> MlpModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise InvalidInputError(f"{path}: not a model file (bad magic)")
    (count,) = struct.unpack_from("<i", blob, 8)
    if count < 2:
        raise InvalidInputError(f"{path}: corrupt header")
    dims = struct.unpack_from(f"<{count}i", blob, 12)
    offset = 12 + 4 * count
    config = MlpConfig(dims[0], dims[-1], tuple(dims[1:-1]))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            size = int(np.prod(shape))
            end = offset + 8 * size
            if end > len(blob):
                raise InvalidInputError(f"{path}: truncated parameter block")
            arr = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
            (weights if len(shape) == 2 else biases).append(arr)
            offset = end
    if offset != len(blob):
        raise InvalidInputError(f"{path}: trailing bytes after parameters")
    return MlpModel(config, weights, biases)
