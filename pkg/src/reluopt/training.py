"""Plain-gradient-descent trainer for price-response surrogates.

Fits a scalar-output ReLU network to (demand vector, charge) pairs by
minibatch gradient descent on the mean squared error.  Inputs and labels are
standardized internally; the standardization is folded back into the first
and last layers on export, so the returned network maps raw units.  Training
is deterministic under the seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, SchemaError, ShapeError
from .network import LayerParams, ReluNetwork, forward_batch


@dataclass
class Dataset:
    """Rows of (input vector, scalar charge)."""

    inputs: np.ndarray   # (n, dim)
    labels: np.ndarray   # (n,)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        t = np.asarray(self.labels, dtype=float).ravel()
        if X.ndim != 2:
            raise ShapeError("inputs must be a 2-D array")
        if X.shape[0] != t.shape[0]:
            raise ShapeError("inputs and labels disagree on the sample count")
        if not (np.isfinite(X).all() and np.isfinite(t).all()):
            raise NonFiniteError("dataset values must be finite")
        self.inputs = X
        self.labels = t

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    """Architecture and descent hyperparameters.

    Learning rates up to ~0.5 are stable on standardized data; 0.05-0.2 is
    the usual range.  ``batch_size=None`` means full-batch descent.
    """

    hidden_sizes: tuple[int, ...]
    learning_rate: float = 0.1
    epochs: int = 2000
    batch_size: int | None = None
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes",
                           tuple(int(w) for w in self.hidden_sizes))
        if not self.hidden_sizes or any(w < 1 for w in self.hidden_sizes):
            raise ValueError("hidden widths must be positive")
        if self.learning_rate <= 0 or self.init_scale <= 0:
            raise ValueError("learning_rate and init_scale must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def mse_loss_and_grads(layers: list[tuple[np.ndarray, np.ndarray]],
                       X: np.ndarray, targets: np.ndarray):
    """MSE of a ReLU stack (last layer affine) and its parameter gradients.

    The subgradient of ReLU at zero is taken as zero.  Returns
    ``(loss, [(dW, db), ...])`` matching the layer list.
    """
    B = X.shape[0]
    acts = [X]
    pre = None
    for W, b in layers[:-1]:
        pre = acts[-1] @ W.T + b
        acts.append(np.maximum(pre, 0.0))
    W_out, b_out = layers[-1]
    out = acts[-1] @ W_out.T + b_out
    err = out - targets.reshape(B, -1)
    loss = float(np.mean(np.sum(err ** 2, axis=1)))

    grads: list[tuple[np.ndarray, np.ndarray]] = []
    delta = 2.0 * err / B
    grads.append((delta.T @ acts[-1], delta.sum(axis=0)))
    delta = delta @ W_out
    for idx in range(len(layers) - 2, -1, -1):
        W, b = layers[idx]
        delta = delta * (acts[idx + 1] > 0.0)
        grads.append((delta.T @ acts[idx], delta.sum(axis=0)))
        delta = delta @ W
    grads.reverse()
    return loss, grads


def _init_layers(cfg: TrainConfig, input_dim: int,
                 rng: np.random.Generator) -> list:
    sizes = [input_dim, *cfg.hidden_sizes, 1]
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(n_out, n_in))
        W /= np.sqrt(n_in)
        layers.append((W, np.zeros(n_out)))
    return layers


def _fold_standardization(layers, x_mean, x_std, t_mean, t_std) -> ReluNetwork:
    (W1, b1), rest = layers[0], layers[1:-1]
    W_out, b_out = layers[-1]
    first = LayerParams(W1 / x_std, b1 - W1 @ (x_mean / x_std))
    hidden = [first] + [LayerParams(W, b) for W, b in rest]
    output = LayerParams(t_std * W_out, t_std * b_out + t_mean)
    return ReluNetwork(hidden_layers=tuple(hidden), output_layer=output)


def train(data: Dataset, cfg: TrainConfig) -> tuple[ReluNetwork, list[float]]:
    """Fit a network to the dataset; returns it with the per-epoch loss trace
    (raw-unit mean squared error over the full dataset)."""
    if len(data) == 0:
        raise ShapeError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    layers = _init_layers(cfg, data.input_dim, rng)

    x_mean = data.inputs.mean(axis=0)
    x_std = np.maximum(data.inputs.std(axis=0), 1e-12)
    t_mean = float(data.labels.mean())
    t_std = max(float(data.labels.std()), 1e-12)
    X = (data.inputs - x_mean) / x_std
    t = ((data.labels - t_mean) / t_std).reshape(-1, 1)

    n = len(data)
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)
    lr = cfg.learning_rate
    losses: list[float] = []
    for _ in range(cfg.epochs):
        if batch < n:
            order = rng.permutation(n)
        else:
            order = np.arange(n)
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            _, grads = mse_loss_and_grads(layers, X[rows], t[rows])
            layers = [(W - lr * dW, b - lr * db)
                      for (W, b), (dW, db) in zip(layers, grads)]
        epoch_loss, _ = mse_loss_and_grads(layers, X, t)
        losses.append(epoch_loss * t_std ** 2)

    net = _fold_standardization(layers, x_mean, x_std, t_mean, t_std)
    return net, losses


def evaluate(net: ReluNetwork, data: Dataset) -> tuple[float, float]:
    """(mean squared error, max absolute error) of the network on a dataset."""
    if len(data) == 0:
        raise ShapeError("cannot evaluate on an empty dataset")
    preds = forward_batch(net, data.inputs)[:, 0]
    err = preds - data.labels
    return float(np.mean(err ** 2)), float(np.abs(err).max())


# ---------------------------------------------------------------------------
# Dataset files: CSV with header d_1..d_n,charge.

def save_dataset(data: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"d_{i + 1}" for i in range(data.input_dim)] + ["charge"])
        for row, label in zip(data.inputs, data.labels):
            writer.writerow([repr(x) for x in row] + [repr(label)])


def load_dataset(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("dataset file is empty") from None
        dim = len(header) - 1
        expected = [f"d_{i + 1}" for i in range(dim)] + ["charge"]
        if header != expected:
            raise SchemaError(f"bad dataset header {header}; expected {expected}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise SchemaError(f"line {line_no}: expected {dim + 1} columns")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise SchemaError(f"line {line_no}: {exc}") from exc
    if not rows:
        return Dataset(inputs=np.empty((0, dim)), labels=np.empty(0))
    arr = np.asarray(rows)
    return Dataset(inputs=arr[:, :dim], labels=arr[:, dim])
