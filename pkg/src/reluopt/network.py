"""Trained feedforward ReLU networks: evaluation, activation traces, weight files.

A network is a stack of fully-connected hidden layers with ReLU activations
followed by one affine output layer.  Weights are fixed; the network is the
*data* of an optimization problem, not a trainable object (see ``training``
for the fitting side).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, SchemaError, ShapeError

# A neuron with |pre-activation| at or below this is flagged degenerate
# (both its output and its slack are zero).
DEGENERACY_TOL = 1e-9


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    return arr


def _as_vector(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float).ravel()
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be a 1-D vector")
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LayerParams:
    """One affine layer: ``weights @ x + bias``."""

    weights: np.ndarray  # (n_out, n_in)
    bias: np.ndarray     # (n_out,)

    def __post_init__(self):
        w = _freeze(_as_matrix(self.weights, "weights"))
        b = _freeze(_as_vector(self.bias, "bias"))
        if w.shape[0] != b.shape[0]:
            raise ShapeError(
                f"weights have {w.shape[0]} rows but bias has length {b.shape[0]}"
            )
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NonFiniteError("layer parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ReluNetwork:
    """Immutable trained network; safe to share across workers."""

    hidden_layers: tuple[LayerParams, ...]
    output_layer: LayerParams

    def __post_init__(self):
        hidden = tuple(self.hidden_layers)
        if len(hidden) < 1:
            raise ShapeError("need at least one hidden layer")
        if any(layer.n_out < 1 for layer in hidden):
            raise ShapeError("every hidden layer needs at least one neuron")
        prev = hidden[0].n_in
        for i, layer in enumerate(hidden):
            if layer.n_in != prev:
                raise ShapeError(
                    f"hidden layer {i} expects {layer.n_in} inputs, previous "
                    f"layer provides {prev}"
                )
            prev = layer.n_out
        if self.output_layer.n_in != prev:
            raise ShapeError(
                f"output layer expects {self.output_layer.n_in} inputs, last "
                f"hidden layer provides {prev}"
            )
        object.__setattr__(self, "hidden_layers", hidden)

    @property
    def input_dim(self) -> int:
        return self.hidden_layers[0].n_in

    @property
    def output_dim(self) -> int:
        return self.output_layer.n_out

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(layer.n_out for layer in self.hidden_layers)

    @property
    def num_hidden_neurons(self) -> int:
        """Total hidden-neuron count (the stacked dimension H)."""
        return sum(self.hidden_sizes)


@dataclass(frozen=True)
class ActivationTrace:
    """Per-neuron (output, slack) pairs for one input.

    For pre-activation ``a``: output ``y = max(a, 0)``, slack ``v = max(-a, 0)``,
    so ``y - v == a`` and ``min(y, v) == 0`` exactly.  Neurons with
    ``|a| <= tol`` are degenerate (both sides zero).
    """

    input: np.ndarray
    ys: tuple[np.ndarray, ...]
    vs: tuple[np.ndarray, ...]
    output: np.ndarray
    degeneracy_tol: float = DEGENERACY_TOL

    def stacked_y(self) -> np.ndarray:
        return np.concatenate(self.ys)

    def stacked_v(self) -> np.ndarray:
        return np.concatenate(self.vs)

    def degenerate_indices(self) -> np.ndarray:
        """Stacked indices of neurons with zero output and zero slack."""
        y = self.stacked_y()
        v = self.stacked_v()
        return np.flatnonzero((y <= self.degeneracy_tol) & (v <= self.degeneracy_tol))

    @property
    def is_degenerate(self) -> bool:
        return self.degenerate_indices().size > 0


def _check_input(net: ReluNetwork, d) -> np.ndarray:
    d = _as_vector(d, "input")
    if d.shape[0] != net.input_dim:
        raise ShapeError(
            f"input has length {d.shape[0]}, network expects {net.input_dim}"
        )
    if not np.isfinite(d).all():
        raise NonFiniteError("network input must be finite")
    return d


def forward(net: ReluNetwork, d) -> np.ndarray:
    """Evaluate the network at a single input."""
    x = _check_input(net, d)
    for layer in net.hidden_layers:
        x = np.maximum(layer.weights @ x + layer.bias, 0.0)
    return net.output_layer.weights @ x + net.output_layer.bias


def forward_batch(net: ReluNetwork, D: np.ndarray) -> np.ndarray:
    """Evaluate the network at many inputs (rows of ``D``); returns (n, m)."""
    X = np.asarray(D, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"expected (n, {net.input_dim}) input matrix")
    for layer in net.hidden_layers:
        X = np.maximum(X @ layer.weights.T + layer.bias, 0.0)
    return X @ net.output_layer.weights.T + net.output_layer.bias


def trace(net: ReluNetwork, d) -> ActivationTrace:
    """Propagate one input and record every neuron's (output, slack) pair."""
    x = _check_input(net, d)
    ys, vs = [], []
    h = x
    for layer in net.hidden_layers:
        a = layer.weights @ h + layer.bias
        y = np.maximum(a, 0.0)
        v = np.maximum(-a, 0.0)
        ys.append(y)
        vs.append(v)
        h = y
    out = net.output_layer.weights @ h + net.output_layer.bias
    return ActivationTrace(input=x, ys=tuple(ys), vs=tuple(vs), output=out)


# ---------------------------------------------------------------------------
# Weight files.  JSON document; floats serialize with shortest round-trip
# decimals, so load(save(net)) is bit-exact.

def _layer_to_json(layer: LayerParams) -> dict:
    return {"weights": layer.weights.tolist(), "bias": layer.bias.tolist()}


def _layer_from_json(obj, name: str) -> LayerParams:
    if not isinstance(obj, dict) or "weights" not in obj or "bias" not in obj:
        raise SchemaError(f"{name} must be an object with 'weights' and 'bias'")
    try:
        return LayerParams(np.array(obj["weights"], dtype=float),
                           np.array(obj["bias"], dtype=float))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ShapeError, NonFiniteError)):
            raise
        raise SchemaError(f"{name} holds non-numeric data: {exc}") from exc


def save_network(net: ReluNetwork, path) -> None:
    doc = {
        "input_dim": net.input_dim,
        "output_dim": net.output_dim,
        "hidden_layers": [_layer_to_json(l) for l in net.hidden_layers],
        "output_layer": _layer_to_json(net.output_layer),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_network(path) -> ReluNetwork:
    """Load a weight file.  Raises FileNotFoundError, SchemaError, ShapeError
    or NonFiniteError depending on what is wrong."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}") from exc
    for key in ("input_dim", "output_dim", "hidden_layers", "output_layer"):
        if key not in doc:
            raise SchemaError(f"weight file missing field '{key}'")
    hidden = [_layer_from_json(h, f"hidden_layers[{i}]")
              for i, h in enumerate(doc["hidden_layers"])]
    output = _layer_from_json(doc["output_layer"], "output_layer")
    net = ReluNetwork(hidden_layers=tuple(hidden), output_layer=output)
    if net.input_dim != doc["input_dim"] or net.output_dim != doc["output_dim"]:
        raise ShapeError(
            "declared input/output dims do not match the layer shapes"
        )
    return net
