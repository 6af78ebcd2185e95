"""Stacked matrix form of the network optimization problem.

The problem over a trained network

    minimize  cost(output)   s.t.  d in domain,  hidden ReLU dynamics

is rewritten over the stacked hidden outputs y and slacks v as

    minimize  c'y + obj_offset
    s.t.      A d >= f
              V d + W y + b = v
              0 <= y  complementary to  v >= 0

where, for a network with layer weights W^i and biases b^i, the layer-1 rows
of V hold -W^1, W holds the identity minus the strictly block-subdiagonal
layer couplings (row block i carries -W^i against layer i-1's y), and
b = -(stacked biases).  With that choice, ``V d + W y + b = v`` is exactly
``y^i - W^i y^{i-1} - b^i = v^i``, which every activation trace satisfies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .network import ReluNetwork, _as_vector


@dataclass(frozen=True)
class InputDomain:
    """Box bounds on the network input, optionally with a fixed total
    ``sum(d) == equality_total``."""

    lower: np.ndarray
    upper: np.ndarray
    equality_total: float | None = None

    def __post_init__(self):
        lo = _as_vector(self.lower, "lower")
        hi = _as_vector(self.upper, "upper")
        if lo.shape != hi.shape:
            raise ShapeError("lower and upper bounds must have equal length")
        if np.any(lo > hi):
            raise DomainError("lower bound exceeds upper bound")
        if self.equality_total is not None:
            total = float(self.equality_total)
            if not (lo.sum() - 1e-12 <= total <= hi.sum() + 1e-12):
                raise DomainError(
                    f"total {total} outside [{lo.sum()}, {hi.sum()}]"
                )
            object.__setattr__(self, "equality_total", total)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, d: np.ndarray, tol: float = 1e-9) -> bool:
        d = np.asarray(d, dtype=float)
        ok = bool(np.all(d >= self.lower - tol) and np.all(d <= self.upper + tol))
        if ok and self.equality_total is not None:
            ok = abs(d.sum() - self.equality_total) <= tol * max(1.0, abs(self.equality_total))
        return ok

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform box sample; if a total is fixed, the sample is moved along
        the segment towards the matching box corner so the sum is exact and
        the bounds still hold."""
        d = rng.uniform(self.lower, self.upper)
        if self.equality_total is None:
            return d
        total = d.sum()
        target = self.equality_total
        if total < target:
            room = self.upper.sum() - total
            t = 0.0 if room <= 0 else (target - total) / room
            d = d + t * (self.upper - d)
        elif total > target:
            room = total - self.lower.sum()
            t = 0.0 if room <= 0 else (total - target) / room
            d = d + t * (self.lower - d)
        return d


@dataclass(frozen=True)
class CostSpec:
    """Affine cost on the network output: linear @ output + offset."""

    linear: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "linear", _as_vector(self.linear, "cost.linear"))
        object.__setattr__(self, "offset", float(self.offset))


@dataclass(frozen=True)
class GeneralForm:
    """Matrices of the stacked problem; immutable after assembly."""

    c: np.ndarray            # (H,)
    A: np.ndarray            # (rows, n)  for A d >= f
    f: np.ndarray
    V: np.ndarray            # (H, n)
    W: np.ndarray            # (H, H)
    b: np.ndarray            # (H,)
    obj_offset: float
    layer_slices: tuple[slice, ...]   # stacked index range of each layer

    @property
    def num_hidden(self) -> int:
        return self.c.shape[0]

    @property
    def input_dim(self) -> int:
        return self.V.shape[1]

    def layer_index_map(self) -> list[tuple[int, int]]:
        """Stacked neuron index -> (layer, position within layer)."""
        out = []
        for layer, sl in enumerate(self.layer_slices):
            out.extend((layer, pos) for pos in range(sl.stop - sl.start))
        return out

    def split_layers(self, stacked: np.ndarray) -> list[np.ndarray]:
        return [stacked[sl] for sl in self.layer_slices]


def assemble(net: ReluNetwork, dom: InputDomain, cost: CostSpec) -> GeneralForm:
    """Build the stacked general form for a network, domain and output cost."""
    n = net.input_dim
    if dom.dim != n:
        raise ShapeError(f"domain dim {dom.dim} != network input dim {n}")
    if cost.linear.shape[0] != net.output_dim:
        raise ShapeError(
            f"cost has {cost.linear.shape[0]} terms, network outputs "
            f"{net.output_dim}"
        )

    sizes = net.hidden_sizes
    H = sum(sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    slices = tuple(slice(int(offsets[i]), int(offsets[i + 1]))
                   for i in range(len(sizes)))

    V = np.zeros((H, n))
    V[slices[0], :] = -net.hidden_layers[0].weights
    W = np.eye(H)
    for i in range(1, len(sizes)):
        W[slices[i], slices[i - 1]] = -net.hidden_layers[i].weights
    b = -np.concatenate([layer.bias for layer in net.hidden_layers])

    c = np.zeros(H)
    c[slices[-1]] = net.output_layer.weights.T @ cost.linear
    obj_offset = float(cost.linear @ net.output_layer.bias) + cost.offset

    rows = [np.eye(n), -np.eye(n)]
    rhs = [dom.lower, -dom.upper]
    if dom.equality_total is not None:
        rows.append(np.ones((1, n)))
        rows.append(-np.ones((1, n)))
        rhs.append(np.array([dom.equality_total]))
        rhs.append(np.array([-dom.equality_total]))
    A = np.vstack(rows)
    f = np.concatenate(rhs)

    return GeneralForm(c=c, A=A, f=f, V=V, W=W, b=b, obj_offset=obj_offset,
                       layer_slices=slices)


def objective_value(gf: GeneralForm, y: np.ndarray) -> float:
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != gf.num_hidden:
        raise ShapeError(f"expected stacked y of length {gf.num_hidden}")
    return float(gf.c @ y) + gf.obj_offset


def equality_residual(gf: GeneralForm, d: np.ndarray, y: np.ndarray,
                      v: np.ndarray) -> float:
    """max |V d + W y + b - v|; ~0 for any stacked activation trace."""
    return float(np.abs(gf.V @ d + gf.W @ y + gf.b - v).max())


def dump_coordinate(gf: GeneralForm, fh) -> None:
    """Write the matrices in `name row col value` coordinate text format."""
    def emit(name, arr):
        arr = np.atleast_2d(arr)
        for (i, j), val in np.ndenumerate(arr):
            if val != 0.0:
                fh.write(f"{name} {i} {j} {val!r}\n")

    for name in ("c", "A", "f", "V", "W", "b"):
        emit(name, getattr(gf, name))
    fh.write(f"obj_offset 0 0 {gf.obj_offset!r}\n")
