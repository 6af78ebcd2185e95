"""DC optimal power flow with dual extraction and locational prices.

Dispatch minimizes a quadratic generation cost subject to a system-wide
power balance and PTDF line-flow limits.  Locational marginal prices come
out of the duals: the balance price, corrected per bus by the transposed
PTDF times the congestion multipliers.  This module both generates training
data (demand samples labeled with their charge) and independently validates
allocations produced by the network-based optimizer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataGenerationError, SchemaError, ShapeError
from .network import _as_vector
from .qp import INFEASIBLE, OPTIMAL, QpSpec, solve_qp
from .training import Dataset


@dataclass(frozen=True)
class GridCase:
    """Single-period grid data.  Generators share bus indexing with loads:
    non-generator buses carry p_min = p_max = 0."""

    quad_cost: np.ndarray    # diagonal of C, $/MW^2 h
    lin_cost: np.ndarray     # $/MWh
    p_min: np.ndarray        # MW
    p_max: np.ndarray        # MW
    ptdf: np.ndarray         # lines x buses
    f_max: np.ndarray        # MW
    base_load: np.ndarray    # MW
    dc_buses: tuple[int, ...]
    d_min: np.ndarray        # MW, one entry per data-center bus
    d_max: np.ndarray        # MW

    def __post_init__(self):
        vecs = {name: _as_vector(getattr(self, name), name)
                for name in ("quad_cost", "lin_cost", "p_min", "p_max",
                             "f_max", "base_load", "d_min", "d_max")}
        F = np.asarray(self.ptdf, dtype=float)
        nb = vecs["quad_cost"].shape[0]
        for name in ("lin_cost", "p_min", "p_max", "base_load"):
            if vecs[name].shape[0] != nb:
                raise ShapeError(f"{name} must have one entry per bus ({nb})")
        if F.ndim != 2 or F.shape[1] != nb:
            raise ShapeError(f"ptdf must be (lines, {nb})")
        if vecs["f_max"].shape[0] != F.shape[0]:
            raise ShapeError("f_max must have one entry per line")
        if np.any(vecs["f_max"] <= 0):
            raise ShapeError("line capacities must be positive")
        if np.any(vecs["quad_cost"] < 0):
            raise ShapeError("quadratic cost coefficients must be nonnegative")
        if np.any(vecs["p_min"] > vecs["p_max"]):
            raise ShapeError("p_min exceeds p_max")
        dc = tuple(int(b) for b in self.dc_buses)
        if len(set(dc)) != len(dc) or any(b < 0 or b >= nb for b in dc):
            raise ShapeError("dc_buses must be distinct valid bus indices")
        if vecs["d_min"].shape[0] != len(dc) or vecs["d_max"].shape[0] != len(dc):
            raise ShapeError("d_min/d_max must have one entry per data center")
        if np.any(vecs["d_min"] > vecs["d_max"]):
            raise ShapeError("d_min exceeds d_max")
        for name, val in vecs.items():
            object.__setattr__(self, name, val)
        F = np.ascontiguousarray(F)
        F.flags.writeable = False
        object.__setattr__(self, "ptdf", F)
        object.__setattr__(self, "dc_buses", dc)

    @property
    def num_buses(self) -> int:
        return self.quad_cost.shape[0]

    @property
    def num_lines(self) -> int:
        return self.ptdf.shape[0]

    def embed_demand(self, d_dc: np.ndarray) -> np.ndarray:
        """Lift a data-center demand vector to a full bus vector."""
        d_dc = _as_vector(d_dc, "d_dc")
        if d_dc.shape[0] != len(self.dc_buses):
            raise ShapeError(
                f"expected {len(self.dc_buses)} data-center demands"
            )
        d = np.zeros(self.num_buses)
        d[list(self.dc_buses)] = d_dc
        return d


@dataclass
class OpfSolution:
    status: str
    p: np.ndarray | None = None
    lambda_sys: float = np.nan
    mu_plus: np.ndarray | None = None   # upper line-limit duals
    mu_minus: np.ndarray | None = None  # lower line-limit duals
    pi: np.ndarray | None = None        # $/MWh per bus
    total_cost: float = np.nan

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def solve_opf(grid: GridCase, d: np.ndarray) -> OpfSolution:
    """Solve the dispatch QP for a bus-indexed demand vector (zeros away from
    the data-center buses) and extract prices."""
    d = _as_vector(d, "d")
    if d.shape[0] != grid.num_buses:
        raise ShapeError(f"demand must be bus-indexed ({grid.num_buses})")
    if np.any(d < -1e-9):
        raise ShapeError("demand must be nonnegative")
    off = np.ones(grid.num_buses, dtype=bool)
    off[list(grid.dc_buses)] = False
    if np.any(np.abs(d[off]) > 1e-9):
        raise ShapeError("demand placed on a non-data-center bus")

    load = grid.base_load + d
    F = grid.ptdf
    nl = grid.num_lines
    spec = QpSpec(
        q=grid.lin_cost,
        Q=np.diag(2.0 * grid.quad_cost) if np.any(grid.quad_cost) else None,
        eq_A=np.ones((1, grid.num_buses)), eq_b=np.array([load.sum()]),
        ineq_G=np.vstack([F, -F]),
        ineq_h=np.concatenate([grid.f_max + F @ load, grid.f_max - F @ load]),
        var_lower=grid.p_min, var_upper=grid.p_max,
    )
    sol = solve_qp(spec)
    if sol.status == INFEASIBLE:
        return OpfSolution(status=INFEASIBLE)
    if sol.status != OPTIMAL:
        return OpfSolution(status=sol.status)

    p = sol.x
    lambda_sys = -float(sol.duals_eq[0])
    mu_plus = sol.duals_ineq[:nl].copy()
    mu_minus = sol.duals_ineq[nl:].copy()
    pi = lambda_sys * np.ones(grid.num_buses) - F.T @ mu_plus + F.T @ mu_minus
    total_cost = float(p @ (grid.quad_cost * p) + grid.lin_cost @ p)
    return OpfSolution(status=OPTIMAL, p=p, lambda_sys=lambda_sys,
                       mu_plus=mu_plus, mu_minus=mu_minus, pi=pi,
                       total_cost=total_cost)


def lmp(sol: OpfSolution, F: np.ndarray) -> np.ndarray:
    """Recompute locational prices from the stored duals."""
    if not sol.optimal:
        raise ValueError(f"no prices for status '{sol.status}'")
    F = np.asarray(F, dtype=float)
    return sol.lambda_sys * np.ones(F.shape[1]) - F.T @ sol.mu_plus \
        + F.T @ sol.mu_minus


def charge(pi: np.ndarray, d: np.ndarray) -> float:
    """Total payment for a demand vector at the given prices, $/h."""
    pi = _as_vector(pi, "pi")
    d = _as_vector(d, "d")
    if pi.shape != d.shape:
        raise ShapeError("price and demand vectors must have equal length")
    return float(pi @ d)


def generate_dataset(grid: GridCase, n_samples: int, seed: int) -> Dataset:
    """Sample data-center demands uniformly within their bounds, label each
    with the charge at the resulting prices, and discard infeasible draws
    (resampling until ``n_samples`` labeled rows exist)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    inputs = np.empty((n_samples, len(grid.dc_buses)))
    labels = np.empty(n_samples)
    kept = 0
    discarded = 0
    draws = 0
    while kept < n_samples:
        if draws >= 50 and kept < 0.5 * draws:
            raise DataGenerationError(
                f"only {kept}/{draws} demand samples were feasible"
            )
        draws += 1
        d_dc = rng.uniform(grid.d_min, grid.d_max)
        sol = solve_opf(grid, grid.embed_demand(d_dc))
        if not sol.optimal:
            discarded += 1
            continue
        inputs[kept] = d_dc
        labels[kept] = charge(sol.pi, grid.embed_demand(d_dc))
        kept += 1
    return Dataset(inputs=inputs, labels=labels,
                   info={"infeasible_discarded": discarded})


# ---------------------------------------------------------------------------
# Grid files

_GRID_FIELDS = ("quad_cost", "lin_cost", "p_min", "p_max", "ptdf", "f_max",
                "base_load", "dc_buses", "d_min", "d_max")


def save_grid(grid: GridCase, path) -> None:
    doc = {name: (list(getattr(grid, name)) if name == "dc_buses"
                  else np.asarray(getattr(grid, name)).tolist())
           for name in _GRID_FIELDS}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_grid(path) -> GridCase:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}") from exc
    missing = [name for name in _GRID_FIELDS if name not in doc]
    if missing:
        raise SchemaError(f"grid file missing fields: {missing}")
    unknown = [key for key in doc if key not in _GRID_FIELDS]
    if unknown:
        raise SchemaError(f"grid file has unknown fields: {unknown}")
    try:
        return GridCase(**{name: doc[name] for name in _GRID_FIELDS})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ShapeError):
            raise
        raise SchemaError(f"grid file holds invalid data: {exc}") from exc
