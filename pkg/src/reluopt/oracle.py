"""Global optimum for small instances by activation-pattern enumeration.

Fixing each hidden neuron to active or inactive makes the network affine, so
the problem restricted to one pattern is a single LP over the input and the
hidden outputs.  Enumerating all patterns (depth-first by layer, pruning
branches whose partial pattern is already infeasible on the domain) yields
the exact global optimum; a point on a pattern boundary is feasible for both
adjacent patterns with the same value, so double counting is harmless.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InfeasibleError, NumericalError, SizeCapError
from .general_form import GeneralForm, objective_value
from .network import ReluNetwork, trace
from .qp import INFEASIBLE, OPTIMAL, QpSpec, solve_qp

DEFAULT_PATTERN_CAP = 16


@dataclass
class OracleResult:
    best_objective: float
    best_d: np.ndarray
    best_pattern: tuple[int, ...]
    feasible_pattern_count: int
    patterns_enumerated: int
    lps_solved: int


class _Enumerator:
    def __init__(self, gf: GeneralForm):
        self.gf = gf
        self.n = gf.input_dim
        self.H = gf.num_hidden
        self.nx = self.n + self.H
        # Row functions of the pre-activations: a = P x + r over x = [d; y]
        # (recovered from the stacked equality data).
        L = np.eye(self.H) - gf.W           # strictly block-subdiagonal couplings
        self.P = np.hstack([-gf.V, L])
        self.r = -gf.b
        self.base_G = np.hstack([-gf.A, np.zeros((gf.A.shape[0], self.H))])
        self.base_h = -gf.f
        self.c_full = np.concatenate([np.zeros(self.n), gf.c])
        self.lps_solved = 0
        self.feasible = 0
        self.best_val = np.inf
        self.best_x: np.ndarray | None = None
        self.best_pattern: tuple[int, ...] | None = None

    def rows_for(self, start: int, bits: tuple[int, ...]):
        """Constraint rows for neurons [start, start+len(bits)): active bits
        pin output to the pre-activation and keep it nonnegative, inactive
        bits pin output to zero and the pre-activation nonpositive."""
        eq_rows, eq_rhs, G_rows, G_rhs = [], [], [], []
        for offset, bit in enumerate(bits):
            j = start + offset
            unit = np.zeros(self.nx)
            unit[self.n + j] = 1.0
            if bit:
                eq_rows.append(unit - self.P[j])
                eq_rhs.append(self.r[j])
                G_rows.append(-self.P[j])
                G_rhs.append(self.r[j])
            else:
                eq_rows.append(unit)
                eq_rhs.append(0.0)
                G_rows.append(self.P[j])
                G_rhs.append(-self.r[j])
        return eq_rows, eq_rhs, G_rows, G_rhs

    def solve(self, eq_rows, eq_rhs, G_rows, G_rhs, minimize_cost: bool) -> bool:
        """Returns True when the constraint set is feasible; at leaves the
        incumbent is updated on strict improvement (keeping the first, i.e.
        lexicographically smallest, pattern among exact ties)."""
        self.lps_solved += 1
        spec = QpSpec(
            q=self.c_full if minimize_cost else np.zeros(self.nx),
            eq_A=np.vstack(eq_rows) if eq_rows else None,
            eq_b=np.asarray(eq_rhs) if eq_rows else None,
            ineq_G=np.vstack([self.base_G] + G_rows),
            ineq_h=np.concatenate([self.base_h, np.asarray(G_rhs)]),
        )
        sol = solve_qp(spec)
        if sol.status == INFEASIBLE:
            return False
        if sol.status != OPTIMAL:
            raise NumericalError(f"pattern LP failed: {sol.status} {sol.message}")
        if minimize_cost:
            self.feasible += 1
            if sol.objective < self.best_val:
                self.best_val = sol.objective
                self.best_x = sol.x
        return True

    def run(self) -> None:
        gf = self.gf
        layers = gf.layer_slices

        def descend(layer: int, eq_rows, eq_rhs, G_rows, G_rhs, pattern):
            width = layers[layer].stop - layers[layer].start
            for bits in itertools.product((0, 1), repeat=width):
                e_r, e_b, g_r, g_b = self.rows_for(layers[layer].start, bits)
                eqs, eqb = eq_rows + e_r, eq_rhs + e_b
                gs, gb = G_rows + g_r, G_rhs + g_b
                if layer + 1 == len(layers):
                    before = self.best_val
                    if self.solve(eqs, eqb, gs, gb, minimize_cost=True) \
                            and self.best_val < before:
                        self.best_pattern = pattern + bits
                else:
                    if self.solve(eqs, eqb, gs, gb, minimize_cost=False):
                        descend(layer + 1, eqs, eqb, gs, gb, pattern + bits)

        descend(0, [], [], [], [], ())


def enumerate_solve(gf: GeneralForm,
                    pattern_cap: int = DEFAULT_PATTERN_CAP) -> OracleResult:
    """Exact minimum of the stacked problem by enumerating all 2^H activation
    patterns (H capped; one LP per feasible pattern)."""
    H = gf.num_hidden
    if H > pattern_cap:
        raise SizeCapError(
            f"{H} hidden neurons exceeds the enumeration cap {pattern_cap}"
        )
    worker = _Enumerator(gf)
    worker.run()
    if worker.best_x is None:
        raise InfeasibleError("every activation pattern is infeasible on the domain")
    return OracleResult(
        best_objective=worker.best_val + gf.obj_offset,
        best_d=worker.best_x[:gf.input_dim],
        best_pattern=worker.best_pattern,
        feasible_pattern_count=worker.feasible,
        patterns_enumerated=2 ** H,
        lps_solved=worker.lps_solved,
    )


def verify_point(gf: GeneralForm, net: ReluNetwork, d: np.ndarray,
                 tol: float = 1e-6) -> float:
    """True objective at an input, from an exact forward pass; rejects points
    outside the domain beyond ``tol``."""
    d = np.asarray(d, dtype=float).ravel()
    violation = float(np.max(gf.f - gf.A @ d, initial=0.0))
    if violation > tol * (1.0 + float(np.abs(gf.f).max(initial=0.0))):
        raise DomainError(f"point violates the domain by {violation:.3e}")
    tr = trace(net, d)
    return objective_value(gf, tr.stacked_y())
