"""Convex QP/LP solving with dual extraction, behind one fixed convention.

Every solver in the package goes through this module.  The multiplier
convention is:

    stationarity   Q x + q + eq_A' nu + ineq_G' z - z_lb + z_ub = 0
    sign           z >= 0 for ineq_G x <= ineq_h;  z_lb, z_ub >= 0 for bounds;
                   nu free for eq_A x = eq_b

Quadratic problems are handled by cvxopt's cone interior-point solver (whose
duals already follow this convention); pure LPs go to scipy's HiGHS, whose
marginals are translated.  Every optimal solution can be re-verified with
:func:`kkt_residuals`, which never touches the backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix as cvxmat
from cvxopt import solvers as cvxsolvers
from scipy.optimize import linprog

from .errors import ShapeError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class QpSpec:
    """minimize 1/2 x'Qx + q'x  s.t.  eq_A x = eq_b,  ineq_G x <= ineq_h,
    var_lower <= x <= var_upper.  Q may be None (pure LP)."""

    q: np.ndarray
    Q: np.ndarray | None = None
    eq_A: np.ndarray | None = None
    eq_b: np.ndarray | None = None
    ineq_G: np.ndarray | None = None
    ineq_h: np.ndarray | None = None
    var_lower: np.ndarray | None = None
    var_upper: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.shape[0]
        if self.Q is not None:
            self.Q = np.asarray(self.Q, dtype=float)
            if self.Q.shape != (n, n):
                raise ShapeError(f"Q must be ({n},{n}), got {self.Q.shape}")
            if not np.allclose(self.Q, self.Q.T, atol=1e-12):
                raise ShapeError("Q must be symmetric")
            if np.any(self.Q):
                # PSD check with a small negative floor for rounding noise
                w = np.linalg.eigvalsh(self.Q)
                if w.min() < -1e-8 * max(1.0, w.max()):
                    raise ShapeError("Q must be positive semidefinite")
            else:
                self.Q = None
        for mat_name, vec_name in (("eq_A", "eq_b"), ("ineq_G", "ineq_h")):
            mat, vec = getattr(self, mat_name), getattr(self, vec_name)
            if (mat is None) != (vec is None):
                raise ShapeError(f"{mat_name} and {vec_name} must come together")
            if mat is not None:
                mat = np.asarray(mat, dtype=float)
                vec = np.asarray(vec, dtype=float).ravel()
                if mat.ndim != 2 or mat.shape[1] != n or mat.shape[0] != vec.shape[0]:
                    raise ShapeError(f"{mat_name}/{vec_name} shapes inconsistent")
                setattr(self, mat_name, mat)
                setattr(self, vec_name, vec)
        for name in ("var_lower", "var_upper"):
            bound = getattr(self, name)
            if bound is not None:
                bound = np.asarray(bound, dtype=float).ravel()
                if bound.shape[0] != n:
                    raise ShapeError(f"{name} must have length {n}")
                setattr(self, name, bound)

    @property
    def num_vars(self) -> int:
        return self.q.shape[0]

    def is_lp(self) -> bool:
        return self.Q is None


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    objective: float = np.nan
    duals_eq: np.ndarray | None = None
    duals_ineq: np.ndarray | None = None
    duals_lower: np.ndarray | None = None
    duals_upper: np.ndarray | None = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _objective(spec: QpSpec, x: np.ndarray) -> float:
    val = float(spec.q @ x)
    if spec.Q is not None:
        val += 0.5 * float(x @ spec.Q @ x)
    return val


def kkt_residuals(spec: QpSpec, sol: QpSolution) -> dict[str, float]:
    """Independent KKT check: stationarity, primal feasibility, dual signs,
    complementary slackness.  Infinity norms; all ~0 at a clean optimum."""
    x = sol.x
    res: dict[str, float] = {}
    grad = spec.q.copy()
    if spec.Q is not None:
        grad += spec.Q @ x
    if spec.eq_A is not None:
        grad += spec.eq_A.T @ sol.duals_eq
        res["primal_eq"] = float(np.abs(spec.eq_A @ x - spec.eq_b).max(initial=0.0))
    if spec.ineq_G is not None:
        grad += spec.ineq_G.T @ sol.duals_ineq
        slack = spec.ineq_h - spec.ineq_G @ x
        res["primal_ineq"] = float(np.maximum(-slack, 0.0).max(initial=0.0))
        res["dual_sign"] = float(np.maximum(-sol.duals_ineq, 0.0).max(initial=0.0))
        res["comp_slack"] = float(np.abs(sol.duals_ineq * slack).max(initial=0.0))
    if spec.var_lower is not None and sol.duals_lower is not None:
        grad -= sol.duals_lower
        gap = x - spec.var_lower
        finite = np.isfinite(spec.var_lower)
        res["primal_lb"] = float(np.maximum(-gap[finite], 0.0).max(initial=0.0))
        res["comp_lb"] = float(np.abs(sol.duals_lower[finite] * gap[finite]).max(initial=0.0))
    if spec.var_upper is not None and sol.duals_upper is not None:
        grad += sol.duals_upper
        gap = spec.var_upper - x
        finite = np.isfinite(spec.var_upper)
        res["primal_ub"] = float(np.maximum(-gap[finite], 0.0).max(initial=0.0))
        res["comp_ub"] = float(np.abs(sol.duals_upper[finite] * gap[finite]).max(initial=0.0))
    res["stationarity"] = float(np.abs(grad).max(initial=0.0))
    res["max"] = max(res.values())
    return res


# ---------------------------------------------------------------------------
# LP path (HiGHS)

def _solve_lp(spec: QpSpec) -> QpSolution:
    bounds = list(zip(
        spec.var_lower if spec.var_lower is not None else [-np.inf] * spec.num_vars,
        spec.var_upper if spec.var_upper is not None else [np.inf] * spec.num_vars,
    ))
    res = linprog(
        c=spec.q,
        A_ub=spec.ineq_G, b_ub=spec.ineq_h,
        A_eq=spec.eq_A, b_eq=spec.eq_b,
        bounds=bounds, method="highs",
    )
    if res.status == 2:
        return QpSolution(x=np.full(spec.num_vars, np.nan), status=INFEASIBLE,
                          message=res.message)
    if res.status == 3:
        return QpSolution(x=np.full(spec.num_vars, np.nan), status=UNBOUNDED,
                          message=res.message)
    if res.status != 0:
        return QpSolution(x=np.full(spec.num_vars, np.nan),
                          status=NUMERICAL_FAILURE, message=res.message)
    # HiGHS marginals are d(obj)/d(rhs); negate to match our convention.
    sol = QpSolution(
        x=np.asarray(res.x, dtype=float),
        status=OPTIMAL,
        objective=_objective(spec, res.x),
        duals_eq=-np.asarray(res.eqlin.marginals) if spec.eq_A is not None else None,
        duals_ineq=-np.asarray(res.ineqlin.marginals) if spec.ineq_G is not None else None,
        duals_lower=np.asarray(res.lower.marginals),
        duals_upper=-np.asarray(res.upper.marginals),
    )
    return sol


# ---------------------------------------------------------------------------
# QP path (cvxopt cone solver)

_CVXOPT_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-9,
    "reltol": 1e-9,
    "feastol": 1e-9,
    "maxiters": 200,
}


def _bounds_as_rows(spec: QpSpec):
    """Fold finite variable bounds into extra G rows; returns (G, h, lb_idx,
    ub_idx) where the index arrays locate the bound rows."""
    n = spec.num_vars
    rows, rhs = [], []
    lb_idx = ub_idx = None
    if spec.ineq_G is not None:
        rows.append(spec.ineq_G)
        rhs.append(spec.ineq_h)
    if spec.var_lower is not None:
        finite = np.flatnonzero(np.isfinite(spec.var_lower))
        if finite.size:
            block = np.zeros((finite.size, n))
            block[np.arange(finite.size), finite] = -1.0
            rows.append(block)
            rhs.append(-spec.var_lower[finite])
            lb_idx = finite
    if spec.var_upper is not None:
        finite = np.flatnonzero(np.isfinite(spec.var_upper))
        if finite.size:
            block = np.zeros((finite.size, n))
            block[np.arange(finite.size), finite] = 1.0
            rows.append(block)
            rhs.append(spec.var_upper[finite])
            ub_idx = finite
    if not rows:
        return None, None, lb_idx, ub_idx
    return np.vstack(rows), np.concatenate(rhs), lb_idx, ub_idx


def _solve_qp_cvxopt(spec: QpSpec, options: dict, initvals=None) -> QpSolution:
    n = spec.num_vars
    G, h, lb_idx, ub_idx = _bounds_as_rows(spec)
    P = cvxmat(spec.Q)
    q = cvxmat(spec.q)
    Gm = cvxmat(G) if G is not None else None
    hm = cvxmat(h) if h is not None else None
    Am = cvxmat(spec.eq_A) if spec.eq_A is not None else None
    bm = cvxmat(spec.eq_b) if spec.eq_b is not None else None
    try:
        raw = cvxsolvers.qp(P, q, Gm, hm, Am, bm, initvals=initvals,
                            options=options)
    except (ValueError, ArithmeticError) as exc:
        return QpSolution(x=np.full(n, np.nan), status=NUMERICAL_FAILURE,
                          message=str(exc))

    status = raw["status"]
    if status == "primal infeasible":
        return QpSolution(x=np.full(n, np.nan), status=INFEASIBLE)
    if status == "dual infeasible":
        return QpSolution(x=np.full(n, np.nan), status=UNBOUNDED)

    x = np.array(raw["x"]).ravel()
    z = np.array(raw["z"]).ravel() if Gm is not None else np.zeros(0)
    nu = np.array(raw["y"]).ravel() if Am is not None else None

    n_user = spec.ineq_G.shape[0] if spec.ineq_G is not None else 0
    duals_ineq = z[:n_user] if spec.ineq_G is not None else None
    offset = n_user
    duals_lower = duals_upper = None
    if lb_idx is not None:
        duals_lower = np.zeros(n)
        duals_lower[lb_idx] = z[offset:offset + lb_idx.size]
        offset += lb_idx.size
    if ub_idx is not None:
        duals_upper = np.zeros(n)
        duals_upper[ub_idx] = z[offset:offset + ub_idx.size]

    sol = QpSolution(
        x=x, status=OPTIMAL, objective=_objective(spec, x),
        duals_eq=nu, duals_ineq=duals_ineq,
        duals_lower=duals_lower, duals_upper=duals_upper,
    )
    if status != "optimal":
        # 'unknown': accept only if the point verifies independently.
        scale = 1.0 + float(np.abs(x).max(initial=0.0))
        if kkt_residuals(spec, sol)["max"] <= 1e-6 * scale:
            sol.message = "accepted after independent KKT check"
        else:
            sol.status = NUMERICAL_FAILURE
            sol.message = f"cvxopt status {status}"
    return sol


def solve_qp(spec: QpSpec, abstol: float = 1e-9, reltol: float = 1e-9,
             feastol: float = 1e-9, initvals=None) -> QpSolution:
    """Solve a convex QP (or LP when Q is None) and return primal plus duals
    under the package-wide multiplier convention."""
    if spec.is_lp():
        return _solve_lp(spec)
    options = dict(_CVXOPT_OPTIONS)
    options.update(abstol=abstol, reltol=reltol, feastol=feastol)
    return _solve_qp_cvxopt(spec, options, initvals=initvals)


class PreparedQp:
    """A QP whose constraint data is fixed while the linear term changes
    between solves (the shape of an iterative linearization loop).

    Matrices are converted to solver format once; :meth:`solve` only swaps in
    the new linear term and, optionally, warm-start values.
    """

    def __init__(self, spec: QpSpec, abstol: float = 1e-9, reltol: float = 1e-9,
                 feastol: float = 1e-9):
        if spec.is_lp():
            raise ShapeError("PreparedQp expects a quadratic objective")
        self._spec = spec
        G, h, _, _ = _bounds_as_rows(spec)
        self._P = cvxmat(spec.Q)
        self._G = cvxmat(G) if G is not None else None
        self._h = cvxmat(h) if h is not None else None
        self._A = cvxmat(spec.eq_A) if spec.eq_A is not None else None
        self._b = cvxmat(spec.eq_b) if spec.eq_b is not None else None
        self._options = dict(_CVXOPT_OPTIONS)
        self._options.update(abstol=abstol, reltol=reltol, feastol=feastol)
        self._n_user = spec.ineq_G.shape[0] if spec.ineq_G is not None else 0

    def solve(self, q: np.ndarray, warm: dict | None = None) -> QpSolution:
        q = np.asarray(q, dtype=float).ravel()
        try:
            raw = cvxsolvers.qp(self._P, cvxmat(q), self._G, self._h,
                                self._A, self._b, initvals=warm,
                                options=self._options)
        except (ValueError, ArithmeticError) as exc:
            return QpSolution(x=np.full(self._spec.num_vars, np.nan),
                              status=NUMERICAL_FAILURE, message=str(exc))
        status = raw["status"]
        if status == "primal infeasible":
            return QpSolution(x=np.full(self._spec.num_vars, np.nan),
                              status=INFEASIBLE)
        if status == "dual infeasible":
            return QpSolution(x=np.full(self._spec.num_vars, np.nan),
                              status=UNBOUNDED)
        x = np.array(raw["x"]).ravel()
        objective = float(q @ x) + 0.5 * float(x @ self._spec.Q @ x)
        sol = QpSolution(
            x=x, status=OPTIMAL, objective=objective,
            duals_eq=np.array(raw["y"]).ravel() if self._A is not None else None,
            duals_ineq=(np.array(raw["z"]).ravel()[:self._n_user]
                        if self._spec.ineq_G is not None else None),
        )
        sol.raw = raw  # keeps s/z for warm starting the next solve
        if status != "optimal":
            spec = QpSpec(q=q, Q=self._spec.Q, eq_A=self._spec.eq_A,
                          eq_b=self._spec.eq_b, ineq_G=self._spec.ineq_G,
                          ineq_h=self._spec.ineq_h,
                          var_lower=self._spec.var_lower,
                          var_upper=self._spec.var_upper)
            scale = 1.0 + float(np.abs(x).max(initial=0.0))
            if kkt_residuals(spec, sol)["max"] <= 1e-6 * scale:
                sol.message = "accepted after independent KKT check"
            else:
                sol.status = NUMERICAL_FAILURE
                sol.message = f"cvxopt status {status}"
        return sol
