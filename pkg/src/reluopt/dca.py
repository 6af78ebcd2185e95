"""Difference-of-convex iteration for the penalized complementarity problem.

The bilinear objective ``c'y + rho * y'v`` splits into a difference of two
convex quadratics via the quarter-squares identity

    rho * y'v = (rho/4) * ||y + v||^2 - (rho/4) * ||y - v||^2,

so each iteration minimizes the convex part plus a linearization of the
concave part at the current iterate, subject to the network equalities, the
input domain and nonnegativity.  The subproblem is a convex QP whose
constraint data never changes, so it is prepared once and re-solved with a
fresh linear term each iteration.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ShapeError
from .general_form import GeneralForm, InputDomain, objective_value
from .network import ReluNetwork, trace
from .qp import OPTIMAL, PreparedQp, QpSpec

CONVERGED_COMPLEMENTARY = "converged_complementary"
CONVERGED_NONCOMPLEMENTARY = "converged_noncomplementary"
ITERATION_CAP = "iteration_cap"
SUBPROBLEM_FAILURE = "subproblem_failure"


@dataclass(frozen=True)
class DcaConfig:
    rho: float
    eps_tol: float = 1e-8
    max_iters: int = 200_000
    comp_tol: float = 1e-6
    log_every: int = 1
    relative_decrease: bool = False
    init_candidates: int = 8     # feasible-guess samples; best network cost wins
    step_back: int = 10          # iterates retained for penalty-escalation restarts
    warm_start: bool = False
    abstol: float = 1e-9
    reltol: float = 1e-9

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.eps_tol <= 0:
            raise ValueError("eps_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


class FeasiblePoint(NamedTuple):
    d: np.ndarray
    y: np.ndarray   # stacked
    v: np.ndarray   # stacked


class TraceRow(NamedTuple):
    iteration: int
    f: float
    objective_part: float
    penalty_part: float
    max_comp_residual: float


@dataclass
class BestIterate:
    d: np.ndarray
    y: np.ndarray
    v: np.ndarray
    objective: float
    iteration: int


@dataclass
class DcaResult:
    d_star: np.ndarray
    y: np.ndarray
    v: np.ndarray
    objective: float                 # c'y + obj_offset at the final iterate
    penalty_residual: float          # max_i y_i * v_i
    penalty_residual_scaled: float   # residual / (1 + |y|_inf * |v|_inf)
    iterations: int
    status: str
    trace: list[TraceRow]
    f_trace: np.ndarray              # DC objective per iteration (offset excluded)
    best: BestIterate | None = None  # lowest complementarity-consistent objective
    recent: list[FeasiblePoint] = field(default_factory=list)
    failure_message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED_COMPLEMENTARY


def initial_guess(net: ReluNetwork, dom: InputDomain, seed: int,
                  gf: GeneralForm | None = None,
                  candidates: int = 1) -> FeasiblePoint:
    """Feasible starting point: sample inputs from the domain, propagate, and
    keep the trace (complementary by construction).  With ``gf`` given and
    ``candidates > 1``, the sample with the lowest stacked cost is kept."""
    if np.any(dom.lower > dom.upper):
        raise DomainError("empty domain")
    rng = np.random.default_rng(seed)
    best = None
    best_val = np.inf
    for _ in range(max(1, candidates)):
        d = dom.sample(rng)
        tr = trace(net, d)
        point = FeasiblePoint(d=d, y=tr.stacked_y(), v=tr.stacked_v())
        val = objective_value(gf, point.y) if gf is not None else 0.0
        if best is None or val < best_val:
            best, best_val = point, val
    return best


def initial_guesses(net: ReluNetwork, dom: InputDomain, seed: int,
                    gf: GeneralForm, candidates: int, count: int,
                    min_separation: float = 0.2) -> list[FeasiblePoint]:
    """Several feasible starting points for restarts: the lowest-cost sampled
    traces, greedily thinned so chosen inputs are at least
    ``min_separation * domain diameter`` apart (filling up with the next-best
    samples when the domain cannot support that spread)."""
    if np.any(dom.lower > dom.upper):
        raise DomainError("empty domain")
    rng = np.random.default_rng(seed)
    points: list[FeasiblePoint] = []
    costs: list[float] = []
    for _ in range(max(count, candidates)):
        d = dom.sample(rng)
        tr = trace(net, d)
        points.append(FeasiblePoint(d=d, y=tr.stacked_y(), v=tr.stacked_v()))
        costs.append(objective_value(gf, points[-1].y))
    order = np.argsort(costs)
    diameter = float(np.linalg.norm(dom.upper - dom.lower))
    chosen: list[FeasiblePoint] = []
    for idx in order:
        if len(chosen) >= count:
            break
        point = points[idx]
        if all(np.linalg.norm(point.d - c.d) >= min_separation * diameter
               for c in chosen):
            chosen.append(point)
    for idx in order:
        if len(chosen) >= count:
            break
        point = points[idx]
        if all(point is not c for c in chosen):
            chosen.append(point)
    return chosen


def dc_objective(gf: GeneralForm, rho: float, y: np.ndarray,
                 v: np.ndarray) -> tuple[float, float, float]:
    """DC objective f = c'y + rho*y'v and its convex split (f1, f2) with
    f = f1 - f2.  The constant objective offset is excluded."""
    y = np.asarray(y, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if y.shape[0] != gf.num_hidden or v.shape[0] != gf.num_hidden:
        raise ShapeError("stacked vectors must have length H")
    cy = float(gf.c @ y)
    f = cy + rho * float(y @ v)
    f1 = cy + 0.25 * rho * float(np.dot(y + v, y + v))
    f2 = 0.25 * rho * float(np.dot(y - v, y - v))
    return f, f1, f2


def _constraints(gf: GeneralForm):
    """Equalities [V W -I]x = -b and inequalities stacking -Ad <= -f,
    -y <= 0, -v <= 0 over x = [d; y; v]."""
    n, H = gf.input_dim, gf.num_hidden
    nx = n + 2 * H
    eq_A = np.hstack([gf.V, gf.W, -np.eye(H)])
    eq_b = -gf.b
    G = np.zeros((gf.A.shape[0] + 2 * H, nx))
    G[:gf.A.shape[0], :n] = -gf.A
    G[gf.A.shape[0]:gf.A.shape[0] + H, n:n + H] = -np.eye(H)
    G[gf.A.shape[0] + H:, n + H:] = -np.eye(H)
    h = np.concatenate([-gf.f, np.zeros(2 * H)])
    return eq_A, eq_b, G, h


def _quadratic(gf: GeneralForm, rho: float) -> np.ndarray:
    n, H = gf.input_dim, gf.num_hidden
    nx = n + 2 * H
    Q = np.zeros((nx, nx))
    block = 0.5 * rho * np.eye(H)
    Q[n:n + H, n:n + H] = block
    Q[n + H:, n + H:] = block
    Q[n:n + H, n + H:] = block
    Q[n + H:, n:n + H] = block
    return Q


def _linear_term(gf: GeneralForm, rho: float, y_k: np.ndarray,
                 v_k: np.ndarray) -> np.ndarray:
    n = gf.input_dim
    grad = 0.5 * rho * (y_k - v_k)   # y-gradient of the subtracted quadratic
    return np.concatenate([np.zeros(n), gf.c - grad, grad])


def build_subproblem(gf: GeneralForm, rho: float, y_k: np.ndarray,
                     v_k: np.ndarray) -> QpSpec:
    """Convex QP solved at each iteration, linearized at (y_k, v_k)."""
    y_k = np.asarray(y_k, dtype=float).ravel()
    v_k = np.asarray(v_k, dtype=float).ravel()
    if y_k.shape[0] != gf.num_hidden or v_k.shape[0] != gf.num_hidden:
        raise ShapeError("y_k, v_k must have length H")
    eq_A, eq_b, G, h = _constraints(gf)
    return QpSpec(q=_linear_term(gf, rho, y_k, v_k), Q=_quadratic(gf, rho),
                  eq_A=eq_A, eq_b=eq_b, ineq_G=G, ineq_h=h)


def dca_solve(gf: GeneralForm, cfg: DcaConfig, init: FeasiblePoint) -> DcaResult:
    """Run the DC iteration from a feasible point until the objective decrease
    drops to ``eps_tol`` (or the iteration cap)."""
    n, H = gf.input_dim, gf.num_hidden
    spec = build_subproblem(gf, cfg.rho, init.y, init.v)
    prepared = PreparedQp(spec, abstol=cfg.abstol, reltol=cfg.reltol)

    d, y, v = (np.asarray(a, dtype=float).ravel() for a in init)
    f_prev, _, _ = dc_objective(gf, cfg.rho, y, v)

    rows: list[TraceRow] = []
    f_vals: list[float] = []
    best: BestIterate | None = None
    recent: deque[FeasiblePoint] = deque(maxlen=cfg.step_back + 1)
    recent.append(FeasiblePoint(d, y, v))
    warm = None

    status = ITERATION_CAP
    message = ""
    iterations = 0
    for k in range(1, cfg.max_iters + 1):
        q = _linear_term(gf, cfg.rho, y, v)
        sol = prepared.solve(q, warm=warm)
        if sol.status != OPTIMAL:
            status = SUBPROBLEM_FAILURE
            message = f"iteration {k}: backend status {sol.status} {sol.message}"
            iterations = k
            break
        x = sol.x
        d, y, v = x[:n], x[n:n + H], x[n + H:]
        if cfg.warm_start:
            warm = sol.raw
        iterations = k

        cy = float(gf.c @ y)
        pen = cfg.rho * float(y @ v)
        f_new = cy + pen
        resid = float(np.max(y * v, initial=0.0))
        f_vals.append(f_new)
        if cfg.log_every > 0 and (k % cfg.log_every == 0 or k == 1):
            rows.append(TraceRow(k, f_new, cy, pen, resid))
        recent.append(FeasiblePoint(d.copy(), y.copy(), v.copy()))

        if resid <= cfg.comp_tol:
            obj = cy + gf.obj_offset
            if best is None or obj < best.objective:
                best = BestIterate(d.copy(), y.copy(), v.copy(), obj, k)

        decrease = f_prev - f_new
        threshold = cfg.eps_tol * (1.0 + abs(f_new)) if cfg.relative_decrease \
            else cfg.eps_tol
        if decrease <= threshold:
            status = CONVERGED_COMPLEMENTARY if resid <= cfg.comp_tol \
                else CONVERGED_NONCOMPLEMENTARY
            break
        f_prev = f_new

    resid = float(np.max(y * v, initial=0.0))
    scale = 1.0 + float(np.abs(y).max(initial=0.0)) * float(np.abs(v).max(initial=0.0))
    return DcaResult(
        d_star=d, y=y, v=v,
        objective=float(gf.c @ y) + gf.obj_offset,
        penalty_residual=resid,
        penalty_residual_scaled=resid / scale,
        iterations=iterations,
        status=status,
        trace=rows,
        f_trace=np.asarray(f_vals),
        best=best,
        recent=list(recent),
        failure_message=message,
    )


def write_trajectory(result: DcaResult, path) -> None:
    """CSV of the iteration trace: one row per logged iteration."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "f", "objective_part", "penalty_part",
                         "max_comp_residual"])
        for row in result.trace:
            writer.writerow([row.iteration, repr(row.f),
                             repr(row.objective_part), repr(row.penalty_part),
                             repr(row.max_comp_residual)])
