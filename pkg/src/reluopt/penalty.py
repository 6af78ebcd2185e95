"""Principled penalty selection for the bilinear reformulation.

The procedure: sample a feasible point whose neurons are all cleanly active
or inactive, solve the index-set relaxation LP to get a strongly stationary
point, recover its multipliers, and turn the multiplier/primal ratios into a
lower bound ``rho_bar`` on the penalty.  Any penalty at or above the bound
makes the stationary point stationary for the penalized problem too; the
fine-tuning stage then walks a multiplier schedule above the bound until the
DC iteration actually lands on a complementary solution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .dca import (CONVERGED_COMPLEMENTARY, DcaConfig, DcaResult,
                  FeasiblePoint, dca_solve, initial_guesses)
from .errors import (DegenerateNetworkError, FineTuneError, RelaxationError,
                     StationarityError)
from .general_form import GeneralForm, InputDomain
from .network import DEGENERACY_TOL, ActivationTrace, ReluNetwork, trace
from .qp import INFEASIBLE, OPTIMAL, UNBOUNDED, QpSpec, solve_qp

# Multipliers over rho_bar tried by the fine-tuner, in order.
DEFAULT_SCHEDULE = (1.2, 1.5, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
# Absolute penalty floor used when the certified lower bound is zero.
RHO_FLOOR = 1.0


@dataclass(frozen=True)
class IndexSets:
    """Partition of stacked neuron indices at a feasible point: inactive
    (output zero, slack positive), active (output positive, slack zero) and
    degenerate (both zero)."""

    i_y: np.ndarray   # inactive
    i_v: np.ndarray   # active
    i_0: np.ndarray   # degenerate

    @property
    def size(self) -> int:
        return self.i_y.size + self.i_v.size + self.i_0.size


def classify(y: np.ndarray, v: np.ndarray,
             tol: float = DEGENERACY_TOL) -> IndexSets:
    y = np.asarray(y, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    degenerate = (y <= tol) & (v <= tol)
    active = ~degenerate & (y > v)
    inactive = ~degenerate & ~active
    return IndexSets(i_y=np.flatnonzero(inactive),
                     i_v=np.flatnonzero(active),
                     i_0=np.flatnonzero(degenerate))


@dataclass
class RelaxationDuals:
    lam: np.ndarray    # multipliers of A d >= f, nonnegative
    mu_v: np.ndarray   # equality-block multipliers == stacked v-multipliers
    mu_y: np.ndarray   # stacked y-multipliers, c - W' mu_v


@dataclass
class RelaxationSolution:
    d: np.ndarray
    y: np.ndarray
    v: np.ndarray
    objective: float
    duals: RelaxationDuals


def sample_nondegenerate(net: ReluNetwork, dom: InputDomain, max_tries: int,
                         seed: int) -> tuple[np.ndarray, ActivationTrace]:
    """Draw domain samples until the trace has no degenerate neuron."""
    if max_tries < 1:
        raise ValueError("max_tries must be >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        d = dom.sample(rng)
        tr = trace(net, d)
        if not tr.is_degenerate:
            return d, tr
    raise DegenerateNetworkError(
        f"no non-degenerate point in {max_tries} samples; some neuron is "
        "identically zero on the domain and the network should be reduced"
    )


def solve_relaxation(gf: GeneralForm, sets: IndexSets) -> RelaxationSolution:
    """LP fixing the activation pattern of the sampled point: inactive neurons
    get output pinned to zero and slack kept nonnegative, active neurons the
    reverse.  The solution is strongly stationary for the stacked problem."""
    if sets.i_0.size:
        raise ValueError("relaxation needs an empty degenerate set")
    n, H = gf.input_dim, gf.num_hidden
    nx = n + 2 * H

    eq_rows = [np.hstack([gf.V, gf.W, -np.eye(H)])]
    eq_rhs = [-gf.b]
    for idx, col0 in ((sets.i_y, n), (sets.i_v, n + H)):
        if idx.size:
            block = np.zeros((idx.size, nx))
            block[np.arange(idx.size), col0 + idx] = 1.0
            eq_rows.append(block)
            eq_rhs.append(np.zeros(idx.size))

    G_rows = [np.hstack([-gf.A, np.zeros((gf.A.shape[0], 2 * H))])]
    G_rhs = [-gf.f]
    for idx, col0 in ((sets.i_v, n), (sets.i_y, n + H)):
        if idx.size:
            block = np.zeros((idx.size, nx))
            block[np.arange(idx.size), col0 + idx] = -1.0
            G_rows.append(block)
            G_rhs.append(np.zeros(idx.size))

    spec = QpSpec(q=np.concatenate([np.zeros(n), gf.c, np.zeros(H)]),
                  eq_A=np.vstack(eq_rows), eq_b=np.concatenate(eq_rhs),
                  ineq_G=np.vstack(G_rows), ineq_h=np.concatenate(G_rhs))
    sol = solve_qp(spec)
    if sol.status in (INFEASIBLE, UNBOUNDED):
        raise RelaxationError(f"relaxation LP {sol.status}")
    if sol.status != OPTIMAL:
        raise RelaxationError(f"relaxation LP failed: {sol.message}")

    x = sol.x
    d, y, v = x[:n], x[n:n + H], x[n + H:]
    mu_v = -sol.duals_eq[:H]
    duals = RelaxationDuals(lam=sol.duals_ineq[:gf.A.shape[0]].copy(),
                            mu_v=mu_v, mu_y=gf.c - gf.W.T @ mu_v)
    return RelaxationSolution(d=d, y=y, v=v,
                              objective=float(gf.c @ y) + gf.obj_offset,
                              duals=duals)


def relaxation_kkt_residual(gf: GeneralForm, sets: IndexSets,
                            point: tuple[np.ndarray, np.ndarray, np.ndarray],
                            duals: RelaxationDuals) -> float:
    """Infinity-norm violation of the relaxation's KKT system at a fixed
    primal/dual pair: stationarity in d and y, primal/dual feasibility,
    complementary slackness, and the sign conditions on the index sets."""
    d, y, v = point
    lam, mu_v, mu_y = duals.lam, duals.mu_v, duals.mu_y
    slack = gf.A @ d - gf.f
    residuals = [
        np.abs(gf.A.T @ lam + gf.V.T @ mu_v).max(initial=0.0),       # d-stationarity
        np.abs(gf.W.T @ mu_v + mu_y - gf.c).max(initial=0.0),        # y-stationarity
        np.maximum(-lam, 0.0).max(initial=0.0),
        np.maximum(-slack, 0.0).max(initial=0.0),
        np.abs(lam * slack).max(initial=0.0),
        np.abs(y * mu_y).max(initial=0.0),
        np.abs(v * mu_v).max(initial=0.0),
        np.maximum(-mu_y[sets.i_v], 0.0).max(initial=0.0),
        np.maximum(-mu_v[sets.i_y], 0.0).max(initial=0.0),
    ]
    return float(max(residuals))


def recover_duals_via_kkt(gf: GeneralForm, sets: IndexSets,
                          point: tuple[np.ndarray, np.ndarray, np.ndarray],
                          bind_tol: float = 1e-7) -> RelaxationDuals:
    """Recover multipliers by solving the KKT system as a feasibility LP with
    the primal fixed.  Complementary slackness is encoded by zeroing the
    multipliers of non-binding constraints."""
    d, y, v = point
    m, H, n = gf.A.shape[0], gf.num_hidden, gf.input_dim
    nvar = m + 2 * H   # [lam; mu_v; mu_y]

    eq_A = np.zeros((n + H, nvar))
    eq_A[:n, :m] = gf.A.T
    eq_A[:n, m:m + H] = gf.V.T
    eq_A[n:, m:m + H] = gf.W.T
    eq_A[n:, m + H:] = np.eye(H)
    eq_b = np.concatenate([np.zeros(n), gf.c])

    lower = np.full(nvar, -np.inf)
    upper = np.full(nvar, np.inf)
    lower[:m] = 0.0
    slack = gf.A @ d - gf.f
    nonbinding = np.flatnonzero(slack > bind_tol * (1.0 + np.abs(gf.f)))
    lower[nonbinding] = upper[nonbinding] = 0.0
    pos_v = np.flatnonzero(v > bind_tol * (1.0 + np.abs(v)))
    lower[m + pos_v] = upper[m + pos_v] = 0.0
    pos_y = np.flatnonzero(y > bind_tol * (1.0 + np.abs(y)))
    lower[m + H + pos_y] = upper[m + H + pos_y] = 0.0
    lower[m + sets.i_y] = np.maximum(lower[m + sets.i_y], 0.0)
    lower[m + H + sets.i_v] = np.maximum(lower[m + H + sets.i_v], 0.0)

    spec = QpSpec(q=np.zeros(nvar), eq_A=eq_A, eq_b=eq_b,
                  var_lower=lower, var_upper=upper)
    sol = solve_qp(spec)
    if sol.status != OPTIMAL:
        raise StationarityError(
            f"multiplier system {sol.status}: the point is not stationary"
        )
    x = sol.x
    return RelaxationDuals(lam=x[:m], mu_v=x[m:m + H], mu_y=x[m + H:])


def penalty_lower_bound(y: np.ndarray, v: np.ndarray, duals: RelaxationDuals,
                        denom_tol: float = 1e-9) -> float:
    """Smallest penalty making the stationary point stationary for the
    penalized problem: the largest of zero and the ratios -mu_y/v (over
    strictly positive slacks) and -mu_v/y (over strictly positive outputs)."""
    ratios = [0.0]
    pos_v = v > denom_tol
    if pos_v.any():
        ratios.append(float((-duals.mu_y[pos_v] / v[pos_v]).max()))
    pos_y = y > denom_tol
    if pos_y.any():
        ratios.append(float((-duals.mu_v[pos_y] / y[pos_y]).max()))
    return max(ratios)


def bilinear_kkt_gap(gf: GeneralForm, point, duals: RelaxationDuals,
                     rho: float) -> float:
    """Violation of the penalized problem's KKT system at a point, reusing the
    relaxation multipliers (equality dual mu_v, domain dual lam)."""
    d, y, v = point
    lam, mu_v = duals.lam, duals.mu_v
    slack = gf.A @ d - gf.f
    w_y = -gf.W.T @ mu_v + gf.c + rho * v
    w_v = rho * y + mu_v
    residuals = [
        np.abs(gf.A.T @ lam + gf.V.T @ mu_v).max(initial=0.0),
        np.maximum(-y, 0.0).max(initial=0.0),
        np.maximum(-w_y, 0.0).max(initial=0.0),
        np.abs(y * w_y).max(initial=0.0),
        np.maximum(-lam, 0.0).max(initial=0.0),
        np.maximum(-slack, 0.0).max(initial=0.0),
        np.abs(lam * slack).max(initial=0.0),
        np.maximum(-v, 0.0).max(initial=0.0),
        np.maximum(-w_v, 0.0).max(initial=0.0),
        np.abs(v * w_v).max(initial=0.0),
    ]
    return float(max(residuals))


@dataclass
class FineTuneTrial:
    rho: float
    status: str
    objective: float
    penalty_residual: float
    iterations: int
    start: int = 0


@dataclass
class FineTuneOutcome:
    rho_star: float
    log: list[FineTuneTrial]
    result: DcaResult


def fine_tune(gf: GeneralForm, net: ReluNetwork, dom: InputDomain,
              cfg_base: DcaConfig, rho_bar: float,
              schedule: tuple[float, ...] = DEFAULT_SCHEDULE,
              seed: int = 0, starts: int = 3, sample_candidates: int = 512,
              extra_inits: list[FeasiblePoint] | None = None) -> FineTuneOutcome:
    """Walk penalties ``multiplier * max(rho_bar, floor)`` in schedule order.

    Each starting point runs the schedule independently and keeps its first
    complementary hit; the returned solution is the best of those hits (the
    stacked problem is multimodal, so a few spatially separated restarts are
    much more reliable than one).  Fails only when no start converges at any
    scheduled penalty.
    """
    if rho_bar < 0:
        raise ValueError("rho_bar must be nonnegative")
    base = rho_bar if rho_bar > 0 else RHO_FLOOR
    inits = initial_guesses(net, dom, seed, gf, sample_candidates,
                            max(1, starts))
    if extra_inits:
        inits = inits + list(extra_inits)
    log: list[FineTuneTrial] = []
    winner: DcaResult | None = None
    last_result: DcaResult | None = None
    rho_star = np.nan
    for start_idx, init in enumerate(inits):
        for multiplier in schedule:
            rho = multiplier * base
            result = dca_solve(gf, replace(cfg_base, rho=rho), init)
            last_result = result
            log.append(FineTuneTrial(rho=rho, status=result.status,
                                     objective=result.objective,
                                     penalty_residual=result.penalty_residual,
                                     iterations=result.iterations,
                                     start=start_idx))
            if result.status == CONVERGED_COMPLEMENTARY:
                if winner is None or result.objective < winner.objective:
                    winner, rho_star = result, rho
                break
    if winner is None:
        err = FineTuneError("no schedule penalty produced a complementary "
                            "solution", log)
        err.last_result = last_result  # lets callers restart a few steps back
        raise err
    return FineTuneOutcome(rho_star=rho_star, log=log, result=winner)


@dataclass
class PenaltyCertificate:
    sampled_point: FeasiblePoint
    stationary_point: FeasiblePoint
    duals: RelaxationDuals
    index_sets: IndexSets
    rho_bar: float
    rho_star: float
    fine_tune_log: list[FineTuneTrial]
    dca_result: DcaResult


def certify(gf: GeneralForm, net: ReluNetwork, dom: InputDomain,
            cfg_base: DcaConfig, seed: int = 0, max_tries: int = 100,
            resample_tries: int = 5,
            schedule: tuple[float, ...] = DEFAULT_SCHEDULE,
            starts: int = 3, sample_candidates: int = 512,
            kkt_tol: float = 1e-6) -> PenaltyCertificate:
    """Full penalty-selection procedure.

    Samples a non-degenerate feasible point, solves the relaxation, validates
    the backend multipliers against the KKT system (falling back to the
    feasibility-LP recovery), computes the penalty lower bound, and fine-tunes
    upward until the DC iteration returns a complementary solution.
    """
    last_error: Exception | None = None
    for attempt in range(resample_tries):
        d_tilde, tr = sample_nondegenerate(net, dom, max_tries,
                                           seed + 1000 * attempt)
        sampled = FeasiblePoint(d=d_tilde, y=tr.stacked_y(), v=tr.stacked_v())
        sets = classify(sampled.y, sampled.v, tr.degeneracy_tol)
        try:
            rel = solve_relaxation(gf, sets)
        except RelaxationError as exc:
            last_error = exc
            continue
        point = (rel.d, rel.y, rel.v)
        comp = float(np.max(rel.y * rel.v, initial=0.0))
        if comp > 1e-8 * (1.0 + float(np.abs(rel.y).max(initial=0.0))):
            last_error = RelaxationError(
                f"relaxation point violates complementarity ({comp:.2e})"
            )
            continue
        duals = rel.duals
        if relaxation_kkt_residual(gf, sets, point, duals) > kkt_tol:
            duals = recover_duals_via_kkt(gf, sets, point)
            resid = relaxation_kkt_residual(gf, sets, point, duals)
            if resid > kkt_tol:
                raise StationarityError(
                    f"recovered multipliers still violate KKTs ({resid:.2e})"
                )
        rho_bar = penalty_lower_bound(rel.y, rel.v, duals)
        stationary = FeasiblePoint(rel.d, rel.y, rel.v)
        outcome = fine_tune(gf, net, dom, cfg_base, rho_bar,
                            schedule=schedule, seed=seed, starts=starts,
                            sample_candidates=sample_candidates,
                            extra_inits=[stationary])
        return PenaltyCertificate(
            sampled_point=sampled,
            stationary_point=stationary,
            duals=duals, index_sets=sets,
            rho_bar=rho_bar, rho_star=outcome.rho_star,
            fine_tune_log=outcome.log, dca_result=outcome.result,
        )
    raise RelaxationError(
        f"no usable stationary point after {resample_tries} resamples: "
        f"{last_error}"
    )


def save_certificate(cert: PenaltyCertificate, path) -> None:
    doc = {
        "rho_bar": cert.rho_bar,
        "rho_star": cert.rho_star,
        "sampled_point": {k: getattr(cert.sampled_point, k).tolist()
                          for k in ("d", "y", "v")},
        "stationary_point": {k: getattr(cert.stationary_point, k).tolist()
                             for k in ("d", "y", "v")},
        "duals": {
            "lambda": cert.duals.lam.tolist(),
            "mu_v": cert.duals.mu_v.tolist(),
            "mu_y": cert.duals.mu_y.tolist(),
        },
        "fine_tune_log": [
            {"rho": t.rho, "status": t.status, "objective": t.objective,
             "penalty_residual": t.penalty_residual,
             "iterations": t.iterations}
            for t in cert.fine_tune_log
        ],
        "dca": {"status": cert.dca_result.status,
                "objective": cert.dca_result.objective,
                "iterations": cert.dca_result.iterations},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
