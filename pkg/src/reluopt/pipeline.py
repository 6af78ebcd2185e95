"""End-to-end demand allocation: certify, solve, validate, benchmark.

A run takes a grid, a trained charge surrogate and an allocation target;
certifies a penalty, runs the DC iteration, validates the resulting
allocation through the actual dispatch model, and compares against a
baseline allocation drawn from the training distribution.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .dca import (CONVERGED_COMPLEMENTARY, DcaConfig, DcaResult, dca_solve,
                  write_trajectory)
from .errors import FineTuneError, ShapeError
from .general_form import CostSpec, InputDomain, assemble
from .network import ReluNetwork, forward
from .opf import GridCase, charge, solve_opf
from .penalty import PenaltyCertificate, certify

BASELINE_STREAM = 0xBA5E  # baseline sampler: same distribution, disjoint seeds


@dataclass(frozen=True)
class AllocationSpec:
    """Total demand to place and per-site bounds.  The total is either given
    directly or as a fraction of the maximum total."""

    d_min: np.ndarray
    d_max: np.ndarray
    delta: float | None = None
    forecast_fraction: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "d_min", np.asarray(self.d_min, dtype=float))
        object.__setattr__(self, "d_max", np.asarray(self.d_max, dtype=float))
        if (self.delta is None) == (self.forecast_fraction is None):
            raise ValueError("give exactly one of delta, forecast_fraction")

    def total(self) -> float:
        if self.delta is not None:
            return float(self.delta)
        return float(self.forecast_fraction * self.d_max.sum())

    def domain(self) -> InputDomain:
        return InputDomain(self.d_min, self.d_max, equality_total=self.total())


@dataclass
class RunReport:
    status: str
    dca_objective: float = np.nan       # surrogate charge at the allocation
    validated_charge: float = np.nan    # dispatch-model charge at the allocation
    baseline_charge: float = np.nan
    rho_bar: float = np.nan
    rho_star: float = np.nan
    iterations: int = 0
    d_star: np.ndarray | None = None
    surrogate_gap: float = np.nan       # |dca_objective - validated| / |validated|
    lmp_spread: float = np.nan          # max pi - min pi at the allocation
    trajectory_path: str | None = None

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED_COMPLEMENTARY


def _validate(grid: GridCase, d_dc: np.ndarray):
    d_bus = grid.embed_demand(np.maximum(d_dc, 0.0))
    sol = solve_opf(grid, d_bus)
    if not sol.optimal:
        return np.nan, np.nan
    return charge(sol.pi, d_bus), float(sol.pi.max() - sol.pi.min())


def sample_baseline(grid: GridCase, spec: AllocationSpec, seed: int,
                    best_of: int = 1) -> tuple[np.ndarray, float]:
    """Baseline allocation: draw from the training distribution restricted to
    the allocation constraints, evaluate through the dispatch model, keep the
    cheapest of ``best_of`` draws."""
    dom = spec.domain()
    rng = np.random.default_rng([seed, BASELINE_STREAM])
    best_d, best_cost = None, np.inf
    for _ in range(max(1, best_of)):
        d = dom.sample(rng)
        cost, _ = _validate(grid, d)
        if np.isfinite(cost) and cost < best_cost:
            best_d, best_cost = d, cost
    if best_d is None:
        return None, np.nan
    return best_d, best_cost


def run_allocation(grid: GridCase, net: ReluNetwork, spec: AllocationSpec,
                   dca_cfg: DcaConfig, seed: int = 0, baseline_best_of: int = 1,
                   trajectory_path: str | None = None,
                   certify_kwargs: dict | None = None) -> RunReport:
    """One full pipeline pass; module failures become statuses, not raises."""
    if net.input_dim != len(grid.dc_buses):
        raise ShapeError(
            f"network expects {net.input_dim} inputs, grid has "
            f"{len(grid.dc_buses)} data-center buses"
        )
    dom = spec.domain()
    gf = assemble(net, dom, CostSpec(np.ones(net.output_dim)))

    report = RunReport(status="pending")
    _, report.baseline_charge = sample_baseline(grid, spec, seed,
                                                baseline_best_of)
    result: DcaResult | None = None
    try:
        cert = certify(gf, net, dom, dca_cfg, seed=seed,
                       **(certify_kwargs or {}))
        report.rho_bar = cert.rho_bar
        report.rho_star = cert.rho_star
        result = cert.dca_result
    except FineTuneError as exc:
        # One escalation retry from a few iterations back, then report.
        result = _step_back_retry(gf, dca_cfg, exc)
        if result is None:
            report.status = "fine_tune_failure"
            return report
        report.rho_star = dca_cfg.rho

    report.status = result.status
    report.iterations = result.iterations
    report.dca_objective = result.objective
    report.d_star = result.d_star
    if trajectory_path is not None:
        write_trajectory(result, trajectory_path)
        report.trajectory_path = trajectory_path
    report.validated_charge, report.lmp_spread = _validate(grid, result.d_star)
    if np.isfinite(report.validated_charge) and report.validated_charge != 0:
        report.surrogate_gap = abs(report.dca_objective
                                   - report.validated_charge) \
            / abs(report.validated_charge)
    return report


def _step_back_retry(gf, dca_cfg: DcaConfig, exc: FineTuneError):
    """Escalate the penalty once and restart a few iterates back from the
    last failed run (its tail is retained for exactly this purpose)."""
    last = getattr(exc, "last_result", None)
    if last is None or not last.recent:
        return None
    anchor = last.recent[0]
    rho = max(t.rho for t in exc.log) * 2.0
    result = dca_solve(gf, replace(dca_cfg, rho=rho), anchor)
    return result if result.status == CONVERGED_COMPLEMENTARY else None


@dataclass
class BenchmarkSummary:
    reports: list[RunReport]
    case_seeds: list[int]
    success_rate: float
    gap_threshold: float

    def sorted_rows(self) -> list[tuple[int, RunReport]]:
        order = sorted(range(len(self.reports)),
                       key=lambda i: (not np.isfinite(self.reports[i].baseline_charge),
                                      self.reports[i].baseline_charge))
        return [(i, self.reports[i]) for i in order]


def _benchmark_case(packed):
    grid, net, spec, dca_cfg, seed, traj, best_of, certify_kwargs = packed
    return run_allocation(grid, net, spec, dca_cfg, seed=seed,
                          baseline_best_of=best_of, trajectory_path=traj,
                          certify_kwargs=certify_kwargs)


def benchmark(grid: GridCase, net: ReluNetwork, spec: AllocationSpec,
              dca_cfg: DcaConfig, n_cases: int, base_seed: int = 0,
              gap_threshold: float = 0.05, baseline_best_of: int = 1,
              out_dir: str | None = None, jobs: int = 1,
              certify_kwargs: dict | None = None) -> BenchmarkSummary:
    """Repeated allocation runs with per-case seeds; failures become rows.
    Cases are independent, so ``jobs > 1`` fans them out across processes
    without changing any result."""
    seeds = [base_seed + i for i in range(n_cases)]
    work = []
    for i, seed in enumerate(seeds):
        traj = os.path.join(out_dir, f"trajectory_case{i}.csv") if out_dir else None
        work.append((grid, net, spec, dca_cfg, seed, traj, baseline_best_of,
                     certify_kwargs))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_benchmark_case, work))
    else:
        reports = [_benchmark_case(w) for w in work]
    good = sum(1 for r in reports
               if r.converged and np.isfinite(r.surrogate_gap)
               and r.surrogate_gap <= gap_threshold)
    return BenchmarkSummary(reports=reports, case_seeds=seeds,
                            success_rate=good / max(1, n_cases),
                            gap_threshold=gap_threshold)


SUMMARY_COLUMNS = ["case_id", "baseline_charge", "dca_charge",
                   "validated_charge", "rho_bar", "rho_star", "iterations",
                   "status", "lmp_spread"]


def write_summary(summary: BenchmarkSummary, path) -> None:
    """Benchmark CSV, rows ordered by baseline charge."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for case_id, r in summary.sorted_rows():
            writer.writerow([
                case_id, repr(r.baseline_charge), repr(r.dca_objective),
                repr(r.validated_charge), repr(r.rho_bar), repr(r.rho_star),
                r.iterations, r.status, repr(r.lmp_spread),
            ])
