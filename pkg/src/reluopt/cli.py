"""Command-line front end.

Subcommands cover the full workflow: ``datagen`` (label demand samples
through the dispatch model), ``train`` (fit a surrogate), ``rho`` (penalty
certification), ``solve`` (run the DC iteration), ``oracle`` (exact optimum
by enumeration), ``validate`` (price an allocation), ``benchmark`` (repeated
end-to-end runs).  Every command writes a ``resolved_config.json`` next to
its outputs and seeds all randomness from flags, so identical invocations
produce byte-identical files.

Exit codes: 0 success, 2 bad configuration or schema, 3 infeasible,
4 convergence failure, 5 size cap exceeded, 6 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import cases
from .dca import CONVERGED_COMPLEMENTARY, DcaConfig, dca_solve, \
    initial_guess, write_trajectory
from .errors import (DataGenerationError, DegenerateNetworkError, DomainError,
                     FineTuneError, InfeasibleError, NonFiniteError,
                     NumericalError, RelaxationError, SchemaError, ShapeError,
                     SizeCapError, StationarityError)
from .general_form import CostSpec, InputDomain, assemble
from .network import load_network, save_network
from .opf import charge, generate_dataset, load_grid, solve_opf
from .oracle import enumerate_solve
from .penalty import certify, save_certificate
from .pipeline import AllocationSpec, benchmark, write_summary
from .training import Dataset, TrainConfig, evaluate, load_dataset, \
    save_dataset, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_CONVERGENCE = 4
EXIT_SIZE = 5
EXIT_NUMERICAL = 6

_CONFIG_ERRORS = (SchemaError, ShapeError, NonFiniteError, ValueError,
                  FileNotFoundError, IsADirectoryError, KeyError)
_INFEASIBLE_ERRORS = (DomainError, InfeasibleError, DataGenerationError)
_CONVERGENCE_ERRORS = (FineTuneError, DegenerateNetworkError, RelaxationError,
                       StationarityError)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated vector: {text}") from exc


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text}") from exc


def _out_dir(args) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def _write_resolved_config(args, out_dir: str) -> None:
    resolved = {}
    for key, val in sorted(vars(args).items()):
        if key in ("func",):
            continue
        if isinstance(val, np.ndarray):
            val = val.tolist()
        resolved[key] = val
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(resolved, fh, indent=2, default=str)
        fh.write("\n")


def _domain_from_args(args, dim: int) -> InputDomain:
    if args.lower.shape[0] != dim or args.upper.shape[0] != dim:
        raise ShapeError(f"domain bounds must have length {dim}")
    delta = args.delta
    if getattr(args, "forecast_fraction", None) is not None:
        if delta is not None:
            raise ShapeError("give either --delta or --forecast-fraction")
        delta = args.forecast_fraction * float(args.upper.sum())
    return InputDomain(args.lower, args.upper, equality_total=delta)


def _dca_config(args, rho: float = 1.0) -> DcaConfig:
    return DcaConfig(rho=rho, eps_tol=args.eps_tol, max_iters=args.max_iters,
                     comp_tol=args.comp_tol, log_every=args.log_every)


# ---------------------------------------------------------------------------
# commands

def cmd_datagen(args) -> int:
    out = _out_dir(args)
    grid = load_grid(args.grid)
    data = generate_dataset(grid, args.n, args.seed)
    save_dataset(data, os.path.join(out, "dataset.csv"))
    _write_resolved_config(args, out)
    print(f"wrote {len(data)} samples "
          f"({data.info.get('infeasible_discarded', 0)} infeasible discarded)")
    return EXIT_OK


def cmd_train(args) -> int:
    out = _out_dir(args)
    data = load_dataset(args.dataset)
    cfg = TrainConfig(hidden_sizes=args.arch, learning_rate=args.learning_rate,
                      epochs=args.epochs,
                      batch_size=args.batch_size if args.batch_size else None,
                      seed=args.seed, init_scale=args.init_scale)
    net, losses = train(data, cfg)
    save_network(net, os.path.join(out, "weights.json"))
    with open(os.path.join(out, "loss.csv"), "w") as fh:
        fh.write("epoch,mse\n")
        for i, loss in enumerate(losses):
            fh.write(f"{i + 1},{loss!r}\n")
    mse, max_err = evaluate(net, data)
    _write_resolved_config(args, out)
    print(f"trained {args.arch} surrogate: mse {mse:.6g}, max err {max_err:.6g}")
    return EXIT_OK


def cmd_rho(args) -> int:
    out = _out_dir(args)
    net = load_network(args.weights)
    dom = _domain_from_args(args, net.input_dim)
    gf = assemble(net, dom, CostSpec(np.ones(net.output_dim)))
    cert = certify(gf, net, dom, _dca_config(args), seed=args.seed,
                   starts=args.starts)
    save_certificate(cert, os.path.join(out, "certificate.json"))
    _write_resolved_config(args, out)
    print(f"rho_bar {cert.rho_bar!r} rho_star {cert.rho_star!r} "
          f"(dca: {cert.dca_result.status}, "
          f"objective {cert.dca_result.objective!r})")
    return EXIT_OK


def cmd_solve(args) -> int:
    out = _out_dir(args)
    net = load_network(args.weights)
    dom = _domain_from_args(args, net.input_dim)
    gf = assemble(net, dom, CostSpec(np.ones(net.output_dim)))
    cfg = _dca_config(args, rho=args.rho)
    init = initial_guess(net, dom, args.seed, gf=gf,
                         candidates=args.init_candidates)
    result = dca_solve(gf, cfg, init)
    write_trajectory(result, os.path.join(out, "trajectory.csv"))
    doc = {
        "status": result.status,
        "objective": result.objective,
        "d_star": result.d_star.tolist(),
        "penalty_residual": result.penalty_residual,
        "iterations": result.iterations,
        "rho": args.rho,
    }
    with open(os.path.join(out, "solution.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    _write_resolved_config(args, out)
    print(f"{result.status}: objective {result.objective!r} "
          f"at d {np.round(result.d_star, 6).tolist()} "
          f"({result.iterations} iterations)")
    if result.status == "subproblem_failure":
        raise CliError(result.failure_message, EXIT_NUMERICAL)
    if result.status != CONVERGED_COMPLEMENTARY:
        raise CliError(f"solve ended with status {result.status}",
                       EXIT_CONVERGENCE)
    return EXIT_OK


def cmd_oracle(args) -> int:
    out = _out_dir(args)
    net = load_network(args.weights)
    dom = _domain_from_args(args, net.input_dim)
    gf = assemble(net, dom, CostSpec(np.ones(net.output_dim)))
    result = enumerate_solve(gf, pattern_cap=args.cap)
    doc = {
        "best_objective": result.best_objective,
        "best_d": result.best_d.tolist(),
        "best_pattern": list(result.best_pattern),
        "feasible_pattern_count": result.feasible_pattern_count,
        "patterns_enumerated": result.patterns_enumerated,
        "lps_solved": result.lps_solved,
    }
    with open(os.path.join(out, "oracle.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    _write_resolved_config(args, out)
    print(f"global optimum {result.best_objective!r} at "
          f"{np.round(result.best_d, 6).tolist()} "
          f"({result.feasible_pattern_count}/{result.patterns_enumerated} "
          "patterns feasible)")
    return EXIT_OK


def cmd_validate(args) -> int:
    out = _out_dir(args)
    grid = load_grid(args.grid)
    d_bus = grid.embed_demand(args.allocation)
    sol = solve_opf(grid, d_bus)
    if not sol.optimal:
        raise CliError(f"dispatch {sol.status} for this allocation",
                       EXIT_INFEASIBLE)
    total = charge(sol.pi, d_bus)
    doc = {
        "charge": total,
        "lambda": sol.lambda_sys,
        "lmp": sol.pi.tolist(),
        "lmp_spread": float(sol.pi.max() - sol.pi.min()),
        "total_cost": sol.total_cost,
    }
    with open(os.path.join(out, "validation.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    _write_resolved_config(args, out)
    print(f"charge {total!r} $/h, lmp spread "
          f"{doc['lmp_spread']!r} $/MWh")
    return EXIT_OK


_BENCHMARK_KEYS = {
    "grid", "weights", "n_cases", "seed", "d_min", "d_max", "delta",
    "forecast_fraction", "eps_tol", "max_iters", "comp_tol", "gap_threshold",
    "baseline_best_of", "starts",
}


def cmd_benchmark(args) -> int:
    out = _out_dir(args)
    with open(args.config) as fh:
        try:
            cfg_doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"benchmark config is not valid JSON: {exc}")
    unknown = set(cfg_doc) - _BENCHMARK_KEYS
    if unknown:
        raise SchemaError(f"unknown benchmark config keys: {sorted(unknown)}")
    for key in ("grid", "weights", "n_cases"):
        if key not in cfg_doc:
            raise SchemaError(f"benchmark config missing '{key}'")
    grid = load_grid(cfg_doc["grid"])
    net = load_network(cfg_doc["weights"])
    spec = AllocationSpec(
        d_min=np.asarray(cfg_doc.get("d_min", grid.d_min), dtype=float),
        d_max=np.asarray(cfg_doc.get("d_max", grid.d_max), dtype=float),
        delta=cfg_doc.get("delta"),
        forecast_fraction=cfg_doc.get("forecast_fraction",
                                      0.9 if "delta" not in cfg_doc else None),
    )
    dca_cfg = DcaConfig(rho=1.0,
                        eps_tol=cfg_doc.get("eps_tol", 1e-8),
                        max_iters=cfg_doc.get("max_iters", 200_000),
                        comp_tol=cfg_doc.get("comp_tol", 1e-6))
    summary = benchmark(
        grid, net, spec, dca_cfg, n_cases=int(cfg_doc["n_cases"]),
        base_seed=int(cfg_doc.get("seed", 0)),
        gap_threshold=float(cfg_doc.get("gap_threshold", 0.05)),
        baseline_best_of=int(cfg_doc.get("baseline_best_of", 1)),
        out_dir=out, jobs=args.jobs,
        certify_kwargs={"starts": int(cfg_doc.get("starts", 3))},
    )
    write_summary(summary, os.path.join(out, "summary.csv"))
    with open(args.config) as fh:
        resolved = json.load(fh)
    resolved["jobs"] = args.jobs
    resolved["out_dir"] = out
    with open(os.path.join(out, "resolved_config.json"), "w") as fh:
        json.dump(resolved, fh, indent=2)
        fh.write("\n")
    print(f"{len(summary.reports)} cases, success rate "
          f"{summary.success_rate:.2%} at gap <= {summary.gap_threshold:.0%}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _add_domain_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lower", type=_vector, required=True,
                   help="domain lower bounds, comma separated")
    p.add_argument("--upper", type=_vector, required=True,
                   help="domain upper bounds, comma separated")
    p.add_argument("--delta", type=float, default=None,
                   help="fixed total (sum of inputs)")
    p.add_argument("--forecast-fraction", type=float, default=None,
                   help="total as a fraction of sum(upper)")


def _add_dca_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps-tol", type=float, default=1e-8,
                   help="stop when the objective decrease drops below this")
    p.add_argument("--max-iters", type=int, default=200_000)
    p.add_argument("--comp-tol", type=float, default=1e-6,
                   help="complementarity acceptance threshold")
    p.add_argument("--log-every", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reluopt",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="label demand samples via dispatch")
    p.add_argument("--grid", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="fit a charge surrogate")
    p.add_argument("--dataset", required=True)
    p.add_argument("--arch", type=_int_list, required=True,
                   help="hidden widths, e.g. 20,20")
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=0,
                   help="0 means full batch")
    p.add_argument("--init-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rho", help="certify a penalty for a weight file")
    p.add_argument("--weights", required=True)
    _add_domain_flags(p)
    _add_dca_flags(p)
    p.add_argument("--starts", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_rho)

    p = sub.add_parser("solve", help="run the DC iteration at a given penalty")
    p.add_argument("--weights", required=True)
    _add_domain_flags(p)
    _add_dca_flags(p)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--init-candidates", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help="exact optimum by pattern enumeration")
    p.add_argument("--weights", required=True)
    _add_domain_flags(p)
    p.add_argument("--cap", type=int, default=16,
                   help="maximum hidden-neuron count")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="price an allocation via dispatch")
    p.add_argument("--grid", required=True)
    p.add_argument("--allocation", type=_vector, required=True,
                   help="data-center demands, comma separated")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("benchmark", help="repeated end-to-end allocation runs")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SizeCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIZE
    except _INFEASIBLE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except _CONVERGENCE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
