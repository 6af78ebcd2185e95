"""Optimization over trained ReLU networks by difference-of-convex programming.

The pieces, bottom to top:

- ``network``: trained-network data type, evaluation, activation traces.
- ``training``: gradient-descent fitting of charge surrogates.
- ``general_form``: stacked matrix form of the network optimization problem.
- ``qp``: convex QP/LP backend with dual extraction.
- ``dca``: the penalized difference-of-convex iteration.
- ``penalty``: penalty lower-bound certification and fine-tuning.
- ``oracle``: exact global optimum by activation-pattern enumeration.
- ``opf``: DC optimal power flow, locational prices, dataset generation.
- ``cases``: bundled grid fixtures.
- ``pipeline``: end-to-end demand-allocation runs and benchmarks.
"""

from .network import (ActivationTrace, LayerParams, ReluNetwork, forward,
                      forward_batch, load_network, save_network, trace)
from .general_form import (CostSpec, GeneralForm, InputDomain, assemble,
                           objective_value)
from .training import Dataset, TrainConfig, evaluate, load_dataset, \
    save_dataset, train
from .qp import QpSolution, QpSpec, solve_qp
from .dca import DcaConfig, DcaResult, build_subproblem, dc_objective, \
    dca_solve, initial_guess, write_trajectory
from .penalty import (PenaltyCertificate, certify, classify, fine_tune,
                      penalty_lower_bound, recover_duals_via_kkt,
                      sample_nondegenerate, solve_relaxation)
from .oracle import OracleResult, enumerate_solve, verify_point
from .opf import GridCase, OpfSolution, charge, generate_dataset, lmp, \
    load_grid, save_grid, solve_opf

__version__ = "0.1.0"
