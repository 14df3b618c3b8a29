"""Variational unit commitment with Pauli correlation encoding.

A parameterized circuit encodes an N x T commitment schedule in k-body
Pauli correlators. Training minimizes an upper-level cost whose inner
economic dispatch is a convex QP; gradients come from the QP duals and
the parameter-shift rule.
"""

from .bilevel import TrainConfig, TrainResult, postprocess, reserve_penalty, train, upper_gradient, upper_objective
from .circuit import PauliString, build_ansatz, correlators, param_shift_grad, simulate
from .dispatch import DispatchContext, assemble, dispatch_cost, grad_value_wrt_commitments, solve_dispatch
from .estimator import PCEUnitCommitment, check_instance, check_schedule
from .instances import (
    BUILTIN_NAMES,
    REFERENCE_COSTS,
    GeneratorUnit,
    UcInstance,
    builtin,
    count_constraints,
    load_instance,
    loads_instance,
    resolve_instance,
    save_instance,
)
from .pce import build_correlators, decode_grad, decode_soft, harden, select_qubit_count
from .qp import AdmmSolver, QpProblem, QpSettings, QpSolution, kkt_residuals
from .reference import check_feasibility, exhaustive_solve, gap_percent, summarize, violation_percentage

__version__ = "0.1.0"
