"""Low-rank observability energies and structure-preserving model reduction
for linear systems with polynomial outputs (LPO systems)."""
from .benchmarks import build_convdiff, build_msd
from .cp_tensor import (CPVector, cp_compress, cp_eval, cp_pair_trace,
                        cp_symmetrize)
from .energy import (BallSpec, EnergyFunction, eval_energy, gradient_F,
                     moment_coefficient, objective_F, to_input_normal)
from .errors import NumericalError, UnstableSystemError, ValidationError
from .kron_solver import (build_observability_coefficients, choose_ell,
                          quadrature_rule, solve_kron_lowrank)
from .lyapunov import GramianPair, solve_lyapunov, solve_lyapunov_dual
from .mor import (ReducedModel, balanced_truncation, energy_based_reduce,
                  project_lpo, qobt_reduce, transfer_function)
from .simulation import InputSignal, Trajectory, error_metrics, simulate
from .stiefel import OptimizerConfig, StiefelResult, maximize_on_stiefel
from .system import LPOSystem

__version__ = "0.1.0"

__all__ = [
    "BallSpec", "CPVector", "EnergyFunction", "GramianPair", "InputSignal",
    "LPOSystem", "NumericalError", "OptimizerConfig", "ReducedModel",
    "StiefelResult", "Trajectory", "UnstableSystemError", "ValidationError",
    "balanced_truncation", "build_convdiff", "build_msd",
    "build_observability_coefficients", "choose_ell", "cp_compress",
    "cp_eval", "cp_pair_trace", "cp_symmetrize", "energy_based_reduce",
    "error_metrics", "eval_energy", "gradient_F", "maximize_on_stiefel",
    "moment_coefficient", "objective_F", "project_lpo", "qobt_reduce",
    "quadrature_rule", "simulate", "solve_kron_lowrank", "solve_lyapunov",
    "solve_lyapunov_dual", "to_input_normal", "transfer_function",
]
