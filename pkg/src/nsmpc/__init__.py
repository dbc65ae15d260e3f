"""
nsmpc - 基于稀疏零空间基与虚拟控制的 MPC 内点法求解器
"""
from .config import BenchConfig, SolverOptions
from .core.models import SolveResult, SolveStatus
from .core.problem import MpcProblem, StructuredQp, assemble_qp, load_problem, objective_value
from .core.solvers import ClassicalMpcSolver, NullSpaceMpcSolver, make_solver

__version__ = "0.1.0"

__all__ = [
    "BenchConfig",
    "SolverOptions",
    "SolveResult",
    "SolveStatus",
    "MpcProblem",
    "StructuredQp",
    "assemble_qp",
    "load_problem",
    "objective_value",
    "NullSpaceMpcSolver",
    "ClassicalMpcSolver",
    "make_solver",
]
