"""
求解器外观类：离线准备一次，每个控制步只替换 x0 相关的向量
"""
from time import perf_counter
from typing import Optional

import numpy as np
from loguru import logger

from ..config import SolverOptions
from . import augment, ipm
from .eqinit import factorize_Ae
from .errors import ProblemValidationError
from .models import SolveResult
from .nullspace import build_basis, build_projections
from .problem import MpcProblem, assemble_qp
from .reference import classical_solve


class NullSpaceMpcSolver:
    """零空间内点法求解器

    离线阶段：虚拟控制、零空间基、NᵀHN 与 A_iN 投影、A_e 的结构化 QR。
    """

    name = "nullspace"

    def __init__(self, prob: MpcProblem, opts: Optional[SolverOptions] = None):
        start = perf_counter()
        self.prob = prob
        self.opts = opts or SolverOptions()
        self.aug = augment.build(prob.B_ue, prob.n_x, prob.n_u, prob.U_ctl, self.opts.virtual_weight)
        self.qp = assemble_qp(prob, self.aug)
        self.basis = build_basis(self.aug, prob.A_xe, prob.T)
        self.proj = build_projections(self.basis, self.qp)
        self.fac = factorize_Ae(self.aug, prob.A_xe, prob.T, self.opts.xi)
        self.setup_time = perf_counter() - start
        logger.debug(f"[#setup] 零空间求解器准备完成，用时 {self.setup_time * 1e3:.2f} ms，QR 情形 {self.fac.case.value}")

    def solve(self, x0: Optional[np.ndarray] = None) -> SolveResult:
        qp = self.qp if x0 is None else self.qp.with_state(x0)
        return ipm.solve(qp, self.proj, self.fac, self.opts)


class ClassicalMpcSolver:
    """经典正规方程求解器，运行在原始（未增广）QP 上"""

    name = "classical"

    def __init__(self, prob: MpcProblem, opts: Optional[SolverOptions] = None):
        start = perf_counter()
        self.prob = prob
        self.opts = opts or SolverOptions()
        self.qp = assemble_qp(prob, None)
        self.setup_time = perf_counter() - start

    def solve(self, x0: Optional[np.ndarray] = None) -> SolveResult:
        qp = self.qp if x0 is None else self.qp.with_state(x0)
        return classical_solve(qp, self.opts)


SOLVER_TYPES = {
    NullSpaceMpcSolver.name: NullSpaceMpcSolver,
    ClassicalMpcSolver.name: ClassicalMpcSolver,
}


def make_solver(name: str, prob: MpcProblem, opts: Optional[SolverOptions] = None):
    if name not in SOLVER_TYPES:
        raise ProblemValidationError("solver", f"未知求解器: {name}")
    return SOLVER_TYPES[name](prob, opts)
