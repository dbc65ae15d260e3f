"""nsmpc 数据模型"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np


class SolveStatus(str, Enum):
    CONVERGED = "Converged"
    ITER_LIMIT = "IterLimit"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class IpmState:
    """内点法迭代状态，w 与 lam 始终严格为正"""
    y: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    lam_e: Optional[np.ndarray] = None
    mu: float = 0.0
    sigma: float = 0.0
    iter: int = 0
    ineq_residual: float = 0.0  # ‖k₃‖∞
    kkt_norm: Optional[float] = None  # ‖K‖∞，仅在恢复等式对偶时可用
    residual_history: List[float] = field(default_factory=list)


@dataclass
class IterationRecord:
    """单次牛顿迭代的统计"""
    iteration: int
    mu: float
    sigma: float
    alpha_primal: float
    alpha_dual: float
    residual: float
    wall_time: float  # 秒
    core_time: float  # 组装 NᵀΦN、分解与两次求解所用时间


@dataclass
class SolveResult:
    """单次 QP 求解结果"""
    status: SolveStatus
    y_star: np.ndarray
    u_trajectory: np.ndarray  # (T, n_u)，已去掉虚拟控制
    x_trajectory: np.ndarray  # (T, n_x)
    iterations: int
    factorizations: int
    residual: float  # 最终 ‖Nᵀr₁‖（或经典求解器的 ‖k₁‖）
    mu: float
    objective: float
    solve_time: float  # 秒
    iteration_times: List[float] = field(default_factory=list)
    core_times: List[float] = field(default_factory=list)
    eq_residuals: List[float] = field(default_factory=list)  # 每个迭代点的 ‖A_e y - b_e‖∞
    records: List[IterationRecord] = field(default_factory=list)
    w: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    lam_e: Optional[np.ndarray] = None
    max_virtual: float = 0.0
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED

    @property
    def time_per_iteration(self) -> float:
        """循环内每次牛顿迭代的平均耗时（秒）"""
        if not self.iteration_times:
            return 0.0
        return float(sum(self.iteration_times) / len(self.iteration_times))

    @property
    def first_control(self) -> np.ndarray:
        return self.u_trajectory[0].copy()
