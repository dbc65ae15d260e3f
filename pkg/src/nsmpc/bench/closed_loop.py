"""
闭环仿真：每个控制步求解 QP，只施加第一阶段的原始控制
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from loguru import logger

from ..core.problem import MpcProblem, stage_cost


@dataclass
class StepRecord:
    step: int
    x: np.ndarray
    u: np.ndarray
    objective: float
    stage_cost: float
    iterations: int
    factorizations: int
    status: str
    solve_time: float
    max_virtual: float


@dataclass
class ClosedLoopLog:
    records: List[StepRecord] = field(default_factory=list)
    final_state: Optional[np.ndarray] = None
    aborted: bool = False
    message: str = ""

    @property
    def iterations(self) -> List[int]:
        return [r.iterations for r in self.records]

    @property
    def states(self) -> np.ndarray:
        return np.array([r.x for r in self.records])

    @property
    def controls(self) -> np.ndarray:
        return np.array([r.u for r in self.records])

    def to_rows(self) -> List[dict]:
        rows = []
        for r in self.records:
            rows.append({
                "step": r.step,
                "status": r.status,
                "iters": r.iterations,
                "factorizations": r.factorizations,
                "objective": r.objective,
                "stage_cost": r.stage_cost,
                "solve_us": r.solve_time * 1e6,
                "max_virtual": r.max_virtual,
                "x": " ".join(f"{v:.9g}" for v in r.x),
                "u": " ".join(f"{v:.9g}" for v in r.u),
            })
        return rows


def closed_loop(
    prob: MpcProblem,
    solver,
    n_steps: int,
    on_step: Optional[Callable[[StepRecord], None]] = None,
) -> ClosedLoopLog:
    """滚动时域闭环

    Args:
        solver: 带 solve(x0) 方法的求解器对象
        on_step: 每步完成后的回调（用于进度显示）

    求解失败时停止，返回已记录的部分日志。
    """
    log = ClosedLoopLog()
    x = prob.x0.copy()
    for step in range(n_steps):
        result = solver.solve(x)
        u = result.first_control
        record = StepRecord(
            step=step,
            x=x.copy(),
            u=u,
            objective=result.objective,
            stage_cost=stage_cost(prob, x, u),
            iterations=result.iterations,
            factorizations=result.factorizations,
            status=result.status.value,
            solve_time=result.solve_time,
            max_virtual=result.max_virtual,
        )
        log.records.append(record)
        if on_step is not None:
            on_step(record)
        logger.debug(
            f"[#loop] step={step} J={record.objective:.6g} l={record.stage_cost:.6g} "
            f"iters={record.iterations} status={record.status}"
        )
        if not result.converged:
            log.aborted = True
            log.message = f"第 {step} 步求解失败: {result.status.value} {result.message}".strip()
            logger.error(f"[#loop] {log.message}")
            break
        x = prob.A_xe @ x + prob.B_ue @ u + prob.c
    log.final_state = x
    return log
