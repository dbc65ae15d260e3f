"""
计时扫描：对网格上的每个问题测量每次牛顿迭代的耗时

计时只包含求解循环；离线准备时间单独报告，问题生成与文件读写不计入。
"""
import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from statistics import median
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

from loguru import logger

from ..config import SolverOptions
from ..core.errors import NsmpcError, ProblemValidationError
from ..core.problem import MpcProblem
from ..core.solvers import make_solver
from .generators import gen_mass_spring, gen_random_system

AXES = ("n_u", "T", "n_x")


@dataclass
class SweepRow:
    family: str
    n_x: int
    n_u: int
    T: int
    solver: str
    status: str
    iters: int
    time_per_iter_us: float
    total_us: float
    setup_us: float
    factorizations_per_iter: float
    est_ops: int


def operation_counts(n_x: int, n_u: int, T: int, m_i: int) -> Dict[str, int]:
    """每次牛顿迭代的主要浮点运算量估计（只保留最高阶项）

    零空间路径：组装 (A_iN)ᵀΞ(A_iN)、一次 n_x 块的分块 Cholesky、两次投影求解。
    经典路径：组装并分解 (n_x+n_u) 块的 Φ、组装并分解 A_eΦ⁻¹A_eᵀ、两次求解。
    """
    b = n_x
    m_aug = m_i + 2 * (n_x - n_u)
    nullspace = T * (
        3 * 2 * m_aug * b * b          # 三组分块乘积
        + b ** 3 // 3 + 2 * b ** 3     # CHOL、次对角块回代与 L Lᵀ 修正
        + 2 * 4 * b * b                # 两次前代/回代
        + 2 * 2 * (2 * b) * b          # 两次 N·Δz 与 Nᵀ·v
    )
    g = n_x + n_u
    classical = T * (
        2 * m_i * g * g                # A_iᵀΞA_i
        + g ** 3 // 3                  # Φ 分块 Cholesky
        + 3 * (2 * g * g * n_x + 2 * n_x * n_x * g)  # Schur 补的三个块
        + n_x ** 3 // 3 + 2 * n_x ** 3  # Schur 补的分块 Cholesky
        + 2 * (4 * g * g + 4 * n_x * n_x)  # 两次求解
    )
    return {"nullspace": int(nullspace), "classical": int(classical)}


def grid_point(axis: str, value: int, n_x: int, n_u: int, T: int, ratio: Optional[int] = None):
    """网格点的 (n_x, n_u, T)；axis="n_x" 且给定 ratio 时 n_u = max(1, n_x // ratio)"""
    if axis not in AXES:
        raise ProblemValidationError("axis", f"应为 {AXES} 之一，实际为 {axis}")
    dims = {"n_x": n_x, "n_u": n_u, "T": T}
    dims[axis] = int(value)
    if axis == "n_x" and ratio:
        dims["n_u"] = max(1, dims["n_x"] // ratio)
    return dims["n_x"], dims["n_u"], dims["T"]


def make_problem(family: str, n_x: int, n_u: int, T: int, seed: int, **kwargs) -> MpcProblem:
    if family == "random":
        return gen_random_system(n_x, n_u, seed, T=T, **kwargs)
    if family == "mass-spring":
        if n_x % 2:
            raise ProblemValidationError("n_x", f"质量弹簧链的 n_x 必须为偶数，实际为 {n_x}")
        return gen_mass_spring(n_x // 2, n_u, seed, T=T, **kwargs)
    raise ProblemValidationError("family", f"扫描不支持的问题族: {family}")


def measure(prob: MpcProblem, solver_name: str, repeats: int, opts: SolverOptions, family: str) -> SweepRow:
    """重复 repeats 次，取中位数"""
    per_iter, totals, setups = [], [], []
    result = None
    for _ in range(repeats):
        solver = make_solver(solver_name, prob, opts)
        result = solver.solve()
        setups.append(solver.setup_time)
        totals.append(result.solve_time)
        per_iter.append(result.time_per_iteration)
    iters = result.iterations
    return SweepRow(
        family=family,
        n_x=prob.n_x,
        n_u=prob.n_u,
        T=prob.T,
        solver=solver_name,
        status=result.status.value,
        iters=iters,
        time_per_iter_us=median(per_iter) * 1e6,
        total_us=median(totals) * 1e6,
        setup_us=median(setups) * 1e6,
        factorizations_per_iter=result.factorizations / iters if iters else 0.0,
        est_ops=operation_counts(prob.n_x, prob.n_u, prob.T, prob.m_i)[solver_name],
    )


def _failed_row(family, n_x, n_u, T, solver_name, exc) -> SweepRow:
    return SweepRow(family, n_x, n_u, T, solver_name, f"Error: {exc}", 0, float("nan"),
                    float("nan"), float("nan"), 0.0, 0)


def timing_sweep(
    axis: str,
    grid: Sequence[int],
    n_x: int,
    n_u: int,
    T: int,
    solvers: Iterable[str] = ("nullspace", "classical"),
    family: str = "random",
    seed: int = 0,
    repeats: int = 5,
    opts: Optional[SolverOptions] = None,
    ratio: Optional[int] = None,
    workers: int = 1,
    on_row: Optional[Callable[[SweepRow], None]] = None,
) -> List[SweepRow]:
    """沿一个维度扫描网格，每个网格点、每个求解器输出一行

    单点失败记为带状态的行，扫描继续。workers > 1 时各点在线程池中并行，
    每个任务持有自己的求解器实例；计时默认顺序执行以减少噪声。
    """
    if not grid:
        raise ProblemValidationError("grid", "网格不能为空")
    opts = opts or SolverOptions()
    solvers = list(solvers)
    tasks = []
    for value in grid:
        dims = grid_point(axis, value, n_x, n_u, T, ratio)
        for solver_name in solvers:
            tasks.append((dims, solver_name))

    def run(task) -> SweepRow:
        (px, pu, pT), solver_name = task
        try:
            prob = make_problem(family, px, pu, pT, seed)
            row = measure(prob, solver_name, repeats, opts, family)
        except NsmpcError as exc:
            logger.warning(f"[#sweep] 跳过 n_x={px} n_u={pu} T={pT} {solver_name}: {exc}")
            row = _failed_row(family, px, pu, pT, solver_name, exc)
        logger.info(
            f"[#sweep] n_x={row.n_x} n_u={row.n_u} T={row.T} {solver_name}: "
            f"{row.status} iters={row.iters} {row.time_per_iter_us:.1f} us/iter"
        )
        if on_row is not None:
            on_row(row)
        return row

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, tasks))
    return [run(task) for task in tasks]


REPORT_COLUMNS = [f.name for f in fields(SweepRow)]


def write_report(rows: Iterable, path: Union[str, Path], fmt: str = "csv") -> Path:
    """把行写成 CSV 或 JSON；rows 可以是数据类或字典"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dict_rows = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in rows]
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as f:
            json.dump(dict_rows, f, indent=2)
    elif fmt == "csv":
        columns = list(dict_rows[0].keys()) if dict_rows else REPORT_COLUMNS
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            writer.writerows(dict_rows)
    else:
        raise ProblemValidationError("format", f"应为 csv 或 json，实际为 {fmt}")
    logger.info(f"[#report] 已写入 {len(dict_rows)} 行: {path}")
    return path


def read_report(path: Union[str, Path]) -> List[dict]:
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
