"""
Dolan–Moré 性能曲线：以每次牛顿迭代耗时为代价
"""
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

from ..core.errors import ProblemValidationError, ProfileMismatchError
from .sweep import read_report

PROBLEM_KEY = ("family", "n_x", "n_u", "T")


@dataclass
class ProfilePoint:
    solver: str
    ratio: float
    fraction: float


def load_reports(paths: Iterable[Union[str, Path]]) -> List[dict]:
    rows: List[dict] = []
    for path in paths:
        rows.extend(read_report(path))
    return rows


def _cost(row: dict, cost_key: str) -> float:
    if str(row.get("status", "Converged")) != "Converged":
        return math.inf
    value = float(row[cost_key])
    return value if math.isfinite(value) else math.inf


def _ratio(cost: float, best: float) -> float:
    if not math.isfinite(cost):
        return math.inf
    if best == 0.0:
        return 1.0 if cost == 0.0 else math.inf
    return cost / best


def perf_profile(rows: Iterable[dict], cost_key: str = "time_per_iter_us") -> List[ProfilePoint]:
    """每个求解器在各个比值断点处、代价不超过 ratio·最优 的问题比例

    未收敛的问题代价视为无穷大。

    Raises:
        ProfileMismatchError: 各求解器覆盖的问题集合不一致
    """
    costs: Dict[str, Dict[Tuple, float]] = defaultdict(dict)
    for row in rows:
        key = tuple(str(row[k]) for k in PROBLEM_KEY)
        costs[str(row["solver"])][key] = _cost(row, cost_key)
    if not costs:
        raise ProblemValidationError("reports", "报告中没有数据")

    problem_sets = [set(c) for c in costs.values()]
    union = set.union(*problem_sets)
    common = set.intersection(*problem_sets)
    if union != common:
        raise ProfileMismatchError(union - common)

    problems = sorted(common)
    ratios: Dict[str, List[float]] = {s: [] for s in costs}
    for p in problems:
        best = min(costs[s][p] for s in costs)
        for s in costs:
            ratios[s].append(_ratio(costs[s][p], best))

    # 比值 1 总在断点中，全部未收敛时每个求解器仍有一条 0 曲线
    breakpoints = sorted({1.0} | {r for rs in ratios.values() for r in rs if math.isfinite(r)})
    n_p = len(problems)
    points = []
    for s in sorted(ratios):
        for tau in breakpoints:
            points.append(ProfilePoint(s, tau, sum(r <= tau for r in ratios[s]) / n_p))
    return points
