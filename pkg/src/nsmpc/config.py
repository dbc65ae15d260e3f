"""
配置：求解器参数与基准测试参数

缺省值来自包内的 config.toml，可用 --opts 传入的 JSON 覆盖。
"""
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import tomli

from .core.errors import ProblemValidationError

DEFAULT_CONFIG_PATH = Path(__file__).parent / "config.toml"

FAMILIES = ("random", "mass-spring", "file")
SOLVERS = ("nullspace", "classical")


def load_config(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """读取 TOML 配置文件，缺省读取包内 config.toml"""
    path = Path(path) if path else DEFAULT_CONFIG_PATH
    with open(path, "rb") as f:
        return tomli.load(f)


def _check_keys(cls, data: Mapping[str, Any], section: str) -> None:
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ProblemValidationError(f"{section}.{key}", "未知配置项")


@dataclass(frozen=True)
class SolverOptions:
    """内点法求解器参数"""
    eps: float = 1e-9
    eps_comp: float = 1e-10
    eps_feas: float = 1e-8
    i_max: int = 100
    tau: float = 0.995
    tau_affine: float = 1.0
    xi: float = 10.0
    single_alpha: bool = False
    recover_duals: bool = False
    squared_residual_test: bool = True
    virtual_weight: float = 1.0
    chol_shift: float = 0.0
    check_invariants: bool = False

    def __post_init__(self):
        if self.eps <= 0 or self.eps_comp <= 0 or self.eps_feas <= 0:
            raise ProblemValidationError("solver.eps", "阈值必须为正")
        if self.i_max < 1:
            raise ProblemValidationError("solver.i_max", "最大迭代次数必须 ≥ 1")
        if not 0.0 < self.tau <= 1.0 or not 0.0 < self.tau_affine <= 1.0:
            raise ProblemValidationError("solver.tau", "边界比例必须位于 (0, 1]")
        if self.xi <= 1.0:
            raise ProblemValidationError("solver.xi", "条件数阈值必须大于 1")
        if self.virtual_weight <= 0:
            raise ProblemValidationError("solver.virtual_weight", "虚拟控制权重必须为正")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SolverOptions":
        _check_keys(cls, data, "solver")
        return cls(**dict(data))

    @classmethod
    def from_config(cls, path: Optional[Union[str, Path]] = None) -> "SolverOptions":
        return cls.from_mapping(load_config(path).get("solver", {}))

    def with_overrides(self, overrides: Union[str, Mapping[str, Any], None]) -> "SolverOptions":
        """用 JSON 文本或字典覆盖部分参数"""
        if not overrides:
            return self
        if isinstance(overrides, str):
            try:
                overrides = json.loads(overrides)
            except json.JSONDecodeError as exc:
                raise ProblemValidationError("opts", f"JSON 解析失败: {exc}")
            if not isinstance(overrides, dict):
                raise ProblemValidationError("opts", "必须是 JSON 对象")
        _check_keys(SolverOptions, overrides, "solver")
        return replace(self, **overrides)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class BenchConfig:
    """基准测试参数，seed 完全确定生成的实例"""
    family: str = "random"
    n_x: int = 12
    n_u: int = 3
    T: int = 30
    n_steps: int = 50
    seed: int = 0
    solver: str = "nullspace"
    repeats: int = 5
    workers: int = 1
    dt: float = 0.5
    state_bound: float = 4.0
    input_bound: float = 0.5
    random_x0: float = 0.2
    mass_spring_x0: float = 1.0
    out: Optional[str] = None
    format: str = "csv"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ProblemValidationError("bench.family", f"应为 {FAMILIES} 之一，实际为 {self.family}")
        if self.solver not in SOLVERS:
            raise ProblemValidationError("bench.solver", f"应为 {SOLVERS} 之一，实际为 {self.solver}")
        if self.format not in ("csv", "json"):
            raise ProblemValidationError("bench.format", f"应为 csv 或 json，实际为 {self.format}")
        if self.n_x < 1 or self.n_u < 1 or self.n_u > self.n_x:
            raise ProblemValidationError("bench.n_u", f"要求 1 ≤ n_u ≤ n_x，实际 n_u={self.n_u}, n_x={self.n_x}")
        if self.T < 1 or self.repeats < 1 or self.workers < 1:
            raise ProblemValidationError("bench.T", "T、repeats 与 workers 必须 ≥ 1")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "BenchConfig":
        _check_keys(cls, data, "bench")
        return cls(**dict(data))

    @classmethod
    def from_config(cls, path: Optional[Union[str, Path]] = None, **overrides) -> "BenchConfig":
        """读取 [bench] 段，非 None 的关键字参数覆盖文件中的值"""
        data = dict(load_config(path).get("bench", {}))
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(data)
