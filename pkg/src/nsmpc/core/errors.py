"""
nsmpc 异常定义
"""
from typing import Iterable, Optional


class NsmpcError(Exception):
    """nsmpc 所有异常的基类"""


class ProblemValidationError(NsmpcError, ValueError):
    """问题数据校验失败，field 指出出错的字段"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DimensionError(NsmpcError, ValueError):
    """向量或矩阵尺寸不匹配"""

    def __init__(self, what: str, expected, got):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: 期望尺寸 {expected}，实际为 {got}")


class RankError(NsmpcError, ValueError):
    """矩阵秩亏（B_ue 或 A_xe 不满秩）"""


class FactorizationError(NsmpcError, ArithmeticError):
    """Cholesky 分解出现非正主元，block_index 为出错的块序号"""

    def __init__(self, block_index: Optional[int], message: str = ""):
        self.block_index = block_index
        text = message or "矩阵失去正定性"
        if block_index is not None:
            text = f"{text}（块 {block_index}）"
        super().__init__(text)


class StateError(NsmpcError, ValueError):
    """内点状态非法，例如 Xi 出现非正元素"""


class DesktopScaleError(NsmpcError, ValueError):
    """稠密 oracle 超出桌面规模限制"""


class ProfileMismatchError(NsmpcError, ValueError):
    """各求解器报告中的问题集合不一致"""

    def __init__(self, differences: Iterable):
        self.differences = sorted(differences)
        super().__init__(f"问题集合不一致: {self.differences}")
