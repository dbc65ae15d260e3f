"""
块三对角对称矩阵的存储、分块 Cholesky 分解与分块三角求解

所有矩阵以堆叠的 numpy 数组保存：diag 形状 (T, b, b)，subdiag 形状 (T-1, b, b)，
其中 subdiag[k] 是块 (k+1, k)。
"""
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .errors import DimensionError, FactorizationError

SYMMETRY_TOL = 1e-12


@dataclass
class BlockTriDiagSym:
    """对称块三对角矩阵 Y"""
    diag: np.ndarray
    subdiag: np.ndarray

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=float)
        self.subdiag = np.asarray(self.subdiag, dtype=float)
        if self.diag.ndim != 3 or self.diag.shape[1] != self.diag.shape[2]:
            raise DimensionError("diag", "(T, b, b)", self.diag.shape)
        T, b = self.diag.shape[0], self.diag.shape[1]
        if T > 1 and self.subdiag.shape != (T - 1, b, b):
            raise DimensionError("subdiag", (T - 1, b, b), self.subdiag.shape)
        if T == 1:
            self.subdiag = self.subdiag.reshape(0, b, b)
        self.symmetrize()

    @classmethod
    def zeros(cls, T: int, b: int) -> "BlockTriDiagSym":
        return cls(np.zeros((T, b, b)), np.zeros((max(T - 1, 0), b, b)))

    @property
    def T(self) -> int:
        return self.diag.shape[0]

    @property
    def b(self) -> int:
        return self.diag.shape[1]

    def symmetrize(self) -> None:
        # 累加顺序会带来舍入级别的不对称
        self.diag = 0.5 * (self.diag + np.swapaxes(self.diag, 1, 2))

    def copy(self) -> "BlockTriDiagSym":
        return BlockTriDiagSym(self.diag.copy(), self.subdiag.copy())

    def densify(self) -> np.ndarray:
        T, b = self.T, self.b
        out = np.zeros((T * b, T * b))
        for k in range(T):
            out[k * b:(k + 1) * b, k * b:(k + 1) * b] = self.diag[k]
        for k in range(T - 1):
            rows = slice((k + 1) * b, (k + 2) * b)
            cols = slice(k * b, (k + 1) * b)
            out[rows, cols] = self.subdiag[k]
            out[cols, rows] = self.subdiag[k].T
        return out

    def matvec(self, v: np.ndarray) -> np.ndarray:
        V = _as_blocks(v, self.T, self.b)
        out = np.einsum("kij,kj->ki", self.diag, V)
        if self.T > 1:
            out[1:] += np.einsum("kij,kj->ki", self.subdiag, V[:-1])
            out[:-1] += np.einsum("kji,kj->ki", self.subdiag, V[1:])
        return out.reshape(-1)


@dataclass(frozen=True)
class BlockCholFactor:
    """分块 Cholesky 因子 L，L·L^T = Y"""
    diag_L: np.ndarray
    subdiag_L: np.ndarray

    @property
    def T(self) -> int:
        return self.diag_L.shape[0]

    @property
    def b(self) -> int:
        return self.diag_L.shape[1]

    def densify(self) -> np.ndarray:
        T, b = self.T, self.b
        out = np.zeros((T * b, T * b))
        for k in range(T):
            out[k * b:(k + 1) * b, k * b:(k + 1) * b] = self.diag_L[k]
        for k in range(T - 1):
            out[(k + 1) * b:(k + 2) * b, k * b:(k + 1) * b] = self.subdiag_L[k]
        return out


def _as_blocks(v: np.ndarray, T: int, b: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != T * b:
        raise DimensionError("rhs", T * b, v.shape[0])
    return v.reshape((T, b) + v.shape[1:])


def block_cholesky(Y: BlockTriDiagSym, shift: float = 0.0) -> BlockCholFactor:
    """按块递推计算 Cholesky 因子

    L_00 = CHOL(Y_00)；L_{i,i-1} 由 L_{i,i-1} L_{i-1,i-1}^T = Y_{i,i-1} 回代求得；
    L_ii = CHOL(Y_ii - L_{i,i-1} L_{i,i-1}^T)。

    Args:
        Y: 正定的块三对角矩阵
        shift: 对角平移量，仅用于鲁棒性实验

    Raises:
        FactorizationError: 某个对角块出现非正主元
    """
    T, b = Y.T, Y.b
    diag_L = np.empty_like(Y.diag)
    subdiag_L = np.empty_like(Y.subdiag)
    eye = np.eye(b)
    for i in range(T):
        block = Y.diag[i] + shift * eye
        if i > 0:
            subdiag_L[i - 1] = solve_triangular(
                diag_L[i - 1], Y.subdiag[i - 1].T, lower=True, check_finite=False
            ).T
            block = block - subdiag_L[i - 1] @ subdiag_L[i - 1].T
        try:
            diag_L[i] = cholesky(block, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise FactorizationError(i) from exc
    return BlockCholFactor(diag_L, subdiag_L)


def block_solve(L: BlockCholFactor, rhs: np.ndarray) -> np.ndarray:
    """求解 L L^T z = rhs，先前代后回代，代价随 T 线性增长"""
    T = L.T
    R = _as_blocks(rhs, T, L.b)
    z = np.empty_like(R)
    z[0] = solve_triangular(L.diag_L[0], R[0], lower=True, check_finite=False)
    for i in range(1, T):
        z[i] = solve_triangular(
            L.diag_L[i], R[i] - L.subdiag_L[i - 1] @ z[i - 1], lower=True, check_finite=False
        )
    x = np.empty_like(z)
    x[T - 1] = solve_triangular(L.diag_L[T - 1], z[T - 1], lower=True, trans="T", check_finite=False)
    for i in range(T - 2, -1, -1):
        x[i] = solve_triangular(
            L.diag_L[i], z[i] - L.subdiag_L[i].T @ x[i + 1], lower=True, trans="T", check_finite=False
        )
    return x.reshape(np.asarray(rhs).shape)


def block_tridiag_from_products(
    diag_parts: Iterable[np.ndarray],
    subdiag_parts: Iterable[np.ndarray],
    T: int,
    b: int,
    out: Optional[BlockTriDiagSym] = None,
) -> BlockTriDiagSym:
    """把逐阶段的块贡献累加成块三对角矩阵，不构造任何稠密 n × n 矩阵

    Args:
        diag_parts: 形状 (T, b, b) 的对角贡献
        subdiag_parts: 形状 (T-1, b, b) 的下次对角贡献
        out: 可复用的输出缓冲区
    """
    if out is None:
        out = BlockTriDiagSym.zeros(T, b)
    elif out.T != T or out.b != b:
        raise DimensionError("out", (T, b), (out.T, out.b))
    else:
        out.diag[...] = 0.0
        out.subdiag[...] = 0.0

    for part in diag_parts:
        if part.shape != out.diag.shape:
            raise DimensionError("diag 贡献", out.diag.shape, part.shape)
        out.diag += part
    for part in subdiag_parts:
        if part.shape != out.subdiag.shape:
            raise DimensionError("subdiag 贡献", out.subdiag.shape, part.shape)
        out.subdiag += part
    out.symmetrize()
    return out
