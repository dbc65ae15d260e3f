"""
A_e 的结构化 QR 分解、初始可行点与等式对偶恢复

按条件数估计（三角因子对角线最大与最小绝对值之比）选择主元列：
    P1  κ_B < ξ            主元为全部 û_k，其余变量取零
    P2  κ_B ≥ ξ, κ_A < ξ   主元为 [û_0, x_1, …, x_{T-1}]，D = [û_1, …, û_{T-1}, x_T]
    P3  其余情形            主元为全部 x_k，对 (I, -A_xe) 阶梯做带状 Householder QR
V = QᵀD 从不计算：自由变量一律取零。
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np
from loguru import logger
from scipy.linalg import qr, solve_triangular

from .augment import Augmentation, solve_Bhat, solve_Bhat_transpose
from .errors import DimensionError


class QrCase(str, Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"


def diagonal_ratio(R: np.ndarray) -> float:
    d = np.abs(np.diag(R))
    if d.min() == 0.0:
        return float("inf")
    return float(d.max() / d.min())


@dataclass(frozen=True)
class StructuredQrAe:
    """A_e 的结构化 QR 因子，只保存所选情形需要的部分"""
    case: QrCase
    aug: Augmentation
    T: int
    kappa_B: float
    kappa_A: float
    xi: float
    Q_xe: Optional[np.ndarray] = None
    R_xe: Optional[np.ndarray] = None
    band_Q: List[np.ndarray] = field(default_factory=list)
    band_R: List[np.ndarray] = field(default_factory=list)
    band_F: List[np.ndarray] = field(default_factory=list)

    @property
    def n_x(self) -> int:
        return self.aug.n_x

    @property
    def n(self) -> int:
        return 2 * self.T * self.n_x

    def _solve_A(self, rhs):
        return solve_triangular(self.R_xe, self.Q_xe.T @ rhs, check_finite=False)

    def _solve_A_transpose(self, rhs):
        return self.Q_xe @ solve_triangular(self.R_xe, rhs, trans="T", check_finite=False)


def factorize_Ae(aug: Augmentation, A_xe: np.ndarray, T: int, xi: float = 10.0) -> StructuredQrAe:
    """按三种置换情形分解 A_e"""
    A_xe = np.asarray(A_xe, dtype=float)
    n_x = aug.n_x
    if A_xe.shape != (n_x, n_x):
        raise DimensionError("A_xe", (n_x, n_x), A_xe.shape)

    kappa_B = diagonal_ratio(aug.R_hat)
    Q_xe, R_xe = qr(A_xe)
    kappa_A = diagonal_ratio(R_xe)

    if kappa_B < xi:
        fac = StructuredQrAe(QrCase.P1, aug, T, kappa_B, kappa_A, xi)
    elif kappa_A < xi:
        fac = StructuredQrAe(QrCase.P2, aug, T, kappa_B, kappa_A, xi, Q_xe=Q_xe, R_xe=R_xe)
    else:
        band_Q, band_R, band_F = _banded_qr(A_xe, T)
        fac = StructuredQrAe(
            QrCase.P3, aug, T, kappa_B, kappa_A, xi,
            band_Q=band_Q, band_R=band_R, band_F=band_F,
        )
    logger.debug(f"[#eqinit] 情形 {fac.case.value}: kappa_B={kappa_B:.3e} kappa_A={kappa_A:.3e} xi={xi}")
    return fac


def _banded_qr(A_xe: np.ndarray, T: int):
    """下块双对角阶梯 [I; -A; I; -A; …] 的逐列块 Householder QR

    第 k 步对 [D_k; -A] 做 QR，把 Q_kᵀ 作用到下一列块 [0; I]，
    得到上方填充块 F_k 与下一个对角块 D_{k+1}。
    """
    n = A_xe.shape[0]
    D = np.eye(n)
    next_col = np.vstack([np.zeros((n, n)), np.eye(n)])
    band_Q, band_R, band_F = [], [], []
    for _ in range(T - 1):
        Qk, Rk = qr(np.vstack([D, -A_xe]))
        filled = Qk.T @ next_col
        band_Q.append(Qk)
        band_R.append(Rk[:n])
        band_F.append(filled[:n])
        D = filled[n:]
    Qk, Rk = qr(D)
    band_Q.append(Qk)
    band_R.append(Rk)
    return band_Q, band_R, band_F


def _rhs_blocks(fac: StructuredQrAe, b_e: np.ndarray) -> np.ndarray:
    b_e = np.asarray(b_e, dtype=float)
    if b_e.shape != (fac.T * fac.n_x,):
        raise DimensionError("b_e", (fac.T * fac.n_x,), b_e.shape)
    return b_e.reshape(fac.T, fac.n_x)


def solve_feasible_point(fac: StructuredQrAe, b_e: np.ndarray) -> np.ndarray:
    """返回满足 A_e y0 = b_e 的 y0，非主元变量取零"""
    T, n_x = fac.T, fac.n_x
    Bk = _rhs_blocks(fac, b_e)
    U = np.zeros((T, n_x))
    X = np.zeros((T, n_x))

    if fac.case is QrCase.P1:
        U[:] = -solve_Bhat(fac.aug, Bk.T).T
    elif fac.case is QrCase.P2:
        # X[k] 存放 x_{k+1}；x_T 为自由变量
        if T > 1:
            X[T - 2] = -fac._solve_A(Bk[T - 1])
            for k in range(T - 2, 0, -1):
                X[k - 1] = fac._solve_A(X[k] - Bk[k])
        U[0] = solve_Bhat(fac.aug, X[0] - Bk[0])
    else:
        rhs = Bk.copy()
        for k in range(T - 1):
            pair = fac.band_Q[k].T @ np.concatenate([rhs[k], rhs[k + 1]])
            rhs[k], rhs[k + 1] = pair[:n_x], pair[n_x:]
        rhs[T - 1] = fac.band_Q[T - 1].T @ rhs[T - 1]
        X[T - 1] = solve_triangular(fac.band_R[T - 1], rhs[T - 1], check_finite=False)
        for k in range(T - 2, -1, -1):
            X[k] = solve_triangular(
                fac.band_R[k], rhs[k] - fac.band_F[k] @ X[k + 1], check_finite=False
            )
    return np.hstack([U, X]).reshape(-1)


def recover_equality_duals(fac: StructuredQrAe, v: np.ndarray) -> np.ndarray:
    """由 A_eᵀλ = v 的主元列方程求 λ（v 通常为 ΦΔy - r_1）

    对相容的右端项结果精确；仅使用 v 在主元列上的分量。
    """
    T, n_x = fac.T, fac.n_x
    v = np.asarray(v, dtype=float)
    if v.shape != (fac.n,):
        raise DimensionError("v", (fac.n,), v.shape)
    V = v.reshape(T, 2 * n_x)
    Vu, Vx = V[:, :n_x], V[:, n_x:]
    lam = np.zeros((T, n_x))

    if fac.case is QrCase.P1:
        lam[:] = -solve_Bhat_transpose(fac.aug, Vu.T).T
    elif fac.case is QrCase.P2:
        lam[0] = -solve_Bhat_transpose(fac.aug, Vu[0])
        for k in range(1, T):
            # x_k 列：λ_{k-1} - A_xeᵀ λ_k = v_{x_k}
            lam[k] = fac._solve_A_transpose(lam[k - 1] - Vx[k - 1])
    else:
        s = np.zeros((T, n_x))
        s[0] = solve_triangular(fac.band_R[0], Vx[0], trans="T", check_finite=False)
        for k in range(1, T):
            s[k] = solve_triangular(
                fac.band_R[k], Vx[k] - fac.band_F[k - 1].T @ s[k - 1], trans="T", check_finite=False
            )
        lam[T - 1] = fac.band_Q[T - 1] @ s[T - 1]
        lam[:T - 1] = s[:T - 1]
        for k in range(T - 2, -1, -1):
            pair = fac.band_Q[k] @ np.concatenate([lam[k], lam[k + 1]])
            lam[k], lam[k + 1] = pair[:n_x], pair[n_x:]
    return lam.reshape(-1)
