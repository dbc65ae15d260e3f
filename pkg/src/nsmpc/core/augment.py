"""
虚拟控制：把 n_x × n_u 的传递矩阵补成可逆方阵

B_hat = [B_ue  Q_2·r_min]，其 QR 因子为 Q_hat = [Q_1 Q_2]，
R_hat = [[R, 0], [0, r_min·I]]。虚拟控制 u* 通过成对的不等式
u* ≥ 0、u* ≤ 0 约束为零（见 problem.assemble_qp）。
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from loguru import logger
from scipy.linalg import qr, solve_triangular

from .errors import DimensionError, RankError

RANK_TOL = 1e-12


@dataclass(frozen=True)
class Augmentation:
    """虚拟控制数据"""
    B_hat: np.ndarray
    Q_hat: np.ndarray
    R_hat: np.ndarray
    n_u: int
    n_ustar: int
    r_min: float
    U_hat: np.ndarray
    control_index: np.ndarray  # 原始控制在 û 中的位置
    virtual_index: np.ndarray  # 虚拟控制在 û 中的位置

    @property
    def n_x(self) -> int:
        return self.B_hat.shape[0]

    @property
    def kappa(self) -> float:
        """R_hat 对角线最大与最小绝对值之比，作为条件数估计"""
        d = np.abs(np.diag(self.R_hat))
        return float(d.max() / d.min())


def build(
    B_ue: np.ndarray,
    n_x: int,
    n_u: int,
    U_ctl: Optional[np.ndarray] = None,
    virtual_weight: float = 1.0,
) -> Augmentation:
    """构造虚拟控制

    Args:
        B_ue: 传递矩阵 (n_x × n_u)，列满秩
        U_ctl: 原始控制权重，缺省为单位阵
        virtual_weight: 虚拟控制权重块的缩放，U_hat = diag(U_ctl, virtual_weight·I)

    Raises:
        RankError: B_ue 列秩亏
    """
    B_ue = np.asarray(B_ue, dtype=float)
    if B_ue.shape != (n_x, n_u):
        raise DimensionError("B_ue", (n_x, n_u), B_ue.shape)
    if n_u > n_x:
        raise DimensionError("n_u", f"<= {n_x}", n_u)

    Q, R = qr(B_ue, mode="full")
    R_top = R[:n_u, :]
    r_diag = np.abs(np.diag(R_top))
    scale = max(np.linalg.norm(B_ue), 1.0)
    if n_u == 0 or np.any(r_diag < RANK_TOL * scale):
        raise RankError(f"B_ue 列秩亏，R 对角线绝对值: {r_diag}")

    r_min = float(r_diag.min())
    n_ustar = n_x - n_u

    B_hat = np.hstack([B_ue, Q[:, n_u:] * r_min])
    R_hat = np.zeros((n_x, n_x))
    R_hat[:n_u, :n_u] = R_top
    R_hat[n_u:, n_u:] = r_min * np.eye(n_ustar)

    U_ctl = np.eye(n_u) if U_ctl is None else np.asarray(U_ctl, dtype=float)
    U_hat = np.zeros((n_x, n_x))
    U_hat[:n_u, :n_u] = U_ctl
    U_hat[n_u:, n_u:] = virtual_weight * np.eye(n_ustar)

    aug = Augmentation(
        B_hat=B_hat,
        Q_hat=Q,
        R_hat=R_hat,
        n_u=n_u,
        n_ustar=n_ustar,
        r_min=r_min,
        U_hat=U_hat,
        control_index=np.arange(n_u),
        virtual_index=np.arange(n_u, n_x),
    )
    logger.debug(f"[#augment] n_x={n_x} n_u={n_u} n_ustar={n_ustar} r_min={r_min:.3e} kappa={aug.kappa:.3e}")
    return aug


def solve_Bhat(aug: Augmentation, rhs: np.ndarray) -> np.ndarray:
    """返回 B_hat⁻¹·rhs = R_hat⁻¹(Q_hat^T rhs)，不显式求逆"""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != aug.n_x:
        raise DimensionError("rhs", aug.n_x, rhs.shape[0])
    return solve_triangular(aug.R_hat, aug.Q_hat.T @ rhs, check_finite=False)


def solve_Bhat_transpose(aug: Augmentation, rhs: np.ndarray) -> np.ndarray:
    """返回 B_hat^{-T}·rhs = Q_hat R_hat^{-T} rhs"""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != aug.n_x:
        raise DimensionError("rhs", aug.n_x, rhs.shape[0])
    return aug.Q_hat @ solve_triangular(aug.R_hat, rhs, trans="T", check_finite=False)
