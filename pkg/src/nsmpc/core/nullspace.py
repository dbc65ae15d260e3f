"""
A_e 的稀疏零空间基 N 及离线投影 NᵀHN、A_iN

N 把投影变量 z = [z_0, …, z_{T-1}] 映射为
û_k = z_k + C z_{k-1}，x_{k+1} = B_hat z_k，其中 C = -B_hat⁻¹ A_xe B_hat，
因此对任意 z 都有 A_e N z = 0。
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from loguru import logger

from .augment import Augmentation, solve_Bhat
from .blockla import BlockTriDiagSym, block_tridiag_from_products
from .errors import DimensionError, ProblemValidationError, StateError
from .problem import StructuredQp


@dataclass(frozen=True)
class NullBasis:
    """零空间基，按块结构保存，不形成稠密 N"""
    C: np.ndarray
    B_hat: np.ndarray
    T: int

    @property
    def n_x(self) -> int:
        return self.B_hat.shape[0]

    def apply(self, z: np.ndarray) -> np.ndarray:
        """N·z"""
        Z = self._blocks(z, "z")
        U = Z.copy()
        U[1:] += Z[:-1] @ self.C.T
        X = Z @ self.B_hat.T
        return np.hstack([U, X]).reshape(-1)

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        """Nᵀ·v，第 k 块为 v_{û_k} + B_hatᵀ v_{x_{k+1}} + Cᵀ v_{û_{k+1}}"""
        v = np.asarray(v, dtype=float)
        n_x = self.n_x
        if v.shape != (2 * self.T * n_x,):
            raise DimensionError("v", (2 * self.T * n_x,), v.shape)
        V = v.reshape(self.T, 2 * n_x)
        Vu, Vx = V[:, :n_x], V[:, n_x:]
        out = Vu + Vx @ self.B_hat
        out[:-1] += Vu[1:] @ self.C
        return out.reshape(-1)

    def densify(self) -> np.ndarray:
        """稠密 N，维数 2T·n_x × T·n_x"""
        n_x, T = self.n_x, self.T
        N = np.zeros((2 * T * n_x, T * n_x))
        I = np.eye(n_x)
        for k in range(T):
            row = 2 * k * n_x
            col = k * n_x
            N[row:row + n_x, col:col + n_x] = I
            N[row + n_x:row + 2 * n_x, col:col + n_x] = self.B_hat
            if k + 1 < T:
                N[row + 2 * n_x:row + 3 * n_x, col:col + n_x] = self.C
        return N

    def _blocks(self, z: np.ndarray, name: str) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.T * self.n_x,):
            raise DimensionError(name, (self.T * self.n_x,), z.shape)
        return z.reshape(self.T, self.n_x)


@dataclass(frozen=True)
class Projections:
    """离线投影结果

    A_iN 的阶段行 k 在列块 k-1 上为 M3、在列块 k 上为 B_s（k = 0 时只有 B_s），
    末端行在列块 T-1 上为 A_f B_hat。
    """
    basis: NullBasis
    NHN: BlockTriDiagSym
    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray
    B_s: np.ndarray
    AfB: np.ndarray

    @property
    def T(self) -> int:
        return self.basis.T

    @property
    def m_s(self) -> int:
        return self.B_s.shape[0]

    @property
    def m_f(self) -> int:
        return self.AfB.shape[0]

    @property
    def m(self) -> int:
        return self.T * self.m_s + self.m_f

    def densify_AiN(self) -> np.ndarray:
        T, n_x, m_s = self.T, self.basis.n_x, self.m_s
        out = np.zeros((self.m, T * n_x))
        for k in range(T):
            rows = slice(k * m_s, (k + 1) * m_s)
            out[rows, k * n_x:(k + 1) * n_x] = self.B_s
            if k > 0:
                out[rows, (k - 1) * n_x:k * n_x] = self.M3
        out[T * m_s:, (T - 1) * n_x:] = self.AfB
        return out


def build_basis(aug: Augmentation, A_xe: np.ndarray, T: int) -> NullBasis:
    """构造零空间基，C 通过 solve_Bhat 求得"""
    A_xe = np.asarray(A_xe, dtype=float)
    if A_xe.shape != (aug.n_x, aug.n_x):
        raise DimensionError("A_xe", (aug.n_x, aug.n_x), A_xe.shape)
    C = -solve_Bhat(aug, A_xe @ aug.B_hat)
    return NullBasis(C=C, B_hat=aug.B_hat, T=int(T))


def project_hessian(
    basis: NullBasis,
    U_hat: np.ndarray,
    Q: np.ndarray,
    S: np.ndarray,
    Q_f: np.ndarray,
) -> BlockTriDiagSym:
    """NᵀHN 的块三对角形式

    M1 = Q B_hat + S C，M2 = Sᵀ B_hat + U_hat C；
    对角块 U_hat + B_hatᵀ M1 + Cᵀ M2，末块 U_hat + B_hatᵀ Q_f B_hat，次对角块 M2。
    """
    T, n_x = basis.T, basis.n_x
    for name, M in (("U_hat", U_hat), ("Q", Q), ("S", S), ("Q_f", Q_f)):
        if M.shape != (n_x, n_x):
            raise DimensionError(name, (n_x, n_x), M.shape)
    B_hat, C = basis.B_hat, basis.C
    M1, M2 = _cost_products(basis, Q, S, U_hat)

    diag = np.repeat(U_hat[None, :, :], T, axis=0)
    diag[:-1] += B_hat.T @ M1 + C.T @ M2
    diag[-1] += B_hat.T @ Q_f @ B_hat
    subdiag = np.repeat(M2[None, :, :], T - 1, axis=0)
    return block_tridiag_from_products([diag], [subdiag], T, n_x)


def _cost_products(basis: NullBasis, Q, S, U_hat):
    M1 = Q @ basis.B_hat + S @ basis.C
    M2 = S.T @ basis.B_hat + U_hat @ basis.C
    return M1, M2


def project_inequalities(
    basis: NullBasis,
    A_s: np.ndarray,
    B_s: np.ndarray,
    A_f: np.ndarray,
) -> tuple:
    """A_iN 的非零块：(M3, B_s, A_f B_hat)，M3 = A_s B_hat + B_s C"""
    n_x = basis.n_x
    if A_s.shape[1] != n_x or B_s.shape != (A_s.shape[0], n_x) or A_f.shape[1] != n_x:
        raise DimensionError("不等式块", f"(m, {n_x})", (A_s.shape, B_s.shape, A_f.shape))
    M3 = A_s @ basis.B_hat + B_s @ basis.C
    return M3, B_s.copy(), A_f @ basis.B_hat


def build_projections(basis: NullBasis, qp: StructuredQp) -> Projections:
    """离线计算全部投影，动态时不变时每个控制器只需一次"""
    if not qp.augmented or qp.n_p != basis.n_x or qp.T != basis.T:
        raise ProblemValidationError("qp", "零空间投影需要与基匹配的增广 QP")
    NHN = project_hessian(basis, qp.U, qp.Q, qp.S, qp.Q_f)
    M1, M2 = _cost_products(basis, qp.Q, qp.S, qp.U)
    M3, B_s, AfB = project_inequalities(basis, qp.A_s, qp.B_s, qp.A_f)
    logger.debug(f"[#nullspace] 投影完成: T={basis.T} b={basis.n_x} 阶段不等式行={B_s.shape[0]}")
    return Projections(basis=basis, NHN=NHN, M1=M1, M2=M2, M3=M3, B_s=B_s, AfB=AfB)


def compose_projected_phi(
    proj: Projections,
    xi: np.ndarray,
    out: Optional[BlockTriDiagSym] = None,
    allow_zero: bool = False,
) -> BlockTriDiagSym:
    """NᵀΦN = NᵀHN + (A_iN)ᵀ diag(Ξ) (A_iN)，按阶段累加

    Args:
        xi: Ξ = W⁻¹Λ 的对角元，排列与 b_i 相同
        out: 调用方持有的缓冲区，可在迭代间复用
        allow_zero: 允许 Ξ 中出现零（仅供 oracle 检查）

    Raises:
        StateError: Ξ 出现非正元素
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (proj.m,):
        raise DimensionError("xi", (proj.m,), xi.shape)
    bad = xi < 0 if allow_zero else xi <= 0
    if np.any(bad):
        raise StateError(f"Xi 存在 {int(np.count_nonzero(bad))} 个非正元素")

    T, m_s = proj.T, proj.m_s
    Xs = xi[:T * m_s].reshape(T, m_s)
    xf = xi[T * m_s:]
    B_s, M3 = proj.B_s, proj.M3

    diag = np.einsum("mi,km,mj->kij", B_s, Xs, B_s)
    diag[:-1] += np.einsum("mi,km,mj->kij", M3, Xs[1:], M3)
    diag[-1] += proj.AfB.T @ (xf[:, None] * proj.AfB)
    subdiag = np.einsum("mi,km,mj->kij", B_s, Xs[1:], M3)

    return block_tridiag_from_products(
        [proj.NHN.diag, diag], [proj.NHN.subdiag, subdiag], T, proj.basis.n_x, out=out
    )
