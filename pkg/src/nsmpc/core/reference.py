"""
参考实现与 oracle

- classical_solve：经典正规方程路径。每次迭代分解块对角 Φ 与块三对角
  A_eΦ⁻¹A_eᵀ（两次分解），先求对偶 Δν 再恢复原始步。
- dense_newton_kkt：稠密求解完整的四块牛顿系统，用于校验消去公式。
- dense_assemble_qp / dense_equality_qp：独立编写的稠密组装器与等式约束 QP 求解。
"""
from dataclasses import dataclass
from time import perf_counter
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve

from ..config import SolverOptions
from .augment import Augmentation
from .blockla import BlockCholFactor, BlockTriDiagSym, block_cholesky, block_solve
from .errors import DesktopScaleError, FactorizationError
from .ipm import (
    convergence_check,
    duality_measure,
    mehrotra_sigma,
    step_lengths,
)
from .models import IpmState, IterationRecord, SolveResult, SolveStatus
from .problem import DenseQp, MpcProblem, StructuredQp, objective_value

DESK_SCALE_LIMIT = 2000
PHI_SHIFT = 1e-8


@dataclass
class ClassicalState(IpmState):
    """经典路径的迭代状态，λ_e（Δν 的累积）必不可少"""
    phi_factors: Optional[list] = None
    schur_factor: Optional[BlockCholFactor] = None


# ---- Φ 的分组：[u_0]、[(x_k, u_k)]_{k=1..T-1}、[x_T] ----

def _to_groups(qp: StructuredQp, v: np.ndarray) -> List[np.ndarray]:
    U, X = qp.split(v)
    groups = [U[0]]
    groups.extend(np.concatenate([X[k - 1], U[k]]) for k in range(1, qp.T))
    groups.append(X[qp.T - 1])
    return groups


def _from_groups(qp: StructuredQp, groups: List[np.ndarray]) -> np.ndarray:
    n_x = qp.n_x
    U = np.empty((qp.T, qp.n_p))
    X = np.empty((qp.T, n_x))
    U[0] = groups[0]
    for k in range(1, qp.T):
        X[k - 1] = groups[k][:n_x]
        U[k] = groups[k][n_x:]
    X[qp.T - 1] = groups[qp.T]
    return qp.stack(U, X)


def factor_phi(qp: StructuredQp, xi: np.ndarray) -> list:
    """按阶段分解 Φ = H + A_iᵀΞA_i 的各个对角块

    半正定的 Q_f 可能使末端块奇异，此时在该块对角线上加 PHI_SHIFT·max(1, max|Φ_k|) 后重试。
    平移只进入牛顿矩阵，残差仍按原始 H 计算。

    Raises:
        FactorizationError: 块序号为出错的分组
    """
    T, m_s = qp.T, qp.m_s
    Xs = xi[:T * m_s].reshape(T, m_s)
    xf = xi[T * m_s:]
    blocks = [qp.U + qp.B_s.T @ (Xs[0][:, None] * qp.B_s)]
    J = np.hstack([qp.A_s, qp.B_s])
    H_stage = np.block([[qp.Q, qp.S], [qp.S.T, qp.U]])
    blocks.extend(H_stage + np.einsum("mi,km,mj->kij", J, Xs[1:], J))
    blocks.append(qp.Q_f + qp.A_f.T @ (xf[:, None] * qp.A_f))

    return [_factor_block(idx, block) for idx, block in enumerate(blocks)]


def _factor_block(idx: int, block: np.ndarray):
    try:
        return cho_factor(block, lower=True, check_finite=False)
    except LinAlgError:
        shift = PHI_SHIFT * max(1.0, np.abs(block).max())
    logger.debug(f"[#classical] Φ 块 {idx} 奇异，对角平移 {shift:.1e} 后重试")
    try:
        return cho_factor(block + shift * np.eye(block.shape[0]), lower=True, check_finite=False)
    except LinAlgError as exc:
        raise FactorizationError(idx, "Φ 分块失去正定性") from exc


def _phi_solve(qp: StructuredQp, factors: list, v: np.ndarray) -> np.ndarray:
    groups = _to_groups(qp, v)
    return _from_groups(qp, [cho_solve(f, g, check_finite=False) for f, g in zip(factors, groups)])


def schur_complement(qp: StructuredQp, factors: list) -> BlockTriDiagSym:
    """A_eΦ⁻¹A_eᵀ 的块三对角形式

    行块 k 在分组 k 上为 E_k（k=0 时 -B，否则 [-A, -B]），在分组 k+1 上为 F_k（[I, 0] 或末端 I）。
    S_kk = E_kΦ_k⁻¹E_kᵀ + F_kΦ_{k+1}⁻¹F_kᵀ，S_{k+1,k} = E_{k+1}Φ_{k+1}⁻¹F_kᵀ。
    """
    T, n_x, n_p = qp.T, qp.n_x, qp.n_p
    I = np.eye(n_x)
    E = [-qp.B] + [np.hstack([-qp.A, -qp.B]) for _ in range(1, T)]
    F = [np.hstack([I, np.zeros((n_x, n_p))]) for _ in range(T - 1)] + [I]

    diag = np.empty((T, n_x, n_x))
    subdiag = np.empty((max(T - 1, 0), n_x, n_x))
    for k in range(T):
        diag[k] = E[k] @ cho_solve(factors[k], E[k].T, check_finite=False)
        diag[k] += F[k] @ cho_solve(factors[k + 1], F[k].T, check_finite=False)
        if k + 1 < T:
            subdiag[k] = E[k + 1] @ cho_solve(factors[k + 1], F[k].T, check_finite=False)
    return BlockTriDiagSym(diag, subdiag)


def _forward_simulation(qp: StructuredQp) -> np.ndarray:
    X = np.empty((qp.T, qp.n_x))
    x = qp.x0
    for k in range(qp.T):
        x = qp.A @ x + qp.c
        X[k] = x
    return qp.stack(np.zeros((qp.T, qp.n_p)), X)


def _classical_direction(qp, state, factors, schur_L, F, gap, extra=None):
    r1 = -qp.hess_vec(state.y) - qp.g + qp.eq_rmatvec(state.lam_e)
    if qp.m:
        r1 += qp.ineq_rmatvec(F)
    t = _phi_solve(qp, factors, r1)
    dnu = block_solve(schur_L, qp.eq_residual(state.y) - qp.eq_vec(t))
    dy = t + _phi_solve(qp, factors, qp.eq_rmatvec(dnu))
    dw = qp.ineq_vec(dy) - (gap + state.w)
    dlam = -state.lam - (state.lam / state.w) * dw
    if extra is not None:
        dlam -= extra / state.w
    return dy, dnu, dw, dlam


def classical_solve(qp: StructuredQp, opts: Optional[SolverOptions] = None) -> SolveResult:
    """经典正规方程 Mehrotra 内点法，运行在不含虚拟控制的原始 QP 上"""
    opts = opts or SolverOptions()
    start = perf_counter()
    n, m = qp.n, qp.m

    y = _forward_simulation(qp)
    gap = qp.b_i - qp.ineq_vec(y)
    state = ClassicalState(
        y=y, w=np.maximum(1.0, np.abs(gap)), lam=np.ones(m), lam_e=np.zeros(qp.T * qp.n_x)
    )
    status = SolveStatus.ITER_LIMIT
    message = ""
    factorizations = 0
    eq_residuals = [float(np.max(np.abs(qp.eq_residual(y))))]
    iteration_times, core_times, records = [], [], []
    res_norm = float("inf")

    while True:
        t_iter = perf_counter()
        gap = qp.b_i - qp.ineq_vec(state.y)
        state.mu = duality_measure(state.lam, state.w, n, m)
        k1 = qp.hess_vec(state.y) + qp.g - qp.eq_rmatvec(state.lam_e)
        if m:
            k1 -= qp.ineq_rmatvec(state.lam)
        k2_norm = float(np.max(np.abs(qp.eq_residual(state.y))))
        state.ineq_residual = max(float(np.max(np.abs(gap + state.w))) if m else 0.0, k2_norm)
        res_norm = float(np.linalg.norm(k1))
        state.residual_history.append(res_norm)

        if convergence_check(state, k1, opts):
            status = SolveStatus.CONVERGED
            break
        if state.iter >= opts.i_max:
            break

        xi = state.lam / state.w
        t_core = perf_counter()
        try:
            state.phi_factors = factor_phi(qp, xi)
            state.schur_factor = block_cholesky(schur_complement(qp, state.phi_factors), shift=opts.chol_shift)
        except FactorizationError as exc:
            status = SolveStatus.NUMERICAL_FAILURE
            message = str(exc)
            logger.error(f"[#classical] 第 {state.iter} 次迭代数值失败: {message}")
            break
        factorizations += 2

        F_aff = state.lam + state.lam * gap / state.w
        _, _, dw_a, dlam_a = _classical_direction(
            qp, state, state.phi_factors, state.schur_factor, F_aff, gap
        )
        core = perf_counter() - t_core
        ap_a, ad_a = step_lengths(state, dw_a, dlam_a, opts.tau_affine)
        if opts.single_alpha:
            ap_a = ad_a = min(ap_a, ad_a)
        mu_aff = duality_measure(state.lam + ad_a * dlam_a, state.w + ap_a * dw_a, n, m)
        sigma = mehrotra_sigma(state.mu, mu_aff)

        extra = dlam_a * dw_a - sigma * state.mu
        F_cor = state.lam + (state.lam * gap - extra) / state.w
        t_core = perf_counter()
        dy, dnu, dw, dlam = _classical_direction(
            qp, state, state.phi_factors, state.schur_factor, F_cor, gap, extra
        )
        core += perf_counter() - t_core

        alpha_p, alpha_d = step_lengths(state, dw, dlam, opts.tau)
        if opts.single_alpha:
            alpha_p = alpha_d = min(alpha_p, alpha_d)
        state.y = state.y + alpha_p * dy
        state.w = state.w + alpha_p * dw
        state.lam = state.lam + alpha_d * dlam
        state.lam_e = state.lam_e + alpha_d * dnu
        state.sigma = sigma
        state.iter += 1
        eq_residuals.append(float(np.max(np.abs(qp.eq_residual(state.y)))))

        elapsed = perf_counter() - t_iter
        iteration_times.append(elapsed)
        core_times.append(core)
        records.append(
            IterationRecord(state.iter, state.mu, sigma, alpha_p, alpha_d, res_norm, elapsed, core)
        )
        logger.debug(
            f"[#classical] it={state.iter} mu={state.mu:.3e} sigma={sigma:.3e} "
            f"alpha=({alpha_p:.3f}, {alpha_d:.3f}) res={res_norm:.3e}"
        )

    if status is SolveStatus.ITER_LIMIT:
        logger.warning(f"[#classical] 达到最大迭代次数 {opts.i_max}，mu={state.mu:.3e}")

    virtual = qp.virtual_controls(state.y)
    result = SolveResult(
        status=status,
        y_star=state.y,
        u_trajectory=qp.u_trajectory(state.y),
        x_trajectory=qp.x_trajectory(state.y),
        iterations=state.iter,
        factorizations=factorizations,
        residual=res_norm,
        mu=state.mu,
        objective=objective_value(qp, state.y),
        solve_time=perf_counter() - start,
        iteration_times=iteration_times,
        core_times=core_times,
        eq_residuals=eq_residuals,
        records=records,
        w=state.w,
        lam=state.lam,
        lam_e=state.lam_e,
        max_virtual=float(np.max(np.abs(virtual))) if virtual.size else 0.0,
        message=message,
    )
    logger.info(
        f"[#classical] {status.value}: {state.iter} 次迭代, {factorizations} 次分解, "
        f"{result.solve_time * 1e3:.2f} ms"
    )
    return result


# ---- 稠密 oracle ----

def _check_desk_scale(size: int) -> None:
    if size > DESK_SCALE_LIMIT:
        raise DesktopScaleError(f"稠密系统维数 {size} 超过上限 {DESK_SCALE_LIMIT}")


def dense_newton_kkt(
    qp: StructuredQp, state: IpmState, sigma: float = 0.0, mu: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """稠密求解 ∇K·Δq = -K，返回 (Δy, Δλ_e, Δλ_i, Δw)

    Raises:
        DesktopScaleError: 维数超过桌面规模
        FactorizationError: 系统奇异
    """
    n, n_e, m = qp.n, qp.T * qp.n_x, qp.m
    _check_desk_scale(n + n_e + 2 * m)
    dense = qp.densify()
    y, w, lam = state.y, state.w, state.lam
    lam_e = state.lam_e if state.lam_e is not None else np.zeros(n_e)
    if mu is None:
        mu = duality_measure(lam, w, n, m)

    K = np.concatenate([
        dense.H @ y + dense.g - dense.A_e.T @ lam_e - dense.A_i.T @ lam,
        dense.b_e - dense.A_e @ y,
        dense.b_i - dense.A_i @ y + w,
        lam * w - sigma * mu,
    ])
    size = n + n_e + 2 * m
    J = np.zeros((size, size))
    e0, i0, w0 = n, n + n_e, n + n_e + m
    J[:n, :n] = dense.H
    J[:n, e0:i0] = -dense.A_e.T
    J[:n, i0:w0] = -dense.A_i.T
    J[e0:i0, :n] = -dense.A_e
    J[i0:w0, :n] = -dense.A_i
    J[i0:w0, w0:] = np.eye(m)
    J[w0:, i0:w0] = np.diag(w)
    J[w0:, w0:] = np.diag(lam)
    try:
        delta = solve(J, -K, check_finite=False)
    except LinAlgError as exc:
        raise FactorizationError(None, "稠密 KKT 系统奇异") from exc
    return delta[:n], delta[e0:i0], delta[i0:w0], delta[w0:]


def dense_equality_qp(qp: StructuredQp) -> Tuple[np.ndarray, np.ndarray]:
    """忽略不等式，稠密求解 [[H, -A_eᵀ], [-A_e, 0]][y; λ_e] = [-g; -b_e]"""
    n, n_e = qp.n, qp.T * qp.n_x
    _check_desk_scale(n + n_e)
    dense = qp.densify()
    K = np.block([[dense.H, -dense.A_e.T], [-dense.A_e, np.zeros((n_e, n_e))]])
    sol = solve(K, np.concatenate([-dense.g, -dense.b_e]), check_finite=False)
    return sol[:n], sol[n:]


def dense_assemble_qp(prob: MpcProblem, aug: Optional[Augmentation] = None) -> DenseQp:
    """逐行写出稠密 H、g、A_e、b_e、A_i、b_i，与分块组装互相独立"""
    n_x, n_u, m_i, T = prob.n_x, prob.n_u, prob.m_i, prob.T
    if aug is None:
        p, B, U, n_star = n_u, prob.B_ue, prob.U_ctl, 0
    else:
        p, B, U, n_star = n_x, aug.B_hat, aug.U_hat, aug.n_ustar
    S = np.zeros((n_x, p))
    S[:, :n_u] = prob.S
    r = np.zeros(p)
    r[:n_u] = prob.r
    m_s = m_i + 2 * n_star
    A_s = np.zeros((m_s, n_x))
    A_s[:m_i] = prob.A_xi
    B_s = np.zeros((m_s, p))
    B_s[:m_i, :n_u] = prob.B_ui
    for j in range(n_star):
        B_s[m_i + j, n_u + j] = 1.0
        B_s[m_i + n_star + j, n_u + j] = -1.0
    b_s = np.zeros(m_s)
    b_s[:m_i] = prob.b_xui

    size = p + n_x
    n = T * size

    def u_idx(k):
        return slice(k * size, k * size + p)

    def x_idx(k):  # x_k, k = 1..T
        return slice((k - 1) * size + p, k * size)

    H = np.zeros((n, n))
    g = np.zeros(n)
    A_e = np.zeros((T * n_x, n))
    b_e = np.zeros(T * n_x)
    A_i = np.zeros((T * m_s + m_i, n))
    b_i = np.zeros(T * m_s + m_i)
    for k in range(T):
        H[u_idx(k), u_idx(k)] = U
        g[u_idx(k)] = r
        rows = slice(k * n_x, (k + 1) * n_x)
        A_e[rows, x_idx(k + 1)] = np.eye(n_x)
        A_e[rows, u_idx(k)] = -B
        b_e[rows] = prob.c
        irows = slice(k * m_s, (k + 1) * m_s)
        A_i[irows, u_idx(k)] = B_s
        b_i[irows] = b_s
        if k == 0:
            g[u_idx(0)] += S.T @ prob.x0
            b_e[rows] += prob.A_xe @ prob.x0
            b_i[irows] -= A_s @ prob.x0
        else:
            H[x_idx(k), x_idx(k)] = prob.Q
            H[x_idx(k), u_idx(k)] = S
            H[u_idx(k), x_idx(k)] = S.T
            g[x_idx(k)] = prob.q
            A_e[rows, x_idx(k)] = -prob.A_xe
            A_i[irows, x_idx(k)] = A_s
    H[x_idx(T), x_idx(T)] = prob.Q_f
    g[x_idx(T)] = prob.q_f
    A_i[T * m_s:, x_idx(T)] = prob.A_xi
    b_i[T * m_s:] = prob.b_xui_f
    return DenseQp(H, g, A_e, b_e, A_i, b_i)
