"""
投影正规方程上的原始-对偶 Mehrotra 预测-校正内点法

KKT 残差（A_i y ≥ b_i，w = A_i y - b_i）：
    k1 = Hy + g - A_eᵀλ_e - A_iᵀλ
    k2 = b_e - A_e y
    k3 = b_i - A_i y + w
    k4 = λ⊙w - σμe
消去 Δw = A_iΔy - k3 与 Δλ = -λ - W⁻¹·extra - ΞΔw（Ξ = W⁻¹Λ）后，
Δy = NΔz 满足 NᵀΦN Δz = Nᵀr₁，r₁ = -Hy - g + A_iᵀF。
预测步 extra = 0，校正步 extra = Δλ_a⊙Δw_a - σμe，两者共用同一个分解。
"""
from time import perf_counter
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from ..config import SolverOptions
from .blockla import BlockCholFactor, BlockTriDiagSym, block_cholesky, block_solve
from .eqinit import StructuredQrAe, recover_equality_duals, solve_feasible_point
from .errors import DimensionError, FactorizationError, ProblemValidationError, StateError
from .models import IpmState, IterationRecord, SolveResult, SolveStatus
from .nullspace import NullBasis, Projections, compose_projected_phi
from .problem import StructuredQp, objective_value

EQ_FEAS_TOL = 1e-9
VIRTUAL_SLACK_WARN = 1e-12


def duality_measure(lam: np.ndarray, w: np.ndarray, n: int, m_total: int) -> float:
    """μ = λᵀw / (n + m_total)，n 取原始变量维数"""
    if lam.shape != (m_total,) or w.shape != (m_total,):
        raise DimensionError("lambda/w", (m_total,), (lam.shape, w.shape))
    if n + m_total == 0:
        return 0.0
    return float(lam @ w) / (n + m_total)


def residual_r1(state: IpmState, qp: StructuredQp, basis: NullBasis, F: np.ndarray) -> np.ndarray:
    """Nᵀ(-Hy - g + A_iᵀF)，NᵀA_eᵀ = 0 使 λ_e 项消失"""
    r1 = -qp.hess_vec(state.y) - qp.g
    if qp.m:
        r1 += qp.ineq_rmatvec(F)
    return basis.rmatvec(r1)


def _gap(state: IpmState, qp: StructuredQp) -> np.ndarray:
    return qp.b_i - qp.ineq_vec(state.y)


def predictor_F(state: IpmState, qp: StructuredQp, gap: Optional[np.ndarray] = None) -> np.ndarray:
    """F = λ + W⁻¹(λ⊙(b_i - A_i y))"""
    gap = _gap(state, qp) if gap is None else gap
    return state.lam + state.lam * gap / state.w


def corrector_F(
    state: IpmState,
    qp: StructuredQp,
    dw_aff: np.ndarray,
    dlam_aff: np.ndarray,
    sigma: float,
    mu: float,
    gap: Optional[np.ndarray] = None,
) -> np.ndarray:
    """F = λ + W⁻¹(λ⊙(b_i - A_i y) - Δλ_a⊙Δw_a + σμe)"""
    gap = _gap(state, qp) if gap is None else gap
    return state.lam + (state.lam * gap - dlam_aff * dw_aff + sigma * mu) / state.w


def _max_step(v: np.ndarray, dv: np.ndarray, tau: float) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def step_lengths(
    state: IpmState, dw: np.ndarray, dlam: np.ndarray, tau: float
) -> Tuple[float, float]:
    """边界比例规则下的最大步长 (alpha_primal, alpha_dual)

    满足 w + αΔw ≥ (1-τ)w 与 λ + αΔλ ≥ (1-τ)λ，τ = 1 时只保证正性。
    """
    return _max_step(state.w, dw, tau), _max_step(state.lam, dlam, tau)


def mehrotra_sigma(mu: float, mu_aff: float) -> float:
    """σ = (μ_aff/μ)³，截断到 [0, 1]"""
    if mu <= 0:
        return 0.0
    return float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0))


def convergence_check(state: IpmState, proj_r1: np.ndarray, opts: SolverOptions) -> bool:
    """‖Nᵀr₁‖² < ε 且 μ < ε_comp 且 ‖k₃‖∞ ≤ ε_feas；恢复等式对偶时也接受 ‖K‖∞ < ε"""
    norm = float(np.linalg.norm(proj_r1))
    stationarity = norm * norm if opts.squared_residual_test else norm
    if stationarity < opts.eps and state.mu < opts.eps_comp and state.ineq_residual <= opts.eps_feas:
        return True
    return opts.recover_duals and state.kkt_norm is not None and state.kkt_norm < opts.eps


def newton_direction(
    state: IpmState,
    qp: StructuredQp,
    proj: Projections,
    L: BlockCholFactor,
    F: np.ndarray,
    extra: Optional[np.ndarray] = None,
    gap: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """用已有的 NᵀΦN 分解求 (Δy, Δw, Δλ)"""
    gap = _gap(state, qp) if gap is None else gap
    dz = block_solve(L, residual_r1(state, qp, proj.basis, F))
    dy = proj.basis.apply(dz)
    dw = qp.ineq_vec(dy) - (gap + state.w)
    dlam = -state.lam - (state.lam / state.w) * dw
    if extra is not None:
        dlam -= extra / state.w
    return dy, dw, dlam


def initial_state(qp: StructuredQp, fac: StructuredQrAe, recover_duals: bool = False) -> IpmState:
    """y 取等式可行点，w = max(1, |b_i - A_i y|)，λ = 1"""
    y = solve_feasible_point(fac, qp.b_e)
    gap = qp.b_i - qp.ineq_vec(y)
    return IpmState(
        y=y,
        w=np.maximum(1.0, np.abs(gap)),
        lam=np.ones(qp.m),
        lam_e=np.zeros(qp.T * qp.n_x) if recover_duals else None,
    )


def kkt_norm(state: IpmState, qp: StructuredQp, gap: Optional[np.ndarray] = None) -> float:
    """‖K‖∞（σ = 0），需要 λ_e"""
    gap = _gap(state, qp) if gap is None else gap
    lam_e = state.lam_e if state.lam_e is not None else np.zeros(qp.T * qp.n_x)
    k1 = qp.hess_vec(state.y) + qp.g - qp.eq_rmatvec(lam_e)
    if qp.m:
        k1 -= qp.ineq_rmatvec(state.lam)
    parts = [k1, qp.eq_residual(state.y), gap + state.w, state.lam * state.w]
    return max(float(np.max(np.abs(p))) if p.size else 0.0 for p in parts)


def _virtual_rows(qp: StructuredQp) -> np.ndarray:
    mask = np.zeros((qp.T, qp.m_s), dtype=bool)
    mask[:, qp.m_s - 2 * qp.n_ustar:] = True
    return np.concatenate([mask.reshape(-1), np.zeros(qp.m_f, dtype=bool)])


def solve(
    qp: StructuredQp,
    proj: Projections,
    fac: StructuredQrAe,
    opts: Optional[SolverOptions] = None,
) -> SolveResult:
    """零空间内点法主循环

    每次牛顿迭代只做一次分块 Cholesky 分解；初始可行点在循环前只求一次。
    Cholesky 失败时返回 NumericalFailure，不抛出异常。
    """
    opts = opts or SolverOptions()
    if not qp.augmented or qp.m != proj.m or qp.T != proj.T:
        raise ProblemValidationError("qp", "QP 与离线投影不匹配")

    start = perf_counter()
    basis = proj.basis
    n, m = qp.n, qp.m
    eq_tol = EQ_FEAS_TOL * (1.0 + float(np.max(np.abs(qp.b_e))))
    virtual_rows = _virtual_rows(qp)
    warned_virtual = False

    state = initial_state(qp, fac, opts.recover_duals)
    buffer = BlockTriDiagSym.zeros(qp.T, qp.n_x)
    status = SolveStatus.ITER_LIMIT
    message = ""
    factorizations = 0
    eq_residuals = [float(np.max(np.abs(qp.eq_residual(state.y))))]
    iteration_times, core_times, records = [], [], []
    res_norm = float("inf")

    while True:
        t_iter = perf_counter()
        gap = _gap(state, qp)
        state.mu = duality_measure(state.lam, state.w, n, m)
        state.ineq_residual = float(np.max(np.abs(gap + state.w))) if m else 0.0
        conv_r1 = residual_r1(state, qp, basis, state.lam)
        res_norm = float(np.linalg.norm(conv_r1))
        state.residual_history.append(res_norm)
        if opts.recover_duals:
            state.kkt_norm = kkt_norm(state, qp, gap)

        if convergence_check(state, conv_r1, opts):
            status = SolveStatus.CONVERGED
            break
        if state.iter >= opts.i_max:
            break

        t_core = perf_counter()
        try:
            Y = compose_projected_phi(proj, state.lam / state.w, out=buffer)
            L = block_cholesky(Y, shift=opts.chol_shift)
        except (FactorizationError, StateError) as exc:
            status = SolveStatus.NUMERICAL_FAILURE
            message = str(exc)
            logger.error(f"[#ipm] 第 {state.iter} 次迭代数值失败: {message}")
            break
        factorizations += 1

        F_aff = predictor_F(state, qp, gap)
        dy_a, dw_a, dlam_a = newton_direction(state, qp, proj, L, F_aff, gap=gap)
        core = perf_counter() - t_core

        ap_a, ad_a = step_lengths(state, dw_a, dlam_a, opts.tau_affine)
        if opts.single_alpha:
            ap_a = ad_a = min(ap_a, ad_a)
        mu_aff = duality_measure(state.lam + ad_a * dlam_a, state.w + ap_a * dw_a, n, m)
        sigma = mehrotra_sigma(state.mu, mu_aff)

        F_cor = corrector_F(state, qp, dw_a, dlam_a, sigma, state.mu, gap)
        extra = dlam_a * dw_a - sigma * state.mu
        t_core = perf_counter()
        dy, dw, dlam = newton_direction(state, qp, proj, L, F_cor, extra=extra, gap=gap)
        core += perf_counter() - t_core

        alpha_p, alpha_d = step_lengths(state, dw, dlam, opts.tau)
        if opts.single_alpha:
            alpha_p = alpha_d = min(alpha_p, alpha_d)

        if opts.recover_duals:
            # A_eᵀΔλ_e = ΦΔy - r₁（r₁ 含当前 λ_e）
            r1 = -qp.hess_vec(state.y) - qp.g + qp.eq_rmatvec(state.lam_e)
            phi_dy = qp.hess_vec(dy)
            if m:
                r1 += qp.ineq_rmatvec(F_cor)
                phi_dy += qp.ineq_rmatvec(state.lam / state.w * qp.ineq_vec(dy))
            state.lam_e = state.lam_e + alpha_d * recover_equality_duals(fac, phi_dy - r1)

        state.y = state.y + alpha_p * dy
        state.w = state.w + alpha_p * dw
        state.lam = state.lam + alpha_d * dlam
        state.sigma = sigma
        state.iter += 1

        eq_res = float(np.max(np.abs(qp.eq_residual(state.y))))
        eq_residuals.append(eq_res)
        if opts.check_invariants and eq_res > eq_tol:
            raise StateError(f"等式可行性被破坏: ‖A_e y - b_e‖∞ = {eq_res:.3e} > {eq_tol:.3e}")

        if np.any(virtual_rows):
            min_virtual = float(np.min(state.w[virtual_rows]))
            if min_virtual < VIRTUAL_SLACK_WARN and not warned_virtual:
                logger.warning(f"[#ipm] 虚拟控制松弛变量过小: {min_virtual:.3e}")
                warned_virtual = True
        else:
            min_virtual = float("nan")

        elapsed = perf_counter() - t_iter
        iteration_times.append(elapsed)
        core_times.append(core)
        records.append(
            IterationRecord(state.iter, state.mu, sigma, alpha_p, alpha_d, res_norm, elapsed, core)
        )
        logger.debug(
            f"[#ipm] it={state.iter} mu={state.mu:.3e} sigma={sigma:.3e} "
            f"alpha=({alpha_p:.3f}, {alpha_d:.3f}) res={res_norm:.3e} min_w*={min_virtual:.3e}"
        )

    if status is SolveStatus.ITER_LIMIT:
        logger.warning(f"[#ipm] 达到最大迭代次数 {opts.i_max}，mu={state.mu:.3e} res={res_norm:.3e}")

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
        f"[#ipm] {status.value}: {state.iter} 次迭代, {factorizations} 次分解, "
        f"{result.solve_time * 1e3:.2f} ms"
    )
    return result
