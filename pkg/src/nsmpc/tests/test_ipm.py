"""Tests for the null-space interior point method"""
from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pytest

from nsmpc.config import SolverOptions
from nsmpc.core import ipm
from nsmpc.core.blockla import block_cholesky
from nsmpc.core.errors import FactorizationError, StateError
from nsmpc.core.models import IpmState, SolveStatus
from nsmpc.core.nullspace import compose_projected_phi
from nsmpc.core.problem import MpcProblem
from nsmpc.core.reference import dense_equality_qp, dense_newton_kkt
from nsmpc.core.solvers import NullSpaceMpcSolver


def interior_state(solver, rng, spread=1.0):
    """等式可行的随机内点：y = y0 + N·z，w 与 λ 严格为正"""
    qp = solver.qp
    y0 = ipm.solve_feasible_point(solver.fac, qp.b_e)
    y = y0 + solver.basis.apply(spread * rng.standard_normal(qp.T * qp.n_x))
    return IpmState(y=y, w=rng.uniform(0.5, 2.0, qp.m), lam=rng.uniform(0.5, 2.0, qp.m))


def feasibility_tol(qp):
    return 1e-9 * (1.0 + np.max(np.abs(qp.b_e)))


class TestDualityMeasure:
    """测试对偶间隙度量"""

    def test_ones(self):
        """测试 λ = w = e、n = 2、m = 2 时 μ = 0.5"""
        assert ipm.duality_measure(np.ones(2), np.ones(2), 2, 2) == pytest.approx(0.5)

    def test_zero_slack(self):
        """测试 w = 0 时 μ = 0"""
        assert ipm.duality_measure(np.ones(3), np.zeros(3), 4, 3) == 0.0

    def test_scalar_loop(self, rng):
        """测试与逐元素循环一致"""
        lam, w = rng.uniform(0, 1, 7), rng.uniform(0, 1, 7)
        expected = sum(a * b for a, b in zip(lam, w)) / (5 + 7)
        assert ipm.duality_measure(lam, w, 5, 7) == pytest.approx(expected, rel=1e-15)

    def test_length_mismatch(self):
        """测试长度不一致"""
        with pytest.raises(ValueError):
            ipm.duality_measure(np.ones(2), np.ones(3), 1, 2)


class TestFTerms:
    """测试预测步与校正步的 F"""

    def test_predictor_tight(self, double_integrator, rng):
        """测试 b_i - A_i y = 0 时 F = λ"""
        solver = NullSpaceMpcSolver(double_integrator())
        state = interior_state(solver, rng)
        F = ipm.predictor_F(state, solver.qp, gap=np.zeros(solver.qp.m))
        np.testing.assert_array_equal(F, state.lam)

    def test_predictor_cancels(self, double_integrator):
        """测试 λ = w = e 且 b_i - A_i y = -w 时 F = 0"""
        solver = NullSpaceMpcSolver(double_integrator())
        m = solver.qp.m
        state = IpmState(y=np.zeros(solver.qp.n), w=np.ones(m), lam=np.ones(m))
        np.testing.assert_array_equal(ipm.predictor_F(state, solver.qp, gap=-np.ones(m)), np.zeros(m))

    def test_predictor_scalar_loop(self, double_integrator, rng):
        """测试与逐元素循环一致"""
        solver = NullSpaceMpcSolver(double_integrator())
        qp = solver.qp
        state = interior_state(solver, rng)
        gap = qp.b_i - qp.densify().A_i @ state.y
        expected = [l + l * g / w for l, g, w in zip(state.lam, gap, state.w)]
        np.testing.assert_allclose(ipm.predictor_F(state, qp), expected, rtol=1e-14, atol=1e-14)

    def test_corrector_reduces_to_predictor(self, double_integrator, rng):
        """测试 Δ 项与 σμ 为零时等于预测步"""
        solver = NullSpaceMpcSolver(double_integrator())
        state = interior_state(solver, rng)
        m = solver.qp.m
        F_c = ipm.corrector_F(state, solver.qp, np.zeros(m), np.zeros(m), 0.0, 0.0)
        np.testing.assert_allclose(F_c, ipm.predictor_F(state, solver.qp), rtol=1e-15, atol=1e-15)

    def test_corrector_centering_shift(self, double_integrator, rng):
        """测试 σ = 1 时平移 W⁻¹(σμe)"""
        solver = NullSpaceMpcSolver(double_integrator())
        state = interior_state(solver, rng)
        m = solver.qp.m
        F_c = ipm.corrector_F(state, solver.qp, np.zeros(m), np.zeros(m), 1.0, 0.3)
        np.testing.assert_allclose(F_c - ipm.predictor_F(state, solver.qp), 0.3 / state.w, rtol=1e-12)

    def test_corrector_scalar_loop(self, double_integrator, rng):
        """测试与逐元素循环一致"""
        solver = NullSpaceMpcSolver(double_integrator())
        state = interior_state(solver, rng)
        qp = solver.qp
        dw, dl = rng.standard_normal(qp.m), rng.standard_normal(qp.m)
        gap = qp.b_i - qp.ineq_vec(state.y)
        expected = [
            l + (l * g - a * b + 0.2 * 0.7) / w
            for l, g, a, b, w in zip(state.lam, gap, dl, dw, state.w)
        ]
        np.testing.assert_allclose(ipm.corrector_F(state, qp, dw, dl, 0.2, 0.7), expected, rtol=1e-14, atol=1e-13)


class TestStepLengths:
    """测试步长"""

    @staticmethod
    def state(w, lam):
        w, lam = np.asarray(w, float), np.asarray(lam, float)
        return IpmState(y=np.zeros(1), w=w, lam=lam)

    def test_nonnegative_directions(self):
        """测试方向非负时步长为 1"""
        assert ipm.step_lengths(self.state([1.0], [1.0]), np.array([0.5]), np.array([0.0]), 0.995) == (1.0, 1.0)

    def test_one_dimensional(self):
        """测试 w = 1、Δw = -2"""
        s = self.state([1.0], [1.0])
        assert ipm.step_lengths(s, np.array([-2.0]), np.array([1.0]), 1.0)[0] == pytest.approx(0.5)
        assert ipm.step_lengths(s, np.array([-2.0]), np.array([1.0]), 0.995)[0] == pytest.approx(0.4975)

    def test_scalar_loop(self, rng):
        """测试与逐元素最大步长一致"""
        w, lam = rng.uniform(0.1, 2, 20), rng.uniform(0.1, 2, 20)
        dw, dlam = rng.standard_normal(20), rng.standard_normal(20)

        def oracle(v, dv):
            alpha = 1.0
            for a, b in zip(v, dv):
                if b < 0:
                    alpha = min(alpha, -0.995 * a / b)
            return alpha

        ap, ad = ipm.step_lengths(self.state(w, lam), dw, dlam, 0.995)
        assert ap == pytest.approx(oracle(w, dw), rel=1e-14)
        assert ad == pytest.approx(oracle(lam, dlam), rel=1e-14)


class TestMehrotraSigma:
    """测试中心化参数"""

    @pytest.mark.parametrize("mu_aff, expected", [(0.0, 0.0), (1.0, 1.0), (0.5, 0.125), (3.0, 1.0)])
    def test_values(self, mu_aff, expected):
        """测试立方与截断"""
        assert ipm.mehrotra_sigma(1.0, mu_aff) == pytest.approx(expected)


class TestConvergenceCheck:
    """测试收敛判据"""

    def test_boundary_is_strict(self):
        """测试 ‖Nᵀr₁‖² 恰等于 ε 时不收敛"""
        opts = SolverOptions(eps=0.25)
        state = IpmState(y=np.zeros(1), w=np.ones(1), lam=np.ones(1), mu=0.0)
        assert not ipm.convergence_check(state, np.array([0.5]), opts)
        assert ipm.convergence_check(state, np.array([0.1]), opts)

    def test_requires_complementarity(self):
        """测试 μ 未达到阈值时不收敛"""
        state = IpmState(y=np.zeros(1), w=np.ones(1), lam=np.ones(1), mu=1e-3)
        assert not ipm.convergence_check(state, np.zeros(3), SolverOptions())

    def test_requires_primal_feasibility(self):
        """测试不等式残差未达到阈值时不收敛"""
        state = IpmState(y=np.zeros(1), w=np.ones(1), lam=np.ones(1), mu=0.0, ineq_residual=1e-3)
        assert not ipm.convergence_check(state, np.zeros(3), SolverOptions())

    def test_full_kkt_only_with_duals(self):
        """测试完整 K 判据只在恢复对偶时生效"""
        state = IpmState(y=np.zeros(1), w=np.ones(1), lam=np.ones(1), mu=1.0, kkt_norm=1e-12)
        assert not ipm.convergence_check(state, np.ones(3), SolverOptions())
        assert ipm.convergence_check(state, np.ones(3), SolverOptions(recover_duals=True))

    def test_fresh_start(self, double_integrator):
        """测试初始点残差大，不收敛"""
        solver = NullSpaceMpcSolver(double_integrator(x0=(3.0, 0.0)))
        state = ipm.initial_state(solver.qp, solver.fac)
        state.mu = ipm.duality_measure(state.lam, state.w, solver.qp.n, solver.qp.m)
        r1 = ipm.residual_r1(state, solver.qp, solver.basis, state.lam)
        assert not ipm.convergence_check(state, r1, SolverOptions())


class TestResidualR1:
    """测试投影残差"""

    def test_zero(self):
        """测试 y = 0、g = 0、F = 0"""
        prob = MpcProblem.create(np.eye(2), [[0.0], [1.0]], np.eye(2), [[1.0]], T=3, x0=[0.0, 0.0])
        solver = NullSpaceMpcSolver(prob)
        m = solver.qp.m
        state = IpmState(y=np.zeros(solver.qp.n), w=np.ones(m), lam=np.zeros(m))
        np.testing.assert_array_equal(
            ipm.residual_r1(state, solver.qp, solver.basis, np.zeros(m)), np.zeros(3 * 2)
        )

    def test_matches_dense(self, double_integrator, rng):
        """测试与稠密 Nᵀ(-Hy - g + A_iᵀF) 一致"""
        solver = NullSpaceMpcSolver(double_integrator())
        qp = solver.qp
        dense = qp.densify()
        N = solver.basis.densify()
        state = interior_state(solver, rng)
        F = rng.standard_normal(qp.m)
        expected = N.T @ (-dense.H @ state.y - dense.g + dense.A_i.T @ F)
        np.testing.assert_allclose(ipm.residual_r1(state, qp, solver.basis, F), expected, atol=1e-12)

    def test_converged_optimum(self, identity_problem):
        """测试无约束类比问题的最优点上残差为零"""
        solver = NullSpaceMpcSolver(identity_problem())
        y_star, _ = dense_equality_qp(solver.qp)
        m = solver.qp.m
        state = IpmState(y=y_star, w=np.ones(m), lam=np.zeros(m))
        r1 = ipm.residual_r1(state, solver.qp, solver.basis, np.zeros(m))
        assert np.linalg.norm(r1) <= 1e-9


class TestNewtonDirection:
    """测试结构化牛顿方向"""

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_dense_kkt(self, double_integrator, seed):
        """测试预测步与稠密牛顿系统一致"""
        rng = np.random.default_rng(seed)
        solver = NullSpaceMpcSolver(double_integrator(T=5, x0=rng.uniform(-2.0, 2.0, 2)))
        qp = solver.qp
        state = interior_state(solver, rng)
        L = block_cholesky(compose_projected_phi(solver.proj, state.lam / state.w))
        dy, dw, dlam = ipm.newton_direction(state, qp, solver.proj, L, ipm.predictor_F(state, qp))
        dy_d, _, dlam_d, dw_d = dense_newton_kkt(qp, state)
        np.testing.assert_allclose(dy, dy_d, atol=1e-9)
        np.testing.assert_allclose(dw, dw_d, atol=1e-9)
        np.testing.assert_allclose(dlam, dlam_d, atol=1e-9)

    def test_corrector_matches_dense_kkt(self, double_integrator, rng):
        """测试带中心化项的方向与稠密系统一致"""
        solver = NullSpaceMpcSolver(double_integrator(T=4))
        qp = solver.qp
        state = interior_state(solver, rng)
        mu = ipm.duality_measure(state.lam, state.w, qp.n, qp.m)
        sigma = 0.3
        L = block_cholesky(compose_projected_phi(solver.proj, state.lam / state.w))
        zeros = np.zeros(qp.m)
        F = ipm.corrector_F(state, qp, zeros, zeros, sigma, mu)
        dy, dw, dlam = ipm.newton_direction(state, qp, solver.proj, L, F, extra=zeros - sigma * mu)
        dy_d, _, dlam_d, dw_d = dense_newton_kkt(qp, state, sigma=sigma, mu=mu)
        np.testing.assert_allclose(dy, dy_d, atol=1e-9)
        np.testing.assert_allclose(dw, dw_d, atol=1e-9)
        np.testing.assert_allclose(dlam, dlam_d, atol=1e-9)

    def test_keeps_equality_feasibility(self, double_integrator, rng):
        """测试方向位于 A_e 的零空间"""
        solver = NullSpaceMpcSolver(double_integrator(T=6))
        qp = solver.qp
        state = interior_state(solver, rng)
        L = block_cholesky(compose_projected_phi(solver.proj, state.lam / state.w))
        dy, _, _ = ipm.newton_direction(state, qp, solver.proj, L, ipm.predictor_F(state, qp))
        assert np.max(np.abs(qp.eq_vec(dy))) <= 1e-12


class TestSolve:
    """测试主循环"""

    def test_unconstrained_analog(self, identity_problem):
        """测试界限不起作用时与等式约束 QP 的稠密解一致"""
        solver = NullSpaceMpcSolver(identity_problem())
        result = solver.solve()
        y_star, _ = dense_equality_qp(solver.qp)
        assert result.status is SolveStatus.CONVERGED
        np.testing.assert_allclose(result.y_star, y_star, atol=1e-7)

    def test_active_input_bound(self, double_integrator, tight_opts):
        """测试输入约束在第一阶段起作用"""
        solver = NullSpaceMpcSolver(double_integrator(T=10, x0=(3.0, 0.0)), tight_opts)
        result = solver.solve()
        assert result.converged
        assert result.first_control[0] == pytest.approx(-0.5, abs=1e-7)

    def test_mass_spring_iterations(self, mass_spring):
        """测试质量弹簧链在 30 次迭代内收敛"""
        result = NullSpaceMpcSolver(mass_spring).solve()
        assert result.status is SolveStatus.CONVERGED
        assert result.iterations <= 30
        assert result.max_virtual <= 1e-6
        assert result.mu <= 1e-8

    def test_one_factorization_per_iteration(self, mass_spring):
        """测试每次牛顿迭代只分解一次，可行点每次求解只算一次"""
        solver = NullSpaceMpcSolver(mass_spring)
        with patch("nsmpc.core.ipm.block_cholesky", wraps=ipm.block_cholesky) as chol, \
             patch("nsmpc.core.ipm.solve_feasible_point", wraps=ipm.solve_feasible_point) as feas:
            result = solver.solve()
        assert chol.call_count == result.iterations == result.factorizations
        assert feas.call_count == 1

    def test_corrector_reuses_factor(self, double_integrator):
        """测试预测步与校正步之间没有新的分解"""
        solver = NullSpaceMpcSolver(double_integrator(x0=(3.0, 0.0)))
        real_chol, real_direction = ipm.block_cholesky, ipm.newton_direction
        events = []

        def chol(*args, **kwargs):
            events.append("chol")
            return real_chol(*args, **kwargs)

        def direction(*args, **kwargs):
            events.append("solve")
            return real_direction(*args, **kwargs)

        with patch("nsmpc.core.ipm.block_cholesky", side_effect=chol), \
             patch("nsmpc.core.ipm.newton_direction", side_effect=direction):
            result = solver.solve()
        assert result.iterations > 0
        assert events == ["chol", "solve", "solve"] * result.iterations

    def test_equality_feasibility_every_iteration(self, double_integrator):
        """测试每个迭代点都满足等式约束"""
        solver = NullSpaceMpcSolver(double_integrator(T=8, x0=(3.0, 1.0)), SolverOptions(check_invariants=True))
        result = solver.solve()
        assert result.converged
        assert len(result.eq_residuals) == result.iterations + 1
        assert max(result.eq_residuals) <= feasibility_tol(solver.qp)

    def test_positivity(self, double_integrator):
        """测试 w 与 λ 始终为正"""
        result = NullSpaceMpcSolver(double_integrator(x0=(3.0, 0.0))).solve()
        assert np.all(result.w > 0)
        assert np.all(result.lam > 0)

    def test_iteration_limit(self, mass_spring):
        """测试达到最大迭代次数"""
        result = NullSpaceMpcSolver(mass_spring, SolverOptions(i_max=2)).solve()
        assert result.status is SolveStatus.ITER_LIMIT
        assert result.iterations == 2
        assert len(result.records) == 2

    def test_factorization_failure(self, double_integrator):
        """测试分解失败时返回 NumericalFailure 而不抛出"""
        solver = NullSpaceMpcSolver(double_integrator())
        with patch("nsmpc.core.ipm.block_cholesky", side_effect=FactorizationError(3)):
            result = solver.solve()
        assert result.status is SolveStatus.NUMERICAL_FAILURE
        assert "3" in result.message
        assert result.factorizations == 0

    def test_broken_invariant_raises(self, double_integrator):
        """测试等式可行性被破坏时断言失败"""
        solver = NullSpaceMpcSolver(double_integrator(x0=(3.0, 0.0)), SolverOptions(check_invariants=True))
        real_direction = ipm.newton_direction

        def drifting(*args, **kwargs):
            dy, dw, dlam = real_direction(*args, **kwargs)
            return dy + 1e-3, dw, dlam

        with patch("nsmpc.core.ipm.newton_direction", side_effect=drifting):
            with pytest.raises(StateError):
                solver.solve()

    def test_timing_fields(self, double_integrator):
        """测试计时字段"""
        result = NullSpaceMpcSolver(double_integrator(x0=(3.0, 0.0))).solve()
        assert len(result.iteration_times) == result.iterations
        assert len(result.core_times) == result.iterations
        assert result.time_per_iteration > 0
        assert all(c <= w for c, w in zip(result.core_times, result.iteration_times))

    def test_new_state(self, double_integrator):
        """测试只替换初始状态再次求解"""
        solver = NullSpaceMpcSolver(double_integrator(x0=(3.0, 0.0)))
        first = solver.solve()
        second = solver.solve(np.zeros(2))
        assert first.converged and second.converged
        assert np.max(np.abs(second.u_trajectory)) <= 1e-6


class TestRecoverDuals:
    """测试等式对偶恢复与完整 K 判据"""

    def test_matches_dense_multipliers(self, identity_problem):
        """测试 λ_e 与稠密等式约束 QP 的乘子一致"""
        solver = NullSpaceMpcSolver(identity_problem(), SolverOptions(recover_duals=True))
        result = solver.solve()
        _, lam_e = dense_equality_qp(solver.qp)
        assert result.converged
        np.testing.assert_allclose(result.lam_e, lam_e, atol=1e-6)

    def test_kkt_norm_small_at_solution(self, double_integrator, tight_opts):
        """测试收敛时完整 KKT 残差很小"""
        opts = replace(tight_opts, recover_duals=True)
        solver = NullSpaceMpcSolver(double_integrator(x0=(3.0, 0.0)), opts)
        result = solver.solve()
        state = IpmState(y=result.y_star, w=result.w, lam=result.lam, lam_e=result.lam_e)
        assert result.converged
        assert ipm.kkt_norm(state, solver.qp) <= 1e-6
