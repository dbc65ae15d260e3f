"""Tests for block tridiagonal Cholesky"""
import numpy as np
import pytest

from nsmpc.core.blockla import (
    BlockTriDiagSym,
    block_cholesky,
    block_solve,
    block_tridiag_from_products,
)
from nsmpc.core.errors import DimensionError, FactorizationError


def random_spd_tridiag(rng, T, b):
    """对角占优保证正定"""
    sub = rng.uniform(-1.0, 1.0, (T - 1, b, b))
    diag = np.empty((T, b, b))
    for k in range(T):
        G = rng.uniform(-1.0, 1.0, (b, b))
        diag[k] = G @ G.T + 4.0 * b * np.eye(b)
    return BlockTriDiagSym(diag, sub)


class TestBlockTriDiagSym:
    """测试块三对角存储"""

    def test_symmetrizes_diagonal(self):
        """测试构造时对角块被对称化"""
        Y = BlockTriDiagSym(np.array([[[2.0, 1.0], [0.0, 2.0]]]), np.zeros((0, 2, 2)))
        np.testing.assert_array_equal(Y.diag[0], Y.diag[0].T)

    def test_wrong_subdiag_shape(self):
        """测试次对角块尺寸错误"""
        with pytest.raises(DimensionError):
            BlockTriDiagSym(np.zeros((3, 2, 2)), np.zeros((3, 2, 2)))

    def test_matvec_matches_dense(self, rng):
        """测试分块乘法与稠密矩阵一致"""
        Y = random_spd_tridiag(rng, 4, 3)
        v = rng.standard_normal(12)
        np.testing.assert_allclose(Y.matvec(v), Y.densify() @ v, rtol=1e-13, atol=1e-13)


class TestBlockCholesky:
    """测试分块 Cholesky 分解"""

    def test_scalar_example(self):
        """测试 T=2、b=1 的手算例子"""
        Y = BlockTriDiagSym(np.array([[[4.0]], [[5.0]]]), np.array([[[2.0]]]))
        L = block_cholesky(Y)
        np.testing.assert_allclose(L.diag_L[:, 0, 0], [2.0, 2.0])
        np.testing.assert_allclose(L.subdiag_L[:, 0, 0], [1.0])

    def test_single_block_is_dense_cholesky(self):
        """测试 T=1 时退化为普通 Cholesky"""
        A = np.array([[4.0, 2.0], [2.0, 3.0]])
        L = block_cholesky(BlockTriDiagSym(A[None], np.zeros((0, 2, 2))))
        np.testing.assert_allclose(L.diag_L[0], np.linalg.cholesky(A))

    def test_reproduces_matrix(self, rng):
        """测试 L·Lᵀ 还原原矩阵"""
        Y = random_spd_tridiag(rng, 5, 3)
        L = block_cholesky(Y).densify()
        dense = Y.densify()
        assert np.max(np.abs(L @ L.T - dense)) <= 1e-10 * np.max(np.abs(dense))

    def test_not_positive_definite(self):
        """测试非正定时报告出错的块"""
        Y = BlockTriDiagSym(np.array([[[1.0]], [[1.0]]]), np.array([[[2.0]]]))
        with pytest.raises(FactorizationError) as exc_info:
            block_cholesky(Y)
        assert exc_info.value.block_index == 1

    def test_shift_restores_definiteness(self):
        """测试对角平移"""
        Y = BlockTriDiagSym(np.array([[[1.0]], [[1.0]]]), np.array([[[2.0]]]))
        L = block_cholesky(Y, shift=4.0)
        assert np.all(L.diag_L[:, 0, 0] > 0)


class TestBlockSolve:
    """测试分块求解"""

    def test_scalar_example(self):
        """测试 [[4,2],[2,5]] z = [2,3]"""
        L = block_cholesky(BlockTriDiagSym(np.array([[[4.0]], [[5.0]]]), np.array([[[2.0]]])))
        np.testing.assert_allclose(block_solve(L, np.array([2.0, 3.0])), [0.25, 0.5])

    def test_random_residual(self, rng):
        """测试随机系统的残差"""
        Y = random_spd_tridiag(rng, 6, 4)
        rhs = rng.standard_normal(24)
        z = block_solve(block_cholesky(Y), rhs)
        assert np.max(np.abs(Y.densify() @ z - rhs)) <= 1e-9 * np.max(np.abs(rhs))

    def test_matches_dense_solve(self, rng):
        """测试与稠密求解一致"""
        Y = random_spd_tridiag(rng, 7, 2)
        rhs = rng.standard_normal(14)
        expected = np.linalg.solve(Y.densify(), rhs)
        np.testing.assert_allclose(block_solve(block_cholesky(Y), rhs), expected, rtol=1e-9, atol=1e-12)

    def test_matrix_rhs(self, rng):
        """测试多列右端项"""
        Y = random_spd_tridiag(rng, 3, 2)
        rhs = rng.standard_normal((6, 3))
        Z = block_solve(block_cholesky(Y), rhs)
        assert Z.shape == (6, 3)
        np.testing.assert_allclose(Y.densify() @ Z, rhs, atol=1e-10)

    def test_wrong_length(self, rng):
        """测试右端项长度错误"""
        L = block_cholesky(random_spd_tridiag(rng, 3, 2))
        with pytest.raises(DimensionError):
            block_solve(L, np.zeros(5))


class TestBlockTridiagFromProducts:
    """测试块贡献累加"""

    def test_accumulates_parts(self):
        """测试多份贡献相加"""
        T, b = 3, 2
        d1 = np.repeat(np.eye(b)[None], T, axis=0)
        s1 = np.ones((T - 1, b, b))
        Y = block_tridiag_from_products([d1, 2 * d1], [s1], T, b)
        np.testing.assert_allclose(Y.diag, 3 * d1)
        np.testing.assert_allclose(Y.subdiag, s1)

    def test_reuses_buffer(self):
        """测试输出缓冲区先清零再累加"""
        T, b = 2, 1
        out = BlockTriDiagSym(np.full((T, b, b), 7.0), np.full((T - 1, b, b), 7.0))
        Y = block_tridiag_from_products([np.ones((T, b, b))], [np.zeros((T - 1, b, b))], T, b, out=out)
        assert Y is out
        np.testing.assert_allclose(Y.diag, 1.0)
        np.testing.assert_allclose(Y.subdiag, 0.0)

    def test_shape_mismatch(self):
        """测试贡献尺寸错误"""
        with pytest.raises(DimensionError):
            block_tridiag_from_products([np.ones((2, 2, 2))], [], 3, 2)
