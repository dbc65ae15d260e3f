"""
测试夹具：单位对象、双积分器、质量弹簧链
"""
import numpy as np
import pytest
from loguru import logger

from nsmpc.bench.generators import box_constraints, gen_mass_spring
from nsmpc.config import SolverOptions
from nsmpc.core.problem import MpcProblem

DI_A = np.array([[1.0, 0.1], [0.0, 1.0]])
DI_B = np.array([[0.005], [0.1]])


@pytest.fixture(autouse=True)
def _silence_logger():
    """每个测试后移除 loguru 处理器，避免写入已关闭的流"""
    yield
    logger.remove()


@pytest.fixture
def identity_problem():
    """单位对象 A=B=I，界限 ±1e6 实际不起作用"""

    def factory(T=5, x0=(1.0, 1.0), bound=1e6):
        A_xi, B_ui, b = box_constraints(2, 2, bound, bound)
        return MpcProblem.create(
            A_xe=np.eye(2), B_ue=np.eye(2), Q=np.eye(2), U_ctl=np.eye(2), T=T, x0=x0,
            A_xi=A_xi, B_ui=B_ui, b_xui=b,
        )

    return factory


@pytest.fixture
def double_integrator():
    """双积分器，x ∈ [-4, 4]，u ∈ [-0.5, 0.5]"""

    def factory(T=5, x0=(1.0, 0.0), bounds=True):
        kwargs = {}
        if bounds:
            A_xi, B_ui, b = box_constraints(2, 1)
            kwargs = {"A_xi": A_xi, "B_ui": B_ui, "b_xui": b}
        return MpcProblem.create(
            A_xe=DI_A, B_ue=DI_B, Q=np.eye(2), U_ctl=np.eye(1), T=T, x0=x0, **kwargs
        )

    return factory


@pytest.fixture(scope="session")
def mass_spring():
    """M=6、n_u=3、T=30，x0 全为 1"""
    return gen_mass_spring(6, 3, T=30)


@pytest.fixture
def tight_opts():
    """比较两个求解器时使用更严格的阈值"""
    return SolverOptions(eps=1e-8, eps_comp=1e-10, eps_feas=1e-10, squared_residual_test=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
