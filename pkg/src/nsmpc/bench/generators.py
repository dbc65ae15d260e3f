"""
基准问题生成器：随机中性稳定系统与质量弹簧链
"""
import numpy as np
from loguru import logger
from scipy.linalg import expm

from ..core.errors import ProblemValidationError
from ..core.problem import MpcProblem

STATE_BOUND = 4.0
INPUT_BOUND = 0.5


def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def box_constraints(n_x: int, n_u: int, state_bound: float = STATE_BOUND, input_bound: float = INPUT_BOUND):
    """x ∈ [-state_bound, state_bound]，u ∈ [-input_bound, input_bound]，写成 A_xi x + B_ui u ≥ b"""
    A_xi = np.vstack([np.eye(n_x), -np.eye(n_x), np.zeros((2 * n_u, n_x))])
    B_ui = np.vstack([np.zeros((2 * n_x, n_u)), np.eye(n_u), -np.eye(n_u)])
    b = np.concatenate([
        np.full(2 * n_x, -state_bound),
        np.full(2 * n_u, -input_bound),
    ])
    return A_xi, B_ui, b


def _random_spd(rng: np.random.Generator, n: int) -> np.ndarray:
    G = rng.uniform(-1.0, 1.0, (n, n))
    return G @ G.T / n + np.eye(n)


def gen_random_system(
    n_x: int,
    n_u: int,
    seed: int,
    T: int = 30,
    dense_cost: bool = False,
    x0_value: float = 0.2,
    state_bound: float = STATE_BOUND,
    input_bound: float = INPUT_BOUND,
) -> MpcProblem:
    """随机稠密系统，A_xe 缩放到谱半径为 1

    Args:
        dense_cost: True 时 Q、U 为随机稠密正定矩阵，否则为单位阵
    """
    if not 1 <= n_u <= n_x:
        raise ProblemValidationError("n_u", f"要求 1 ≤ n_u ≤ n_x，实际 n_u={n_u}, n_x={n_x}")
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1.0, 1.0, (n_x, n_x))
    A /= spectral_radius(A)
    B = rng.uniform(-1.0, 1.0, (n_x, n_u))
    if dense_cost:
        Q, U = _random_spd(rng, n_x), _random_spd(rng, n_u)
    else:
        Q, U = np.eye(n_x), np.eye(n_u)
    A_xi, B_ui, b = box_constraints(n_x, n_u, state_bound, input_bound)
    logger.debug(f"[#gen] 随机系统 n_x={n_x} n_u={n_u} T={T} seed={seed} dense_cost={dense_cost}")
    return MpcProblem.create(
        A_xe=A,
        B_ue=B,
        Q=Q,
        U_ctl=U,
        T=T,
        x0=np.full(n_x, x0_value),
        A_xi=A_xi,
        B_ui=B_ui,
        b_xui=b,
        b_xui_f=b,
    )


def mass_spring_dynamics(M: int, n_u: int, dt: float = 0.5):
    """两端连墙的 M 个单位质量、单位弹簧链，零阶保持精确离散化

    状态为 [位置; 速度]，执行器作用在前 n_u 个质量上。
    """
    K = 2.0 * np.eye(M) - np.eye(M, k=1) - np.eye(M, k=-1)
    Ac = np.block([[np.zeros((M, M)), np.eye(M)], [-K, np.zeros((M, M))]])
    Bc = np.vstack([np.zeros((M, n_u)), np.eye(M)[:, :n_u]])
    n_x = 2 * M
    aug = np.zeros((n_x + n_u, n_x + n_u))
    aug[:n_x, :n_x] = Ac
    aug[:n_x, n_x:] = Bc
    E = expm(aug * dt)
    return E[:n_x, :n_x], E[:n_x, n_x:]


def gen_mass_spring(
    M: int,
    n_u: int,
    seed: int = 0,
    T: int = 30,
    dt: float = 0.5,
    x0_value: float = 1.0,
    state_bound: float = STATE_BOUND,
    input_bound: float = INPUT_BOUND,
) -> MpcProblem:
    """质量弹簧链基准，n_x = 2M

    链本身是确定的，seed 只为与其他生成器保持同一接口。
    """
    if M < 2 or not 1 <= n_u <= M:
        raise ProblemValidationError("M", f"要求 M ≥ 2 且 1 ≤ n_u ≤ M，实际 M={M}, n_u={n_u}")
    A, B = mass_spring_dynamics(M, n_u, dt)
    n_x = 2 * M
    A_xi, B_ui, b = box_constraints(n_x, n_u, state_bound, input_bound)
    logger.debug(f"[#gen] 质量弹簧链 M={M} n_u={n_u} T={T} dt={dt} seed={seed}")
    return MpcProblem.create(
        A_xe=A,
        B_ue=B,
        Q=np.eye(n_x),
        U_ctl=np.eye(n_u),
        T=T,
        x0=np.full(n_x, x0_value),
        A_xi=A_xi,
        B_ui=B_ui,
        b_xui=b,
        b_xui_f=b,
    )
