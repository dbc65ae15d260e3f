"""
滚动时域控制问题的定义与分块 QP 组装

变量排列为 y = [û_0, x_1, û_1, x_2, …, û_{T-1}, x_T]，
y.reshape(T, n_p + n_x) 的前 n_p 列是控制，后 n_x 列是状态。
目标函数为 ½·yᵀHy + gᵀy；等式 A_e y = b_e；不等式 A_i y ≥ b_i。
"""
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .augment import Augmentation
from .errors import DimensionError, ProblemValidationError

PD_TOL = 1e-10


@dataclass(frozen=True)
class MpcProblem:
    """时不变的线性 MPC 问题：x(t+1) = A_xe x(t) + B_ue u(t) + c"""
    A_xe: np.ndarray
    B_ue: np.ndarray
    Q: np.ndarray
    U_ctl: np.ndarray
    S: np.ndarray
    q: np.ndarray
    r: np.ndarray
    Q_f: np.ndarray
    q_f: np.ndarray
    A_xi: np.ndarray
    B_ui: np.ndarray
    b_xui: np.ndarray
    b_xui_f: np.ndarray
    c: np.ndarray
    T: int
    x0: np.ndarray

    @property
    def n_x(self) -> int:
        return self.A_xe.shape[0]

    @property
    def n_u(self) -> int:
        return self.B_ue.shape[1]

    @property
    def m_i(self) -> int:
        return self.A_xi.shape[0]

    @classmethod
    def create(
        cls,
        A_xe,
        B_ue,
        Q,
        U_ctl,
        T: int,
        x0,
        S=None,
        q=None,
        r=None,
        Q_f=None,
        q_f=None,
        A_xi=None,
        B_ui=None,
        b_xui=None,
        b_xui_f=None,
        c=None,
        validate: bool = True,
    ) -> "MpcProblem":
        """按缺省规则补齐可选字段并校验"""
        A_xe = _matrix(A_xe, "A_xe")
        B_ue = _matrix(B_ue, "B_ue")
        n_x, n_u = A_xe.shape[0], B_ue.shape[1]
        Q = _matrix(Q, "Q")
        q = np.zeros(n_x) if q is None else _vector(q, "q")
        A_xi = np.zeros((0, n_x)) if A_xi is None else _matrix(A_xi, "A_xi")
        m_i = A_xi.shape[0]
        b_xui = np.zeros(m_i) if b_xui is None else _vector(b_xui, "b_xui")
        prob = cls(
            A_xe=A_xe,
            B_ue=B_ue,
            Q=Q,
            U_ctl=_matrix(U_ctl, "U_ctl"),
            S=np.zeros((n_x, n_u)) if S is None else _matrix(S, "S"),
            q=q,
            r=np.zeros(n_u) if r is None else _vector(r, "r"),
            Q_f=Q.copy() if Q_f is None else _matrix(Q_f, "Q_f"),
            q_f=q.copy() if q_f is None else _vector(q_f, "q_f"),
            A_xi=A_xi,
            B_ui=np.zeros((m_i, n_u)) if B_ui is None else _matrix(B_ui, "B_ui"),
            b_xui=b_xui,
            b_xui_f=b_xui.copy() if b_xui_f is None else _vector(b_xui_f, "b_xui_f"),
            c=np.zeros(n_x) if c is None else _vector(c, "c"),
            T=int(T),
            x0=_vector(x0, "x0"),
        )
        if validate:
            prob.validate()
        return prob

    def validate(self) -> None:
        """检查尺寸、正定性与满秩条件

        Raises:
            ProblemValidationError: 第一个不满足条件的字段
        """
        n_x, n_u, m_i = self.n_x, self.n_u, self.m_i
        shapes = {
            "A_xe": (self.A_xe, (n_x, n_x)),
            "B_ue": (self.B_ue, (n_x, n_u)),
            "Q": (self.Q, (n_x, n_x)),
            "U_ctl": (self.U_ctl, (n_u, n_u)),
            "S": (self.S, (n_x, n_u)),
            "q": (self.q, (n_x,)),
            "r": (self.r, (n_u,)),
            "Q_f": (self.Q_f, (n_x, n_x)),
            "q_f": (self.q_f, (n_x,)),
            "A_xi": (self.A_xi, (m_i, n_x)),
            "B_ui": (self.B_ui, (m_i, n_u)),
            "b_xui": (self.b_xui, (m_i,)),
            "b_xui_f": (self.b_xui_f, (m_i,)),
            "c": (self.c, (n_x,)),
            "x0": (self.x0, (n_x,)),
        }
        for field, (value, expected) in shapes.items():
            if value.shape != expected:
                raise ProblemValidationError(field, f"期望尺寸 {expected}，实际为 {value.shape}")
            if not np.all(np.isfinite(value)):
                raise ProblemValidationError(field, "包含非有限值")

        if self.T < 1:
            raise ProblemValidationError("T", f"时域长度必须 ≥ 1，实际为 {self.T}")
        if n_u < 1 or n_u > n_x:
            raise ProblemValidationError("B_ue", f"要求 1 ≤ n_u ≤ n_x，实际 n_u={n_u}, n_x={n_x}")

        for field in ("Q", "U_ctl"):
            value = getattr(self, field)
            if not _is_symmetric(value):
                raise ProblemValidationError(field, "矩阵不对称")
            try:
                np.linalg.cholesky(value)
            except np.linalg.LinAlgError:
                raise ProblemValidationError(field, "矩阵非正定")
        if not _is_symmetric(self.Q_f):
            raise ProblemValidationError("Q_f", "矩阵不对称")
        if np.linalg.eigvalsh(self.Q_f).min() < -PD_TOL * max(1.0, np.abs(self.Q_f).max()):
            raise ProblemValidationError("Q_f", "矩阵非半正定")

        if np.linalg.matrix_rank(self.A_xe) < n_x:
            raise ProblemValidationError("A_xe", "系统矩阵不满秩")
        if np.linalg.matrix_rank(self.B_ue) < n_u:
            raise ProblemValidationError("B_ue", "传递矩阵列不满秩")

    def with_x0(self, x0) -> "MpcProblem":
        x0 = _vector(x0, "x0")
        if x0.shape != (self.n_x,):
            raise ProblemValidationError("x0", f"期望尺寸 {(self.n_x,)}，实际为 {x0.shape}")
        return replace(self, x0=x0)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"n_x": self.n_x, "n_u": self.n_u, "T": self.T}
        for key, field in _JSON_FIELDS.items():
            data[key] = getattr(self, field).tolist()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MpcProblem":
        """按问题 JSON 模式构造；缺失的 S/q/r/c 为零，Q_f 缺省为 Q，q_f 为 q，b_xui_f 为 b_xui"""
        for key in ("n_x", "n_u", "T", "A_xe", "B_ue", "Q", "U", "x0"):
            if key not in data:
                raise ProblemValidationError(key, "缺少必需字段")
        n_x, n_u = int(data["n_x"]), int(data["n_u"])
        kwargs = {field: data.get(key) for key, field in _JSON_FIELDS.items()}
        shapes = {
            "A_xe": (n_x, n_x), "B_ue": (n_x, n_u), "Q": (n_x, n_x), "U_ctl": (n_u, n_u),
            "S": (n_x, n_u), "Q_f": (n_x, n_x), "A_xi": (-1, n_x), "B_ui": (-1, n_u),
        }
        for field, shape in shapes.items():
            if kwargs[field] is not None:
                kwargs[field] = _shaped(kwargs[field], shape, field)
        return cls.create(T=int(data["T"]), **kwargs)


_JSON_FIELDS = {
    "A_xe": "A_xe",
    "B_ue": "B_ue",
    "Q": "Q",
    "U": "U_ctl",
    "S": "S",
    "q": "q",
    "r": "r",
    "Q_f": "Q_f",
    "q_f": "q_f",
    "A_xi": "A_xi",
    "B_ui": "B_ui",
    "b_xui": "b_xui",
    "b_xui_f": "b_xui_f",
    "c": "c",
    "x0": "x0",
}


def _shaped(value, shape, field: str) -> np.ndarray:
    """嵌套列表原样使用，扁平列表按行优先重排为 shape"""
    try:
        return np.asarray(value, dtype=float).reshape(shape)
    except (TypeError, ValueError):
        raise ProblemValidationError(field, f"无法重排为尺寸 {shape}")


def _matrix(value, field: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ProblemValidationError(field, "无法转换为数值矩阵")
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != 2:
        raise ProblemValidationError(field, f"应为二维矩阵，实际维数 {arr.ndim}")
    return arr


def _vector(value, field: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ProblemValidationError(field, "无法转换为数值向量")
    if arr.ndim != 1:
        raise ProblemValidationError(field, f"应为一维向量，实际维数 {arr.ndim}")
    return arr


def _is_symmetric(M: np.ndarray) -> bool:
    return np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max()))


def load_problem(path: Union[str, Path]) -> MpcProblem:
    """从 JSON 文件读取问题"""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    logger.debug(f"[#problem] 已读取问题文件: {path}")
    return MpcProblem.from_dict(data)


def save_problem(prob: MpcProblem, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(prob.to_dict(), f, indent=2)
    logger.debug(f"[#problem] 已写入问题文件: {path}")


def stage_cost(prob: MpcProblem, x: np.ndarray, u: np.ndarray) -> float:
    """单阶段代价 ½xᵀQx + xᵀSu + ½uᵀUu + qᵀx + rᵀu"""
    return float(
        0.5 * x @ prob.Q @ x + x @ prob.S @ u + 0.5 * u @ prob.U_ctl @ u + prob.q @ x + prob.r @ u
    )


class DenseQp(NamedTuple):
    """稠密形式的 QP，仅供 oracle 与测试使用"""
    H: np.ndarray
    g: np.ndarray
    A_e: np.ndarray
    b_e: np.ndarray
    A_i: np.ndarray
    b_i: np.ndarray


@dataclass(frozen=True)
class StructuredQp:
    """分块 QP，热路径上从不稠密化

    每个阶段的控制维数为 n_p：增广问题中 n_p = n_x，经典问题中 n_p = n_u。
    阶段 k 的不等式块为 A_s x_k + B_s u_k ≥ b_s（x_0 移到右端），
    末端块为 A_f x_T ≥ b_f。
    """
    T: int
    n_x: int
    n_p: int
    n_u: int
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    U: np.ndarray
    Q_f: np.ndarray
    q: np.ndarray
    r: np.ndarray
    q_f: np.ndarray
    c: np.ndarray
    x0: np.ndarray
    A_s: np.ndarray
    B_s: np.ndarray
    b_s: np.ndarray
    A_f: np.ndarray
    b_f: np.ndarray
    g: np.ndarray
    b_e: np.ndarray
    b_i: np.ndarray
    augmented: bool = False

    @property
    def n(self) -> int:
        return self.T * (self.n_p + self.n_x)

    @property
    def m_s(self) -> int:
        return self.A_s.shape[0]

    @property
    def m_f(self) -> int:
        return self.A_f.shape[0]

    @property
    def m(self) -> int:
        return self.T * self.m_s + self.m_f

    @property
    def n_ustar(self) -> int:
        return self.n_p - self.n_u

    # ---- 分块工具 ----
    def split(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        Y = self._blocks(y)
        return Y[:, :self.n_p], Y[:, self.n_p:]

    def stack(self, U: np.ndarray, X: np.ndarray) -> np.ndarray:
        return np.hstack([U, X]).reshape(-1)

    def _blocks(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise DimensionError("y", (self.n,), y.shape)
        return y.reshape(self.T, self.n_p + self.n_x)

    def _previous_states(self, X: np.ndarray) -> np.ndarray:
        """阶段 k 的状态 x_k（x_0 不属于 y，以零代替）"""
        Xprev = np.zeros_like(X)
        Xprev[1:] = X[:-1]
        return Xprev

    # ---- 算子 ----
    def hess_vec(self, y: np.ndarray) -> np.ndarray:
        U, X = self.split(y)
        Xprev = self._previous_states(X)
        out_u = U @ self.U.T + Xprev @ self.S
        out_x = np.empty_like(X)
        out_x[:-1] = X[:-1] @ self.Q.T + U[1:] @ self.S.T
        out_x[-1] = X[-1] @ self.Q_f.T
        return self.stack(out_u, out_x)

    def eq_vec(self, y: np.ndarray) -> np.ndarray:
        """A_e y，第 k 行块为 x_{k+1} - A x_k - B u_k"""
        U, X = self.split(y)
        return (X - U @ self.B.T - self._previous_states(X) @ self.A.T).reshape(-1)

    def eq_residual(self, y: np.ndarray) -> np.ndarray:
        """k_2 = b_e - A_e y"""
        return self.b_e - self.eq_vec(y)

    def eq_rmatvec(self, lam: np.ndarray) -> np.ndarray:
        """A_eᵀλ"""
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.T * self.n_x,):
            raise DimensionError("lambda_e", (self.T * self.n_x,), lam.shape)
        L = lam.reshape(self.T, self.n_x)
        out_u = -L @ self.B
        out_x = L.copy()
        out_x[:-1] -= L[1:] @ self.A
        return self.stack(out_u, out_x)

    def ineq_vec(self, y: np.ndarray) -> np.ndarray:
        """A_i y"""
        U, X = self.split(y)
        stage = self._previous_states(X) @ self.A_s.T + U @ self.B_s.T
        return np.concatenate([stage.reshape(-1), self.A_f @ X[-1]])

    def ineq_rmatvec(self, v: np.ndarray) -> np.ndarray:
        """A_iᵀv"""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.m,):
            raise DimensionError("v", (self.m,), v.shape)
        V = v[:self.T * self.m_s].reshape(self.T, self.m_s)
        out_u = V @ self.B_s
        out_x = np.zeros((self.T, self.n_x))
        out_x[:-1] = V[1:] @ self.A_s
        out_x[-1] = v[self.T * self.m_s:] @ self.A_f
        return self.stack(out_u, out_x)

    def stage_slices(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """把长度为 m 的不等式向量拆成 (T, m_s) 阶段块与末端块"""
        return v[:self.T * self.m_s].reshape(self.T, self.m_s), v[self.T * self.m_s:]

    def u_trajectory(self, y: np.ndarray) -> np.ndarray:
        """原始控制轨迹 (T, n_u)，丢弃虚拟控制"""
        U, _ = self.split(y)
        return U[:, :self.n_u].copy()

    def virtual_controls(self, y: np.ndarray) -> np.ndarray:
        U, _ = self.split(y)
        return U[:, self.n_u:].copy()

    def x_trajectory(self, y: np.ndarray) -> np.ndarray:
        _, X = self.split(y)
        return X.copy()

    def with_state(self, x0) -> "StructuredQp":
        """换成新的初始状态，只重算 g、b_e、b_i"""
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (self.n_x,):
            raise DimensionError("x0", (self.n_x,), x0.shape)
        g, b_e, b_i = _state_vectors(
            self.T, self.A, self.S, self.q, self.r, self.q_f, self.c, self.A_s, self.b_s, self.b_f, x0
        )
        return replace(self, x0=x0, g=g, b_e=b_e, b_i=b_i)

    def densify(self) -> DenseQp:
        """通过对单位列向量施加分块算子得到稠密矩阵"""
        eye = np.eye(self.n)
        H = np.column_stack([self.hess_vec(col) for col in eye])
        A_e = np.column_stack([self.eq_vec(col) for col in eye])
        A_i = np.column_stack([self.ineq_vec(col) for col in eye]) if self.m else np.zeros((0, self.n))
        return DenseQp(H, self.g.copy(), A_e, self.b_e.copy(), A_i, self.b_i.copy())


def _state_vectors(T, A, S, q, r, q_f, c, A_s, b_s, b_f, x0):
    # g 的首块为 r + Sᵀx0（½ 缩放的目标函数下没有因子 2）
    G_u = np.tile(r, (T, 1))
    G_u[0] += S.T @ x0
    G_x = np.tile(q, (T, 1))
    G_x[-1] = q_f
    g = np.hstack([G_u, G_x]).reshape(-1)

    b_e = np.tile(c, T)
    b_e[:len(c)] += A @ x0

    B_i = np.tile(b_s, (T, 1))
    B_i[0] -= A_s @ x0
    b_i = np.concatenate([B_i.reshape(-1), b_f])
    return g, b_e, b_i


def assemble_qp(prob: MpcProblem, aug: Optional[Augmentation] = None) -> StructuredQp:
    """把 MPC 问题组装为分块 QP

    aug 为 None 时得到经典求解器使用的原始问题；否则使用虚拟控制增广，
    并在每个阶段的不等式块末尾追加 u* ≥ 0 与 -u* ≥ 0 两组行。

    Raises:
        ProblemValidationError: aug 与 prob 不匹配
    """
    n_x, n_u, m_i = prob.n_x, prob.n_u, prob.m_i
    if aug is None:
        B, U, S, r = prob.B_ue, prob.U_ctl, prob.S, prob.r
        A_s, B_s, b_s = prob.A_xi, prob.B_ui, prob.b_xui
        n_p = n_u
    else:
        if aug.n_x != n_x or aug.n_u != n_u:
            raise ProblemValidationError("aug", f"增广尺寸 ({aug.n_x}, {aug.n_u}) 与问题 ({n_x}, {n_u}) 不符")
        if not np.allclose(aug.B_hat[:, :n_u], prob.B_ue, rtol=0.0, atol=1e-12):
            raise ProblemValidationError("aug", "B_hat 的前 n_u 列与 B_ue 不一致")
        n_p, n_star = n_x, aug.n_ustar
        B, U = aug.B_hat, aug.U_hat
        S = np.hstack([prob.S, np.zeros((n_x, n_star))])
        r = np.concatenate([prob.r, np.zeros(n_star)])
        A_s = np.vstack([prob.A_xi, np.zeros((2 * n_star, n_x))])
        B_s = np.zeros((m_i + 2 * n_star, n_x))
        B_s[:m_i, :n_u] = prob.B_ui
        B_s[m_i:m_i + n_star, n_u:] = np.eye(n_star)
        B_s[m_i + n_star:, n_u:] = -np.eye(n_star)
        b_s = np.concatenate([prob.b_xui, np.zeros(2 * n_star)])

    g, b_e, b_i = _state_vectors(
        prob.T, prob.A_xe, S, prob.q, r, prob.q_f, prob.c, A_s, b_s, prob.b_xui_f, prob.x0
    )
    qp = StructuredQp(
        T=prob.T,
        n_x=n_x,
        n_p=n_p,
        n_u=n_u,
        A=prob.A_xe,
        B=B,
        Q=prob.Q,
        S=S,
        U=U,
        Q_f=prob.Q_f,
        q=prob.q,
        r=r,
        q_f=prob.q_f,
        c=prob.c,
        x0=prob.x0,
        A_s=A_s,
        B_s=B_s,
        b_s=b_s,
        A_f=prob.A_xi,
        b_f=prob.b_xui_f,
        g=g,
        b_e=b_e,
        b_i=b_i,
        augmented=aug is not None,
    )
    logger.debug(f"[#problem] 组装 QP: n={qp.n} 等式行={prob.T * n_x} 不等式行={qp.m} 增广={qp.augmented}")
    return qp


def objective_value(qp: StructuredQp, y: np.ndarray) -> float:
    """½·yᵀHy + gᵀy，分块计算"""
    y = np.asarray(y, dtype=float)
    if y.shape != (qp.n,):
        raise DimensionError("y", (qp.n,), y.shape)
    return float(0.5 * y @ qp.hess_vec(y) + qp.g @ y)
