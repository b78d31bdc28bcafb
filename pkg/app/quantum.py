"""
量子关联模块

2⊗2 希尔伯特空间上的小型稠密厄米矩阵运算：单态关联、条件协方差、
可分态界、CHSH 算符、Tsirelson 界、Landau 等式以及有限孔径下的
平滑关联。
"""

import logging
import math
from typing import Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from .exceptions import InvariantViolation, QuantumValidationError
from .models import (
    CorrelationSet,
    HermitianOperator,
    QuantumState,
    SeparableComponent,
    SeparableMixture,
    SettingPair,
    SphericalCap,
    UnitVector3,
)

logger = logging.getLogger(__name__)

IDENTITY2 = np.eye(2, dtype=complex)
IDENTITY4 = np.eye(4, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)

TSIRELSON_BOUND = 2 * math.sqrt(2)
OBSERVABLE_NORM_TOL = 1e-9
PSD_TOL = 1e-9

VectorLike = Union[UnitVector3, Sequence[float]]


def unit_vector(a: VectorLike) -> UnitVector3:
    """转换并校验单位向量"""
    if isinstance(a, UnitVector3):
        return a
    try:
        return UnitVector3.of(a)
    except (ValidationError, ValueError) as e:
        raise QuantumValidationError(str(e)) from e


def make_cap(axis: VectorLike, epsilon: float) -> SphericalCap:
    """构造球冠，ε 必须在 (0, 2]"""
    try:
        return SphericalCap(axis=unit_vector(axis), epsilon=epsilon)
    except ValidationError as e:
        raise QuantumValidationError(f"invalid spherical cap: epsilon={epsilon!r}") from e


def spin_operator(a: VectorLike) -> HermitianOperator:
    """
    自旋投影算符 σ·a

    本征值为 ±1，迹为 0，平方为单位阵。
    """
    vec = unit_vector(a).array
    return HermitianOperator(matrix=sum(c * s for c, s in zip(vec, PAULI)))


def singlet_state() -> QuantumState:
    """(|01⟩ - |10⟩)/√2，|0⟩ 为 σ_z 的 +1 本征态"""
    return QuantumState.pure(np.array([0, 1, -1, 0], dtype=complex) / math.sqrt(2))


def maximally_mixed_state() -> QuantumState:
    return QuantumState.mixed(IDENTITY4 / 4)


def _expect(rho: np.ndarray, op: np.ndarray) -> float:
    value = np.trace(rho @ op)
    if abs(value.imag) > 1e-12:
        raise InvariantViolation("real-expectation", f"imaginary residue {value.imag:.3e}")
    return float(value.real)


def _require_qubit_operator(op: HermitianOperator, name: str):
    if op.dim != 2:
        raise QuantumValidationError(f"{name}: dimension mismatch, expected 2x2 got {op.dim}x{op.dim}")


class Covariance(NamedTuple):
    """条件协方差 cov(A, B | ρ)"""
    e_ab: float
    e_a: float
    e_b: float
    cov: float


def conditional_covariance(state: QuantumState, op_a: HermitianOperator, op_b: HermitianOperator) -> Covariance:
    """
    E(A|ρ) = Tr ρ(Â⊗I)，E(B|ρ) = Tr ρ(I⊗B̂)，E(AB|ρ) = Tr ρ(Â⊗B̂)

    Args:
        state: 两比特态
        op_a: Alice 的 2×2 可观测量
        op_b: Bob 的 2×2 可观测量

    Returns:
        (E(AB), E(A), E(B), cov)
    """
    _require_qubit_operator(op_a, "A")
    _require_qubit_operator(op_b, "B")
    rho = state.density()
    e_ab = _expect(rho, np.kron(op_a.matrix, op_b.matrix))
    e_a = _expect(rho, np.kron(op_a.matrix, IDENTITY2))
    e_b = _expect(rho, np.kron(IDENTITY2, op_b.matrix))
    return Covariance(e_ab, e_a, e_b, e_ab - e_a * e_b)


def eigen_probabilities(state: QuantumState, op_a: HermitianOperator, op_b: HermitianOperator) -> np.ndarray:
    """
    ±1 可观测量本征基上的联合分布 p(α, β) = Tr ρ(P_α ⊗ P_β)

    下标 0 对应 +1，1 对应 -1；P_α = (I + α Â)/2。
    """
    for name, op in (("A", op_a), ("B", op_b)):
        _require_qubit_operator(op, name)
        if np.max(np.abs(op.matrix @ op.matrix - IDENTITY2)) > 1e-10:
            raise QuantumValidationError(f"{name}: eigen-probabilities need a ±1-valued observable")
    rho = state.density()
    probs = np.empty((2, 2))
    for i, alpha in enumerate((1, -1)):
        for j, beta in enumerate((1, -1)):
            proj = np.kron((IDENTITY2 + alpha * op_a.matrix) / 2, (IDENTITY2 + beta * op_b.matrix) / 2)
            probs[i, j] = _expect(rho, proj)
    return probs


class QuantumCorrelations(BaseModel):
    """四个设置对的量子期望与本征基概率表"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    correlations: CorrelationSet
    tables: Dict[SettingPair, np.ndarray]


def correlation_set_quantum(
    state: QuantumState,
    a: VectorLike,
    ap: VectorLike,
    b: VectorLike,
    bp: VectorLike
) -> QuantumCorrelations:
    """
    四组设置下的关联与各自的本征基概率表

    每个表非负、归一，±1 加权和与算符期望一致（1e-12）。
    """
    ops_a = [spin_operator(v) for v in (a, ap)]
    ops_b = [spin_operator(v) for v in (b, bp)]
    pairwise, tables = [], {}
    for pair in SettingPair:
        i, j = pair.columns
        op_a, op_b = ops_a[i], ops_b[j - 2]
        cov = conditional_covariance(state, op_a, op_b)
        probs = eigen_probabilities(state, op_a, op_b)
        if probs.min() < -1e-12 or abs(probs.sum() - 1.0) > 1e-12:
            raise InvariantViolation("eigen-table", f"{pair.value}: invalid probability table {probs}")
        weighted = probs[0, 0] - probs[0, 1] - probs[1, 0] + probs[1, 1]
        if abs(weighted - cov.e_ab) > 1e-12:
            raise InvariantViolation("eigen-table", f"{pair.value}: table mean {weighted} != {cov.e_ab}")
        pairwise.append(cov.e_ab)
        tables[pair] = probs

    singles = [
        conditional_covariance(state, ops_a[0], ops_b[0]).e_a,
        conditional_covariance(state, ops_a[1], ops_b[0]).e_a,
        conditional_covariance(state, ops_a[0], ops_b[0]).e_b,
        conditional_covariance(state, ops_a[0], ops_b[1]).e_b,
    ]
    corr = CorrelationSet.from_values([_clip(e) for e in pairwise], [_clip(e) for e in singles])
    return QuantumCorrelations(correlations=corr, tables=tables)


def _clip(value: float) -> float:
    """吸收 ±1 附近的舍入误差"""
    return min(1.0, max(-1.0, value))


def tsirelson_settings() -> Tuple[UnitVector3, UnitVector3, UnitVector3, UnitVector3]:
    """
    使单态的标准 CHSH 达到 2√2 的设置 (a, a', b, b')

    b、b' 正交；a = (b' - b)/√2，a' = -(b + b')/√2。
    a' 的负号对应单态关联 E = -a·b 的约定。
    """
    b = np.array([1.0, 0.0, 0.0])
    bp = np.array([0.0, 1.0, 0.0])
    a = (bp - b) / math.sqrt(2)
    ap = -(b + bp) / math.sqrt(2)
    return tuple(UnitVector3.normalized(v) for v in (a, ap, b, bp))


def _check_observable(op: HermitianOperator, name: str):
    _require_qubit_operator(op, name)
    if op.norm() > 1 + OBSERVABLE_NORM_TOL:
        raise QuantumValidationError(f"{name}: not a valid observable (norm {op.norm():.6f} > 1)")


def chsh_operator(
    op_a: HermitianOperator,
    op_ap: HermitianOperator,
    op_b: HermitianOperator,
    op_bp: HermitianOperator
) -> HermitianOperator:
    """Ŝ = Â⊗B̂ - Â⊗B̂' + Â'⊗B̂ + Â'⊗B̂'"""
    for name, op in (("A", op_a), ("A'", op_ap), ("B", op_b), ("B'", op_bp)):
        _check_observable(op, name)
    s = (
        np.kron(op_a.matrix, op_b.matrix - op_bp.matrix)
        + np.kron(op_ap.matrix, op_b.matrix + op_bp.matrix)
    )
    return HermitianOperator(matrix=s)


def _commutator(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x @ y - y @ x


class TsirelsonCheck(BaseModel):
    """Ŝ² 与 4I + [Â,Â']⊗[B̂,B̂'] 的比较"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    lhs: np.ndarray
    rhs: np.ndarray
    psd_gap: float
    norm: float
    landau_residual: Optional[float] = None

    @property
    def holds(self) -> bool:
        return self.psd_gap >= -PSD_TOL


def tsirelson_inequality_check(
    op_a: HermitianOperator,
    op_ap: HermitianOperator,
    op_b: HermitianOperator,
    op_bp: HermitianOperator
) -> TsirelsonCheck:
    """
    psd_gap 为 (rhs - lhs) 的最小本征值

    四个算符都满足 X² = I 时额外计算 Landau 等式
    Ĉ² = I + ¼[Â,Â']⊗[B̂,B̂'] (Ĉ = Ŝ/2) 的残差（算符范数）。
    """
    s = chsh_operator(op_a, op_ap, op_b, op_bp)
    lhs = s.matrix @ s.matrix
    comm = np.kron(_commutator(op_a.matrix, op_ap.matrix), _commutator(op_b.matrix, op_bp.matrix))
    rhs = 4 * IDENTITY4 + comm
    gap = float(np.min(np.linalg.eigvalsh((rhs - lhs + (rhs - lhs).conj().T) / 2)))

    residual = None
    if all(np.max(np.abs(op.matrix @ op.matrix - IDENTITY2)) <= 1e-10 for op in (op_a, op_ap, op_b, op_bp)):
        c = s.matrix / 2
        residual = float(np.linalg.norm(c @ c - IDENTITY4 - comm / 4, ord=2))

    if gap < -PSD_TOL:
        logger.warning(f"S^2 <= 4I + [A,A']x[B,B'] violated: smallest eigenvalue of the gap {gap:.3e}")
    return TsirelsonCheck(lhs=lhs, rhs=rhs, psd_gap=gap, norm=s.norm(), landau_residual=residual)


def separable_chsh(
    mixture: SeparableMixture,
    a: VectorLike,
    ap: VectorLike,
    b: VectorLike,
    bp: VectorLike
) -> float:
    """可分混合态上的标准 CHSH 值，|S| <= 2 作为定理断言"""
    state = QuantumState.mixed(mixture.density())
    ops_a = [spin_operator(v) for v in (a, ap)]
    ops_b = [spin_operator(v) for v in (b, bp)]
    e = [
        conditional_covariance(state, ops_a[i], ops_b[j - 2]).e_ab
        for i, j in (p.columns for p in SettingPair)
    ]
    s = e[0] - e[1] + e[2] + e[3]
    if abs(s) > 2 + OBSERVABLE_NORM_TOL:
        raise InvariantViolation("separable-bound", f"|S| = {abs(s):.12f} > 2 for a separable state")
    return s


# ========================
# 平滑关联
# ========================

def _perpendicular_basis(axis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def _cap_mean(cap: SphericalCap, order: int) -> np.ndarray:
    """
    球冠上单位向量的平均值

    坐标 t = u·a ∈ [1-ε, 1]、方位角 φ ∈ [0, 2π)，面元为 dt dφ，
    两个方向都用 Gauss-Legendre 求积；除以球冠面积 2πε。
    """
    axis = cap.axis.array
    e1, e2 = _perpendicular_basis(axis)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    lo = 1.0 - cap.epsilon
    t = lo + (nodes + 1) * cap.epsilon / 2
    wt = weights * cap.epsilon / 2
    phi = (nodes + 1) * math.pi
    wp = weights * math.pi

    rho = np.sqrt(np.clip(1.0 - t ** 2, 0.0, None))
    tt, pp = np.meshgrid(t, phi, indexing="ij")
    rr, _ = np.meshgrid(rho, phi, indexing="ij")
    w = np.outer(wt, wp)
    u = (
        tt[..., None] * axis
        + (rr * np.cos(pp))[..., None] * e1
        + (rr * np.sin(pp))[..., None] * e2
    )
    area = w.sum()
    return (w[..., None] * u).sum(axis=(0, 1)) / area


def smeared_correlation(cap_a: SphericalCap, cap_b: SphericalCap, order: int = 64) -> float:
    """
    E(A_a B_b) = η(a)η(b) ∫∫ -u·v du dv，η 为球冠面积的倒数

    被积函数可分离，结果等于 -⟨u⟩_a · ⟨v⟩_b。
    """
    return float(-_cap_mean(cap_a, order) @ _cap_mean(cap_b, order))


def smeared_correlation_closed_form(cap_a: SphericalCap, cap_b: SphericalCap) -> float:
    """-(1 - ε_a/2)(1 - ε_b/2)(a·b)：球冠上 u·a 在 [1-ε, 1] 均匀分布"""
    return -(1 - cap_a.epsilon / 2) * (1 - cap_b.epsilon / 2) * cap_a.axis.dot(cap_b.axis)


def _sample_cap(cap: SphericalCap, n_draws: int, rng: np.random.Generator, chunk: int) -> np.ndarray:
    """球面均匀抽样后拒绝球冠外的点"""
    axis = cap.axis.array
    accepted = []
    remaining = n_draws
    while remaining > 0:
        size = min(chunk, remaining)
        u = rng.standard_normal((size, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        accepted.append(u[np.abs(1.0 - u @ axis) <= cap.epsilon])
        remaining -= size
    return np.concatenate(accepted)


def smeared_correlation_monte_carlo(
    cap_a: SphericalCap,
    cap_b: SphericalCap,
    n_draws: int,
    seed: int,
    chunk: int = 1_000_000
) -> Tuple[float, float]:
    """
    球面蒙特卡洛估计平滑关联

    Returns:
        (估计值, 标准误差)
    """
    rng_a, rng_b = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    u = _sample_cap(cap_a, n_draws, rng_a, chunk)
    v = _sample_cap(cap_b, n_draws, rng_b, chunk)
    n = min(len(u), len(v))
    if n < 2:
        raise ValueError(f"only {n} accepted samples; increase n_draws")
    products = -np.einsum("ij,ij->i", u[:n], v[:n])
    return float(products.mean()), float(products.std(ddof=1) / math.sqrt(n))


# ========================
# 随机对象（性质检验与场景使用）
# ========================

def random_unit_vector(rng: np.random.Generator) -> UnitVector3:
    v = rng.standard_normal(3)
    return UnitVector3.normalized(v / np.linalg.norm(v))


def random_observable(rng: np.random.Generator) -> HermitianOperator:
    """随机 ±1 值可观测量 σ·n"""
    return spin_operator(random_unit_vector(rng))


def random_qubit_density(rng: np.random.Generator) -> np.ndarray:
    """Bloch 球内均匀的 2×2 密度矩阵"""
    r = random_unit_vector(rng).array * rng.random() ** (1 / 3)
    rho = (IDENTITY2 + sum(c * s for c, s in zip(r, PAULI))) / 2
    return (rho + rho.conj().T) / 2


def random_separable_mixture(rng: np.random.Generator, n_components: int = 3) -> SeparableMixture:
    weights = rng.dirichlet(np.ones(n_components))
    weights /= weights.sum()
    return SeparableMixture(components=tuple(
        SeparableComponent(weight=float(w), rho_a=random_qubit_density(rng), rho_b=random_qubit_density(rng))
        for w in weights
    ))


def smeared_chsh(
    settings: Sequence[VectorLike],
    epsilon: float,
    order: int = 64
) -> CorrelationSet:
    """四组设置都替换为半径 ε 的球冠后的平滑关联"""
    axes = [unit_vector(v) for v in settings]
    caps = [make_cap(axis, epsilon) for axis in axes]
    return CorrelationSet.from_values([
        smeared_correlation(caps[i], caps[j], order) for i, j in (p.columns for p in SettingPair)
    ])
