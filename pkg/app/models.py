"""
数据模型定义

所有领域类型均为不可变的 pydantic 模型；概率与期望值可以是精确的
Fraction，也可以是 float（只在报告边界处转为浮点）。
"""

import itertools
import logging
import math
from enum import Enum
from fractions import Fraction
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    ValidationInfo,
    computed_field,
    field_validator,
    model_validator,
)

from .utils import is_exact, number_to_json, to_number

logger = logging.getLogger(__name__)

# Fraction | float
Num = Annotated[Any, BeforeValidator(to_number), PlainSerializer(number_to_json, when_used="json")]

COLUMNS = ("A", "Ap", "B", "Bp")
HOLE = 0

# (a, a', b, b') 的 16 种取值，JointDistribution4 的下标顺序
ROW_TYPES: Tuple[Tuple[int, int, int, int], ...] = tuple(
    itertools.product((1, -1), repeat=4)
)


def _check_probabilities(values, path: str, tol: float = 1e-12):
    """校验概率表：非负且归一（Fraction 精确，float 容差 tol）"""
    for i, v in enumerate(values):
        if v < 0:
            raise ValueError(f"{path}[{i}]: negative probability {v}")
    total = sum(values)
    if is_exact(values):
        if total != 1:
            raise ValueError(f"{path}: probabilities sum to {total}, expected exactly 1")
    elif abs(float(total) - 1.0) > tol:
        raise ValueError(f"{path}: probabilities sum to {float(total)!r}")


def _frozen() -> ConfigDict:
    return ConfigDict(frozen=True, arbitrary_types_allowed=True)


# ========================
# 表格与关联
# ========================

class SettingPair(str, Enum):
    """四个测量设置对"""
    AB = "AB"
    ABP = "ABp"
    APB = "ApB"
    APBP = "ApBp"

    @property
    def columns(self) -> Tuple[int, int]:
        """在 N×4 表格中对应的两列"""
        return _PAIR_COLUMNS[self]

    @property
    def index(self) -> int:
        return list(SettingPair).index(self)


_PAIR_COLUMNS = {
    SettingPair.AB: (0, 2),
    SettingPair.ABP: (0, 3),
    SettingPair.APB: (1, 2),
    SettingPair.APBP: (1, 3),
}


class SignVariant(BaseModel):
    """
    CHSH 表达式的符号组合

    S = s0·E(AB) + s1·E(AB') + s2·E(A'B) + s3·E(A'B')，要求 s0·s1·s2·s3 = -1。
    """
    model_config = _frozen()

    signs: Tuple[int, int, int, int]

    @field_validator("signs")
    @classmethod
    def _check_signs(cls, v):
        if any(s not in (1, -1) for s in v):
            raise ValueError(f"signs must be +1/-1, got {v}")
        if math.prod(v) != -1:
            raise ValueError(f"product of signs must be -1, got {v}")
        return v

    @property
    def name(self) -> str:
        return "".join("+" if s > 0 else "-" for s in self.signs)

    def apply(self, values) -> Any:
        """按符号组合四个期望值"""
        return sum(s * e for s, e in zip(self.signs, values))

    @classmethod
    def canonical(cls) -> "SignVariant":
        """E(AB) - E(AB') + E(A'B) + E(A'B')"""
        return cls(signs=(1, -1, 1, 1))

    @classmethod
    def gill(cls) -> "SignVariant":
        """有限样本实验使用的 E(AB) + E(AB') + E(A'B) - E(A'B')"""
        return cls(signs=(1, 1, 1, -1))

    @classmethod
    def from_name(cls, name: str) -> "SignVariant":
        if len(name) != 4 or any(c not in "+-" for c in name):
            raise ValueError(f"invalid sign variant {name!r}")
        return cls(signs=tuple(1 if c == "+" else -1 for c in name))

    @classmethod
    def all_variants(cls) -> List["SignVariant"]:
        """全部 8 个符号组合"""
        return [
            cls(signs=s)
            for s in itertools.product((1, -1), repeat=4)
            if math.prod(s) == -1
        ]


class CorrelationSet(BaseModel):
    """
    一次实验的四个两体期望、单体期望与计数

    期望值可为 Fraction 或 float；计数为 0 的设置对没有定义期望。
    """
    model_config = _frozen()

    e_ab: Num
    e_abp: Num
    e_apb: Num
    e_apbp: Num
    e_a: Optional[Num] = None
    e_ap: Optional[Num] = None
    e_b: Optional[Num] = None
    e_bp: Optional[Num] = None
    counts: Optional[Dict[SettingPair, int]] = None

    @model_validator(mode="after")
    def _check_ranges(self):
        for name in ("e_ab", "e_abp", "e_apb", "e_apbp", "e_a", "e_ap", "e_b", "e_bp"):
            v = getattr(self, name)
            if v is not None and not (-1 <= v <= 1):
                raise ValueError(f"{name}: expectation {v} outside [-1, 1]")
        if self.counts is not None:
            for pair, n in self.counts.items():
                if n < 0:
                    raise ValueError(f"counts.{pair.value}: negative count {n}")
                if n == 0:
                    raise ValueError(f"counts.{pair.value}: expectation undefined for zero count")
        return self

    def pairwise(self) -> Tuple[Any, Any, Any, Any]:
        return (self.e_ab, self.e_abp, self.e_apb, self.e_apbp)

    def singles(self) -> Optional[Tuple[Any, Any, Any, Any]]:
        """单体期望 (A, A', B, B')，缺失时返回 None"""
        values = (self.e_a, self.e_ap, self.e_b, self.e_bp)
        if any(v is None for v in values):
            return None
        return values

    def get(self, pair: SettingPair) -> Any:
        return self.pairwise()[pair.index]

    def chsh(self, variant: Optional[SignVariant] = None) -> Any:
        """CHSH 值，默认使用标准符号组合"""
        return (variant or SignVariant.canonical()).apply(self.pairwise())

    @property
    def exact(self) -> bool:
        values = [v for v in self.pairwise() + (self.e_a, self.e_ap, self.e_b, self.e_bp) if v is not None]
        return is_exact(values)

    @classmethod
    def from_values(cls, pairwise, singles=None, counts=None) -> "CorrelationSet":
        e = list(pairwise)
        s = list(singles) if singles is not None else [None] * 4
        return cls(
            e_ab=e[0], e_abp=e[1], e_apb=e[2], e_apbp=e[3],
            e_a=s[0], e_ap=s[1], e_b=s[2], e_bp=s[3],
            counts=counts,
        )

    def to_json_dict(self, variant: Optional[SignVariant] = None) -> Dict[str, Any]:
        """JSON 对象：八个期望、四个计数、符号组合名与 S"""
        variant = variant or SignVariant.canonical()
        data = self.model_dump(mode="json", exclude={"counts"})
        data["counts"] = {
            p.value: (self.counts or {}).get(p) for p in SettingPair
        }
        data["variant"] = variant.name
        data["S"] = number_to_json(self.chsh(variant))
        return data


class JointDistribution4(BaseModel):
    """(a, a', b, b') ∈ {-1,+1}^4 上的联合分布，下标顺序见 ROW_TYPES"""
    model_config = _frozen()

    weights: Tuple[Num, ...]

    @field_validator("weights")
    @classmethod
    def _check_weights(cls, v):
        if len(v) != 16:
            raise ValueError(f"expected 16 weights, got {len(v)}")
        _check_probabilities(v, "weights")
        return v

    def probability(self, row: Tuple[int, int, int, int]) -> Any:
        return self.weights[ROW_TYPES.index(tuple(row))]

    def single(self, column: int) -> Any:
        return sum(w * r[column] for w, r in zip(self.weights, ROW_TYPES))

    def pairwise_expectation(self, i: int, j: int) -> Any:
        return sum(w * r[i] * r[j] for w, r in zip(self.weights, ROW_TYPES))

    def counterfactual_expectation(self) -> Any:
        """E(A A' B B')：只有联合分布存在时才有意义"""
        return sum(w * r[0] * r[1] * r[2] * r[3] for w, r in zip(self.weights, ROW_TYPES))

    def marginals(self) -> CorrelationSet:
        """四个两体边缘期望与单体期望"""
        return CorrelationSet.from_values(
            [self.pairwise_expectation(*p.columns) for p in SettingPair],
            [self.single(c) for c in range(4)],
        )

    @classmethod
    def uniform(cls) -> "JointDistribution4":
        return cls(weights=tuple(Fraction(1, 16) for _ in range(16)))


class Spreadsheet(BaseModel):
    """
    N×4 反事实表格，列为 (A, A', B, B')

    单元格为 -1/+1，空洞记为 0。
    """
    model_config = _frozen()

    cells: np.ndarray

    @field_validator("cells", mode="before")
    @classmethod
    def _check_cells(cls, v):
        arr = np.asarray(v)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 4)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError(f"spreadsheet must have 4 columns, got shape {arr.shape}")
        if arr.size and not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("spreadsheet cells must be integers")
        if not np.isin(arr, (-1, 0, 1)).all():
            raise ValueError("spreadsheet cells must be -1, +1 or hole")
        arr = arr.astype(np.int8)
        arr.setflags(write=False)
        return arr

    @property
    def n_rows(self) -> int:
        return int(self.cells.shape[0])

    @property
    def has_holes(self) -> bool:
        return bool((self.cells == HOLE).any())

    def column(self, label: str) -> np.ndarray:
        return self.cells[:, COLUMNS.index(label)]

    @classmethod
    def from_rows(cls, rows) -> "Spreadsheet":
        """行列表构造，None 表示空洞"""
        data = [[HOLE if c is None else c for c in row] for row in rows]
        return cls(cells=np.asarray(data, dtype=np.int64).reshape(-1, 4))


# ========================
# 量子对象
# ========================

class UnitVector3(BaseModel):
    """三维单位向量"""
    model_config = _frozen()

    x: float
    y: float
    z: float

    @model_validator(mode="after")
    def _check_norm(self):
        norm = math.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"vector ({self.x}, {self.y}, {self.z}) is not a unit vector (norm {norm!r})")
        return self

    @property
    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def dot(self, other: "UnitVector3") -> float:
        return float(self.array @ other.array)

    def __neg__(self) -> "UnitVector3":
        return UnitVector3(x=-self.x, y=-self.y, z=-self.z)

    @classmethod
    def of(cls, values) -> "UnitVector3":
        x, y, z = (float(c) for c in values)
        return cls(x=x, y=y, z=z)

    @classmethod
    def normalized(cls, values, tolerance: float = 1e-6) -> "UnitVector3":
        """
        归一化输入向量

        范数偏离 1 小于 tolerance 时归一化并告警，否则报错。
        """
        arr = np.asarray([float(c) for c in values])
        if arr.shape != (3,):
            raise ValueError(f"axis needs 3 components, got {arr.size}")
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > tolerance:
            raise ValueError(f"axis {tuple(arr)} has norm {norm!r}, not a unit vector")
        if abs(norm - 1.0) > 1e-12:
            logger.warning(f"Axis {tuple(arr)} normalized (norm deviation {abs(norm - 1.0):.2e})")
        arr = arr / norm
        return cls(x=arr[0], y=arr[1], z=arr[2])


def _as_complex_matrix(v, dims=(2, 4)) -> np.ndarray:
    arr = np.array(v, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] not in dims:
        raise ValueError(f"expected a square matrix of dimension {dims}, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class HermitianOperator(BaseModel):
    """2×2 或 4×4 厄米矩阵"""
    model_config = _frozen()

    matrix: np.ndarray

    @field_validator("matrix", mode="before")
    @classmethod
    def _check_matrix(cls, v):
        arr = _as_complex_matrix(v)
        if np.max(np.abs(arr - arr.conj().T)) > 1e-12:
            raise ValueError("matrix is not Hermitian")
        return arr

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    def norm(self) -> float:
        """算符范数（最大本征值绝对值）"""
        return float(np.max(np.abs(np.linalg.eigvalsh(self.matrix))))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


class QuantumState(BaseModel):
    """两比特态：纯态向量或密度矩阵"""
    model_config = _frozen()

    kind: Literal["pure", "density"]
    vector: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _check_state(self):
        if self.kind == "pure":
            if self.vector is None or np.shape(self.vector) != (4,):
                raise ValueError("pure state needs a 4-component vector")
            if abs(np.linalg.norm(self.vector) - 1.0) > 1e-12:
                raise ValueError("state vector is not normalized")
        else:
            if self.rho is None or np.shape(self.rho) != (4, 4):
                raise ValueError("density state needs a 4x4 matrix")
            _check_density(np.asarray(self.rho, dtype=complex))
        return self

    def density(self) -> np.ndarray:
        if self.kind == "pure":
            psi = np.asarray(self.vector, dtype=complex)
            return np.outer(psi, psi.conj())
        return np.asarray(self.rho, dtype=complex)

    @classmethod
    def pure(cls, vector) -> "QuantumState":
        return cls(kind="pure", vector=np.asarray(vector, dtype=complex))

    @classmethod
    def mixed(cls, rho) -> "QuantumState":
        return cls(kind="density", rho=np.asarray(rho, dtype=complex))


def _check_density(rho: np.ndarray):
    if np.max(np.abs(rho - rho.conj().T)) > 1e-12:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > 1e-12:
        raise ValueError(f"density matrix trace {np.trace(rho).real!r} != 1")
    if np.min(np.linalg.eigvalsh(rho)) < -1e-10:
        raise ValueError("density matrix has a negative eigenvalue")


class SeparableComponent(BaseModel):
    """可分混合中的一项 w · ρ1 ⊗ ρ2"""
    model_config = _frozen()

    weight: float = Field(ge=0)
    rho_a: np.ndarray
    rho_b: np.ndarray

    @field_validator("rho_a", "rho_b", mode="before")
    @classmethod
    def _check_factor(cls, v):
        arr = _as_complex_matrix(v, dims=(2,))
        _check_density(arr)
        return arr


class SeparableMixture(BaseModel):
    """可分态的凸组合 Σ w_i ρ_i^(1) ⊗ ρ_i^(2)"""
    model_config = _frozen()

    components: Tuple[SeparableComponent, ...]

    @field_validator("components")
    @classmethod
    def _check_weights(cls, v):
        if not v:
            raise ValueError("mixture needs at least one component")
        total = sum(c.weight for c in v)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {total!r}")
        return v

    def density(self) -> np.ndarray:
        return sum(c.weight * np.kron(c.rho_a, c.rho_b) for c in self.components)


class SphericalCap(BaseModel):
    """球冠 O_a = {u : |1 - u·a| <= ε}"""
    model_config = _frozen()

    axis: UnitVector3
    epsilon: float = Field(gt=0, le=2)


# ========================
# 隐变量模型
# ========================

class LrhvmModel(BaseModel):
    """
    局域实在隐变量模型

    有限 Λ 上的分布 p 与四个确定性结果函数 Λ -> {-1,+1}。
    """
    model_config = _frozen()

    p: Tuple[Num, ...]
    a: Tuple[int, ...]
    ap: Tuple[int, ...]
    b: Tuple[int, ...]
    bp: Tuple[int, ...]

    @model_validator(mode="after")
    def _check_model(self):
        size = len(self.p)
        if size == 0:
            raise ValueError("p: hidden variable space is empty")
        _check_probabilities(self.p, "p")
        for name in ("a", "ap", "b", "bp"):
            values = getattr(self, name)
            if len(values) != size:
                raise ValueError(f"{name}: expected {size} values, got {len(values)}")
            if any(v not in (1, -1) for v in values):
                raise ValueError(f"{name}: outcomes must be +1/-1")
        return self

    @property
    def size(self) -> int:
        return len(self.p)

    def outcomes(self, lam: int) -> Tuple[int, int, int, int]:
        return (self.a[lam], self.ap[lam], self.b[lam], self.bp[lam])


INSTRUMENTS = ("x", "xp", "y", "yp")


class ContextualModel(BaseModel):
    """
    局域因果的情境隐变量模型

    源变量 (λ1, λ2) ∈ k×k，四个互不相交的仪器空间各含 m 个取值。
    A_x 只定义在 (λ1, λx) 上，从不在 λx' 上求值。结果取 -1, 0, +1。
    """
    model_config = _frozen()

    k: int = Field(ge=1)
    m: int = Field(ge=1)
    source: Tuple[Tuple[Num, ...], ...]
    p_x: Tuple[Num, ...]
    p_xp: Tuple[Num, ...]
    p_y: Tuple[Num, ...]
    p_yp: Tuple[Num, ...]
    a_x: Tuple[Tuple[int, ...], ...]
    a_xp: Tuple[Tuple[int, ...], ...]
    b_y: Tuple[Tuple[int, ...], ...]
    b_yp: Tuple[Tuple[int, ...], ...]

    @model_validator(mode="after")
    def _check_model(self):
        k, m = self.k, self.m
        if len(self.source) != k or any(len(row) != k for row in self.source):
            raise ValueError(f"source: expected a {k}x{k} table")
        _check_probabilities([v for row in self.source for v in row], "source")
        for name in INSTRUMENTS:
            probs = getattr(self, f"p_{name}")
            if len(probs) != m:
                raise ValueError(f"p_{name}: expected {m} probabilities, got {len(probs)}")
            _check_probabilities(probs, f"p_{name}")
        for name in ("a_x", "a_xp", "b_y", "b_yp"):
            table = getattr(self, name)
            if len(table) != k or any(len(row) != m for row in table):
                raise ValueError(f"{name}: expected a {k}x{m} table")
            for i, row in enumerate(table):
                for j, v in enumerate(row):
                    if v not in (-1, 0, 1):
                        raise ValueError(f"{name}[{i}][{j}]: outcome {v} not in (-1, 0, 1)")
        return self

    @property
    def exact(self) -> bool:
        values = [v for row in self.source for v in row]
        for name in INSTRUMENTS:
            values.extend(getattr(self, f"p_{name}"))
        return is_exact(values)

    def instrument(self, name: str) -> Tuple[Any, ...]:
        return getattr(self, f"p_{name}")


class SubdomainModel(BaseModel):
    """
    子域模型：公共 Λ 上的分布与每个设置对各自的子集

    subsets 为各设置对保留的 λ 下标。
    """
    model_config = _frozen()

    p: Tuple[Num, ...]
    subsets: Dict[SettingPair, Tuple[int, ...]]
    a_x: Tuple[int, ...]
    a_xp: Tuple[int, ...]
    b_y: Tuple[int, ...]
    b_yp: Tuple[int, ...]

    @model_validator(mode="after")
    def _check_model(self):
        size = len(self.p)
        _check_probabilities(self.p, "p")
        if set(self.subsets) != set(SettingPair):
            raise ValueError("subsets: one subset per setting pair is required")
        for pair, idx in self.subsets.items():
            if any(i < 0 or i >= size for i in idx):
                raise ValueError(f"subsets.{pair.value}: index out of range")
        for name in ("a_x", "a_xp", "b_y", "b_yp"):
            values = getattr(self, name)
            if len(values) != size or any(v not in (1, -1) for v in values):
                raise ValueError(f"{name}: expected {size} outcomes in (+1, -1)")
        return self


class AveragedModel(BaseModel):
    """对仪器变量平均后的模型 Ā_x(λ1), B̄_y(λ2)"""
    model_config = _frozen()

    source: Tuple[Tuple[Num, ...], ...]
    a_x: Tuple[Num, ...]
    a_xp: Tuple[Num, ...]
    b_y: Tuple[Num, ...]
    b_yp: Tuple[Num, ...]

    @model_validator(mode="after")
    def _check_range(self):
        for name in ("a_x", "a_xp", "b_y", "b_yp"):
            if any(abs(v) > 1 for v in getattr(self, name)):
                raise ValueError(f"{name}: averaged outcome outside [-1, 1]")
        return self


# ========================
# 碰撞实验
# ========================

class Observable(str, Enum):
    """速度上的阈值可观测量"""
    A = "A"
    B = "B"
    C = "C"

    def measure(self, y) -> int:
        """A(y) = -1 iff y <= 2；B(y) = -1 iff y <= 3；C(y) = +1 iff y <= 3"""
        if self is Observable.A:
            return -1 if y <= 2 else 1
        if self is Observable.B:
            return -1 if y <= 3 else 1
        return 1 if y <= 3 else -1

    @property
    def threshold(self) -> int:
        return 2 if self is Observable.A else 3


class CollisionSetting(str, Enum):
    """(Alice 测较重球, Bob 测较轻球)"""
    AB = "AB"
    AC = "AC"
    BC = "BC"
    BB = "BB"

    @property
    def observables(self) -> Tuple[Observable, Observable]:
        return Observable(self.value[0]), Observable(self.value[1])


class CollisionTrial(BaseModel):
    """一次弹性碰撞实验"""
    model_config = _frozen()

    v: Num
    v1: Num
    v2: Num
    setting: CollisionSetting
    out_a: int
    out_b: int


# ========================
# 场景配置与报告
# ========================

ScenarioName = Literal["spreadsheet", "quantum", "chvm", "collision", "gill", "end-to-end", "reproduce"]


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _sample_within(rows_key: str):
    """sample_size 不能超过同一分组里给出的行数"""
    def check(cls, v: int, info: ValidationInfo) -> int:
        rows = info.data.get(rows_key)
        if rows is not None and v > rows:
            raise ValueError(f"sample_size {v} exceeds {rows_key} {rows}")
        return v
    return field_validator("sample_size")(check)


class SpreadsheetParams(_Params):
    n_sheets: int = Field(10_000, ge=1)
    max_rows: int = Field(1000, ge=1)
    n_rows: int = Field(1000, ge=1)
    sample_size: int = Field(100, ge=1)
    n_extractions: int = Field(20, ge=1)
    n_correlation_sets: int = Field(1000, ge=1)
    acceptance: float = Field(3 - 2 * math.sqrt(2), gt=0, le=1)

    _check_sample_size = _sample_within("n_rows")


class QuantumParams(_Params):
    a: Optional[List[float]] = None
    ap: Optional[List[float]] = None
    b: Optional[List[float]] = None
    bp: Optional[List[float]] = None
    epsilons: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    n_random: int = Field(1000, ge=1)
    n_mixtures: int = Field(1000, ge=1)
    mc_draws: int = Field(10_000_000, ge=1000)
    quadrature_order: int = Field(64, ge=4)

    @field_validator("a", "ap", "b", "bp", mode="before")
    @classmethod
    def _parse_axis(cls, v):
        """方向可写成列表，也可写成 "x,y,z" 字符串"""
        if isinstance(v, str):
            parts = [p.strip() for p in v.split(",")]
            if len(parts) != 3 or not all(parts):
                raise ValueError(f"axis must be 'x,y,z', got {v!r}")
            return [float(p) for p in parts]
        if isinstance(v, (list, tuple)) and len(v) != 3:
            raise ValueError(f"axis must have 3 components, got {len(v)}")
        return v


class ChvmParams(_Params):
    model_file: Optional[str] = None
    n_trials: int = Field(1_000_000, ge=0)
    n_random_models: int = Field(1000, ge=1)
    fit_k: int = Field(16, ge=1)
    fit_m: int = Field(1, ge=1)
    fit_budget: int = Field(2000, ge=1)


class CollisionParams(_Params):
    n_trials: int = Field(1_000_000, ge=4)
    schedule: Literal["systematic", "random"] = "random"
    spreadsheet_rows: int = Field(100_000, ge=1)
    sample_size: int = Field(1000, ge=1)
    n_seeds: int = Field(20, ge=1)

    _check_sample_size = _sample_within("spreadsheet_rows")


class GillParams(_Params):
    n_rows: int = Field(1000, ge=1)
    replications: int = Field(10_000, ge=1)
    exhaustive_rows: int = Field(4, ge=4, le=6)
    exhaustive_replications: int = Field(20_000, ge=1)


class EndToEndParams(_Params):
    n_trials: int = Field(400_000, ge=4)
    sample_size: int = Field(2000, ge=1)
    n_seeds: int = Field(20, ge=1)
    acceptance: float = Field(3 - 2 * math.sqrt(2), gt=0, le=1)

    _check_sample_size = _sample_within("n_trials")


class ScenarioConfig(BaseModel):
    """场景配置文件（未知键直接拒绝）"""
    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioName
    seed: int = Field(ge=0, lt=2 ** 64)
    output_dir: Optional[str] = None
    spreadsheet: SpreadsheetParams = Field(default_factory=SpreadsheetParams)
    quantum: QuantumParams = Field(default_factory=QuantumParams)
    chvm: ChvmParams = Field(default_factory=ChvmParams)
    collision: CollisionParams = Field(default_factory=CollisionParams)
    gill: GillParams = Field(default_factory=GillParams)
    end_to_end: EndToEndParams = Field(default_factory=EndToEndParams)


class CheckResult(BaseModel):
    """一条不等式/数值核对结论"""
    name: str
    source: str = Field(..., description="产生该数值的模块操作")
    value: Any
    expected: Any = None
    relation: str = "=="
    tolerance: float = 0.0
    passed: bool
    tags: List[str] = Field(default_factory=list)


class RunReport(BaseModel):
    """一次场景运行的报告"""
    scenario: str
    version: str
    seed: int
    values: Dict[str, Any] = Field(default_factory=dict)
    checks: List[CheckResult] = Field(default_factory=list)
    residuals: Dict[str, float] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)

    @computed_field
    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @computed_field
    @property
    def failures(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]
