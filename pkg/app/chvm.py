"""
隐变量模型模块

有限隐变量空间上的局域实在模型 (LRHVM)、不相交空间上的情境模型、
对仪器变量求平均、后选择条件期望与表观信号、Larsson-Gill 修正界、
模型拟合与逐事件模拟。有理输入时所有期望都是精确的 Fraction。
"""

import itertools
import logging
import math
from fractions import Fraction
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.optimize import minimize, nnls

from .config import config
from .exceptions import InvariantViolation, PostSelectionError
from .ineq import fine_feasibility, fine_system, pairwise_tables
from .models import (
    INSTRUMENTS,
    ROW_TYPES,
    AveragedModel,
    ContextualModel,
    CorrelationSet,
    JointDistribution4,
    LrhvmModel,
    Num,
    SettingPair,
    SignVariant,
    SubdomainModel,
)
from .scheduler import derive_rngs
from .utils import binomial_sigma, is_exact

logger = logging.getLogger(__name__)

# 设置对 -> (Alice 仪器, Bob 仪器)
PAIR_INSTRUMENTS: Dict[SettingPair, Tuple[str, str]] = {
    SettingPair.AB: ("x", "y"),
    SettingPair.ABP: ("x", "yp"),
    SettingPair.APB: ("xp", "y"),
    SettingPair.APBP: ("xp", "yp"),
}

TABLES = {"x": "a_x", "xp": "a_xp", "y": "b_y", "yp": "b_yp"}
OBSERVABLE_NAMES = {"x": "A_x", "xp": "A_xp", "y": "B_y", "yp": "B_yp"}

FIT_TOL = 1e-12
FIT_PENALTY = 64.0
MASS_FLOOR = 1e-12
SUPPORT_SEARCH_LIMIT = 20_000


def _close(u, v) -> bool:
    if is_exact((u, v)):
        return u == v
    return abs(float(u) - float(v)) <= config.FLOAT_TOL


# ========================
# LRHVM
# ========================

def lrhvm_expectations(model: LrhvmModel) -> CorrelationSet:
    """
    E(A_a B_b) = Σ A(a,λ) B(b,λ) p(λ)，直接求和

    标准 CHSH |S| <= 2 作为定理断言。
    """
    outcomes = [model.outcomes(lam) for lam in range(model.size)]
    pairwise = [
        sum(p * o[i] * o[j] for p, o in zip(model.p, outcomes))
        for i, j in (pair.columns for pair in SettingPair)
    ]
    singles = [sum(p * o[c] for p, o in zip(model.p, outcomes)) for c in range(4)]
    corr = CorrelationSet.from_values(pairwise, singles)
    s = corr.chsh()
    if abs(s) > 2 + (0 if corr.exact else config.FLOAT_TOL):
        raise InvariantViolation("lrhvm-bound", f"|S| = {s} > 2 for a local realistic model")
    return corr


def lrhvm_counterfactual_table(model: LrhvmModel) -> Tuple[JointDistribution4, Num]:
    """
    把 p(λ) 推前到 (A_a, A_a', B_b, B_b') 的联合分布

    Returns:
        (联合分布, 反事实期望 E(A_a A_a' B_b B_b'))
    """
    exact = is_exact(model.p)
    weights = [Fraction(0) if exact else 0.0 for _ in range(16)]
    for lam in range(model.size):
        weights[ROW_TYPES.index(model.outcomes(lam))] += model.p[lam]
    joint = JointDistribution4(weights=tuple(weights))

    direct = lrhvm_expectations(model)
    for pair in SettingPair:
        if not _close(joint.pairwise_expectation(*pair.columns), direct.get(pair)):
            raise InvariantViolation("pushforward-marginal", f"{pair.value}: marginal differs from direct sum")
    return joint, joint.counterfactual_expectation()


# ========================
# 情境模型
# ========================

def _model_arrays(model: ContextualModel):
    """把模型转为 numpy 数组；精确模型使用 object 数组保留 Fraction"""
    dtype = object if model.exact else float
    source = np.array([list(row) for row in model.source], dtype=dtype)
    probs = {name: np.array(list(model.instrument(name)), dtype=dtype) for name in INSTRUMENTS}
    tables = {name: np.array(getattr(model, TABLES[name]), dtype=np.int64) for name in INSTRUMENTS}
    return source, probs, tables


class _PairSums(NamedTuple):
    e_ab: object
    e_a: object
    e_b: object
    mass: object
    kept_a: object
    kept_b: object


def _pair_sums(source, p_a, p_b, t_a, t_b) -> _PairSums:
    """
    在 Λ1×Λ2×Λ_x×Λ_y 上求和

    权重 p(λ1,λ2)·p_x(λx)·p_y(λy)；kept 为 A≠0 且 B≠0 的部分。
    """
    w = source[:, :, None, None] * p_a[None, None, :, None] * p_b[None, None, None, :]
    a = t_a[:, None, :, None]
    b = t_b[None, :, None, :]
    kept = w * ((a != 0) & (b != 0))
    return _PairSums(
        e_ab=(w * a * b).sum(),
        e_a=(w * a).sum(),
        e_b=(w * b).sum(),
        mass=kept.sum(),
        kept_a=(kept * a).sum(),
        kept_b=(kept * b).sum(),
    )


def _all_pair_sums(model: ContextualModel) -> Dict[SettingPair, _PairSums]:
    source, probs, tables = _model_arrays(model)
    return {
        pair: _pair_sums(source, probs[ia], probs[ib], tables[ia], tables[ib])
        for pair, (ia, ib) in PAIR_INSTRUMENTS.items()
    }


def contextual_expectations(model: ContextualModel) -> Tuple[CorrelationSet, Dict[str, Tuple[Num, Num]]]:
    """
    每个设置对在各自的乘积空间上求期望

    Returns:
        (CorrelationSet, {可观测量: (远端第一个设置下的值, 第二个设置下的值)})
    """
    sums = _all_pair_sums(model)
    pairwise = [sums[pair].e_ab for pair in SettingPair]

    contexts = {
        "A_x": (sums[SettingPair.AB].e_a, sums[SettingPair.ABP].e_a),
        "A_xp": (sums[SettingPair.APB].e_a, sums[SettingPair.APBP].e_a),
        "B_y": (sums[SettingPair.AB].e_b, sums[SettingPair.APB].e_b),
        "B_yp": (sums[SettingPair.ABP].e_b, sums[SettingPair.APBP].e_b),
    }
    for name, (first, second) in contexts.items():
        if not _close(first, second):
            raise InvariantViolation(
                "distant-setting-independence", f"{name}: {first} vs {second} under the two distant settings"
            )

    corr = CorrelationSet.from_values(pairwise, [contexts[n][0] for n in ("A_x", "A_xp", "B_y", "B_yp")])
    s = corr.chsh()
    if abs(s) > 2 + (0 if corr.exact else config.FLOAT_TOL):
        raise InvariantViolation("full-ensemble-chsh", f"|S| = {s} > 2 without post-selection")
    return corr, contexts


def bell71_average(model: ContextualModel) -> AveragedModel:
    """Ā_x(λ1) = Σ A_x(λ1, λx) p_x(λx)，B̄ 同理"""
    _, probs, tables = _model_arrays(model)
    averaged = {name: tuple((tables[name] * probs[name][None, :]).sum(axis=1).tolist()) for name in INSTRUMENTS}
    avg = AveragedModel(
        source=model.source,
        a_x=averaged["x"], a_xp=averaged["xp"], b_y=averaged["y"], b_yp=averaged["yp"],
    )
    _check_averaged_bound(avg)
    return avg


def _check_averaged_bound(avg: AveragedModel):
    """|Ā_x||B̄_y - B̄_y'| + |Ā_x'||B̄_y + B̄_y'| <= 2 对每个 (λ1, λ2)"""
    a, ap = np.array(avg.a_x, dtype=object), np.array(avg.a_xp, dtype=object)
    b, bp = np.array(avg.b_y, dtype=object), np.array(avg.b_yp, dtype=object)
    local = (
        np.abs(a)[:, None] * np.abs(b - bp)[None, :]
        + np.abs(ap)[:, None] * np.abs(b + bp)[None, :]
    )
    worst = max(local.flatten().tolist())
    if worst > 2 + config.FLOAT_TOL:
        raise InvariantViolation("averaged-local-bound", f"local CHSH term {worst} > 2")


def averaged_expectations(avg: AveragedModel) -> CorrelationSet:
    """E(A_x B_y) = Σ Ā_x(λ1) B̄_y(λ2) p(λ1, λ2)"""
    dtype = object if is_exact([v for row in avg.source for v in row]) else float
    source = np.array([list(row) for row in avg.source], dtype=dtype)
    obs = {name: np.array(getattr(avg, TABLES[name]), dtype=dtype) for name in INSTRUMENTS}
    pairwise = [
        (source * obs[ia][:, None] * obs[ib][None, :]).sum()
        for ia, ib in (PAIR_INSTRUMENTS[p] for p in SettingPair)
    ]
    singles = [
        (source * obs["x"][:, None]).sum(),
        (source * obs["xp"][:, None]).sum(),
        (source * obs["y"][None, :]).sum(),
        (source * obs["yp"][None, :]).sum(),
    ]
    return CorrelationSet.from_values(pairwise, singles)


class PostSelection(BaseModel):
    """只保留 ±1 结果对后的条件期望"""
    model_config = ConfigDict(frozen=True)

    correlations: CorrelationSet
    retained: Dict[SettingPair, Num]
    conditional_singles: Dict[SettingPair, Tuple[Num, Num]]


def postselect_expectations(model: ContextualModel) -> PostSelection:
    """
    在 Λ'_xy = {A_x ≠ 0 且 B_y ≠ 0} 上的条件期望，按保留质量归一

    条件期望一般不能写成因子化形式，|S| 只受 4 约束。
    """
    sums = _all_pair_sums(model)
    pairwise, retained, singles = [], {}, {}
    for pair in SettingPair:
        s = sums[pair]
        if s.mass == 0:
            raise PostSelectionError(f"setting pair {pair.value}: zero retained mass after post-selection", pair.value)
        pairwise.append(s.e_ab / s.mass)
        retained[pair] = s.mass
        singles[pair] = (s.kept_a / s.mass, s.kept_b / s.mass)

    corr = CorrelationSet.from_values(pairwise)
    if abs(corr.chsh()) > 4 + config.FLOAT_TOL:
        raise InvariantViolation("no-signalling-bound", f"post-selected |S| = {corr.chsh()} > 4")
    return PostSelection(correlations=corr, retained=retained, conditional_singles=singles)


class SignallingRow(BaseModel):
    """一个本地可观测量在某个远端设置下的边缘期望"""
    observable: str
    distant: str
    raw: Num
    detected: Optional[Num] = None
    undetected: Optional[Num] = None


class SignallingReport(BaseModel):
    rows: List[SignallingRow]
    flags: Dict[str, bool]

    @property
    def signalling(self) -> bool:
        return any(self.flags.values())


def _conditional(w, value, condition):
    mass = (w * condition).sum()
    if mass == 0:
        return None
    return (w * condition * value).sum() / mass


def apparent_signalling(model: ContextualModel) -> SignallingReport:
    """
    后选择下的表观信号

    detected 为 E(A | A≠0, B≠0)，undetected 为 E(A | A≠0, B=0)；
    零质量条件记为 None。原始边缘期望必须与远端设置无关。
    """
    source, probs, tables = _model_arrays(model)
    _, contexts = contextual_expectations(model)

    rows, flags = [], {}
    for local, distants, side in (("x", ("y", "yp"), 0), ("xp", ("y", "yp"), 0), ("y", ("x", "xp"), 1), ("yp", ("x", "xp"), 1)):
        name = OBSERVABLE_NAMES[local]
        detected_values = []
        flagged = False
        for i, distant in enumerate(distants):
            ia, ib = (local, distant) if side == 0 else (distant, local)
            w = source[:, :, None, None] * probs[ia][None, None, :, None] * probs[ib][None, None, None, :]
            a = tables[ia][:, None, :, None]
            b = tables[ib][None, :, None, :]
            own, other = (a, b) if side == 0 else (b, a)
            detected = _conditional(w, own, (own != 0) & (other != 0))
            undetected = _conditional(w, own, (own != 0) & (other == 0))
            rows.append(SignallingRow(
                observable=name, distant=OBSERVABLE_NAMES[distant],
                raw=contexts[name][i], detected=detected, undetected=undetected,
            ))
            if detected is not None and undetected is not None and not _close(detected, undetected):
                flagged = True
            detected_values.append(detected)
        if None not in detected_values and not _close(*detected_values):
            flagged = True
        flags[name] = flagged
        if flagged:
            logger.info(f"Apparent signalling (post-selected) on {name}; raw marginal {contexts[name][0]}")
    return SignallingReport(rows=rows, flags=flags)


# ========================
# Larsson-Gill 修正界
# ========================

class LarssonGillResult(BaseModel):
    s_conditional: Num
    delta: Num
    bound: Num
    endpoint: Optional[str] = None

    @property
    def within_bound(self) -> bool:
        return abs(self.s_conditional) <= self.bound


def larsson_gill_bound(model: SubdomainModel) -> LarssonGillResult:
    """
    子集上的条件期望、δ = p(四个子集的交) 与界 4 - 2δ

    只断言两个端点：四个子集都等于 Λ 时界为 2 且 |S| <= 2；
    交集为空时界为 4。
    """
    outcomes = {"x": model.a_x, "xp": model.a_xp, "y": model.b_y, "yp": model.b_yp}
    values = []
    for pair in SettingPair:
        subset = model.subsets[pair]
        mass = sum(model.p[i] for i in subset)
        if mass == 0:
            raise PostSelectionError(f"subset for {pair.value} has zero mass", pair.value)
        ia, ib = PAIR_INSTRUMENTS[pair]
        values.append(sum(model.p[i] * outcomes[ia][i] * outcomes[ib][i] for i in subset) / mass)

    s = SignVariant.canonical().apply(values)
    common = set(range(len(model.p)))
    for subset in model.subsets.values():
        common &= set(subset)
    delta = sum((model.p[i] for i in common), Fraction(0) if is_exact(model.p) else 0.0)
    bound = 4 - 2 * delta
    tol = 0 if is_exact(model.p) else config.FLOAT_TOL

    endpoint = None
    full = set(range(len(model.p)))
    if all(set(subset) == full for subset in model.subsets.values()):
        endpoint = "all-subsets-equal"
        if abs(bound - 2) > tol or abs(s) > 2 + tol:
            raise InvariantViolation("larsson-gill-endpoint", f"bound {bound}, |S| = {abs(s)} with all subsets equal")
    elif not common:
        endpoint = "empty-intersection"
        if bound != 4 or abs(s) > 4 + tol:
            raise InvariantViolation("larsson-gill-endpoint", f"bound {bound}, |S| = {abs(s)} with empty intersection")
    elif abs(s) > bound + tol:
        logger.warning(f"Observed |S| = {abs(s)} above 4 - 2*delta = {bound} (delta = {delta})")
    return LarssonGillResult(s_conditional=s, delta=delta, bound=bound, endpoint=endpoint)


# ========================
# 参数计数与演示模型
# ========================

class ParameterCount(BaseModel):
    """情境模型的自由参数计数"""
    settings_per_side: int
    setting_pairs: int
    outcome_functions: int
    instrument_parameters: int
    source_parameters: int
    source_parameters_symmetric: int
    source_parameters_offdiagonal: int


def parameter_count(k: int, m: int, settings_per_side: int = 2) -> ParameterCount:
    """
    结果函数个数 (2s)·3^{km}、仪器参数 2s(m-1)，以及 p(λ1,λ2) 的三种计数：
    一般 k×k 联合分布 k²-1，对称表 k(k+1)/2-1，以及 k(k-1)/2。
    """
    if k < 1 or m < 1 or settings_per_side < 1:
        raise ValueError("k, m and settings_per_side must be >= 1")
    observables = 2 * settings_per_side
    return ParameterCount(
        settings_per_side=settings_per_side,
        setting_pairs=settings_per_side ** 2,
        outcome_functions=observables * 3 ** (k * m),
        instrument_parameters=observables * (m - 1),
        source_parameters=k * k - 1,
        source_parameters_symmetric=k * (k + 1) // 2 - 1,
        source_parameters_offdiagonal=k * (k - 1) // 2,
    )


def demonstration_model() -> ContextualModel:
    """
    k=4, m=2 的有理演示模型

    源在对角线上均匀；每个仪器以 1/5 的概率处于第二个状态，
    此时探测器总给出 +1。全系综 S = 26/25，后选择 S = 26/9。
    """
    q = (Fraction(4, 5), Fraction(1, 5))
    quarter = Fraction(1, 4)
    source = tuple(tuple(quarter if i == j else Fraction(0) for j in range(4)) for i in range(4))

    def table(first_column):
        return tuple((v, 1) for v in first_column)

    return ContextualModel(
        k=4, m=2, source=source,
        p_x=q, p_xp=q, p_y=q, p_yp=q,
        a_x=table((1, -1, 0, 0)),
        a_xp=table((0, 0, 1, 1)),
        b_y=table((1, 0, 1, 0)),
        b_yp=table((0, 1, 0, 1)),
    )


# ========================
# 随机模型
# ========================

def _random_simplex(rng: np.random.Generator, size: int, exact: bool):
    if exact:
        counts = rng.integers(0, 10, size=size)
        if counts.sum() == 0:
            counts[rng.integers(size)] = 1
        total = int(counts.sum())
        return tuple(Fraction(int(c), total) for c in counts)
    p = rng.dirichlet(np.ones(size))
    return tuple(float(v) for v in p / p.sum())


def random_lrhvm(rng: np.random.Generator, size: int = 4, exact: bool = True) -> LrhvmModel:
    outcomes = rng.choice([-1, 1], size=(4, size)).tolist()
    return LrhvmModel(p=_random_simplex(rng, size, exact), a=outcomes[0], ap=outcomes[1], b=outcomes[2], bp=outcomes[3])


def random_contextual(
    rng: np.random.Generator,
    k: int = 2,
    m: int = 2,
    allow_zero: bool = True,
    exact: bool = True
) -> ContextualModel:
    """随机情境模型；allow_zero=False 时结果只取 ±1"""
    flat = _random_simplex(rng, k * k, exact)
    values = [-1, 0, 1] if allow_zero else [-1, 1]
    tables = {name: tuple(map(tuple, rng.choice(values, size=(k, m)).tolist())) for name in INSTRUMENTS}
    return ContextualModel(
        k=k, m=m,
        source=tuple(tuple(flat[i * k:(i + 1) * k]) for i in range(k)),
        p_x=_random_simplex(rng, m, exact), p_xp=_random_simplex(rng, m, exact),
        p_y=_random_simplex(rng, m, exact), p_yp=_random_simplex(rng, m, exact),
        a_x=tables["x"], a_xp=tables["xp"], b_y=tables["y"], b_yp=tables["yp"],
    )


def random_subdomain(rng: np.random.Generator, size: int = 6) -> SubdomainModel:
    """每个子集至少含一个正概率点"""
    p = _random_simplex(rng, size, exact=True)
    support = [i for i, v in enumerate(p) if v > 0]
    subsets = {}
    for pair in SettingPair:
        chosen = set(np.flatnonzero(rng.random(size) < 0.6).tolist())
        chosen.add(int(rng.choice(support)))
        subsets[pair] = tuple(sorted(chosen))
    outcomes = rng.choice([-1, 1], size=(4, size)).tolist()
    return SubdomainModel(p=p, subsets=subsets, a_x=outcomes[0], a_xp=outcomes[1], b_y=outcomes[2], b_yp=outcomes[3])


# ========================
# 模型拟合
# ========================

class FitResult(BaseModel):
    """拟合结果；trace 为逐次评估的历史最优残差"""
    model_config = ConfigDict(frozen=True)

    model: ContextualModel
    residual: float
    trace: Tuple[float, ...]
    evaluations: int
    method: str


def _targets(targets: CorrelationSet):
    pair_targets = [float(e) for e in targets.pairwise()]
    singles = targets.singles()
    return pair_targets, None if singles is None else [float(v) for v in singles]


def _objective(source, probs, tables, pair_targets, single_targets) -> float:
    """后选择期望与目标的平方误差和（单体项在两个设置对中都计入）"""
    total = 0.0
    for pair, (ia, ib) in PAIR_INSTRUMENTS.items():
        s = _pair_sums(source, probs[ia], probs[ib], tables[ia], tables[ib])
        if s.mass <= MASS_FLOOR:
            return FIT_PENALTY
        total += (s.e_ab / s.mass - pair_targets[pair.index]) ** 2
        if single_targets is not None:
            i, j = pair.columns
            total += (s.kept_a / s.mass - single_targets[i]) ** 2
            total += (s.kept_b / s.mass - single_targets[j]) ** 2
    return float(total)


def fit_residual(model: ContextualModel, targets: CorrelationSet) -> float:
    """模型后选择期望相对目标的残差"""
    source, probs, tables = _model_arrays(model)
    source = source.astype(float)
    probs = {name: p.astype(float) for name, p in probs.items()}
    return _objective(source, probs, tables, *_targets(targets))


def _pair_embedding(targets: CorrelationSet, k: int, m: int) -> Optional[ContextualModel]:
    """
    每个 (设置对, α, β) 占一行的精确嵌入

    该行只有该设置对的两个可观测量非零，源权重为 p_P(α, β)/4。
    需要 k >= 16 且四个两体概率表非负。
    """
    if k < 16:
        return None
    corr = targets
    if targets.singles() is None:
        corr = CorrelationSet.from_values(targets.pairwise(), [0, 0, 0, 0])
    tables = pairwise_tables(corr)
    if any(p < 0 for table in tables.values() for p in table.values()):
        return None

    zero = Fraction(0)
    weights = [zero] * k
    outcome_rows = {name: [[0] * m for _ in range(k)] for name in INSTRUMENTS}
    row = 0
    for pair in SettingPair:
        ia, ib = PAIR_INSTRUMENTS[pair]
        for alpha, beta in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            weights[row] = tables[pair][(alpha, beta)] / 4
            outcome_rows[ia][row] = [alpha] * m
            outcome_rows[ib][row] = [beta] * m
            row += 1

    uniform = tuple(Fraction(1, m) for _ in range(m))
    return ContextualModel(
        k=k, m=m,
        source=tuple(tuple(weights[i] if i == j else zero for j in range(k)) for i in range(k)),
        p_x=uniform, p_xp=uniform, p_y=uniform, p_yp=uniform,
        **{TABLES[name]: tuple(map(tuple, rows)) for name, rows in outcome_rows.items()},
    )


def _small_support(targets: CorrelationSet, k: int) -> Optional[List[Tuple[float, Tuple[int, int, int, int]]]]:
    """
    支撑不超过 k 的联合分布见证

    先用 Fine 判定的 LP 顶点；支撑过大时按大小递增枚举确定性赋值子集，
    以非负最小二乘求权重。
    """
    fine = fine_feasibility(targets)
    if not fine.feasible or fine.witness is None:
        return None
    support = [(float(w), row) for w, row in zip(fine.witness.weights, ROW_TYPES) if w > 0]
    if len(support) <= k:
        return support

    a_eq, b_eq = fine_system(targets)
    tried = 0
    for size in range(1, k + 1):
        tried += math.comb(len(ROW_TYPES), size)
        if tried > SUPPORT_SEARCH_LIMIT:
            break
        for cols in itertools.combinations(range(len(ROW_TYPES)), size):
            x, rnorm = nnls(a_eq[:, list(cols)], b_eq)
            if rnorm <= config.LP_TOL and x.sum() > 0:
                x = x / x.sum()
                return [(float(w), ROW_TYPES[c]) for w, c in zip(x, cols) if w > 0]
    logger.debug(f"No joint-distribution witness with support <= {k}")
    return None


def _witness_embedding(targets: CorrelationSet, k: int, m: int) -> Optional[ContextualModel]:
    """
    局部目标的无后选择嵌入

    联合分布见证中每个非零的确定性赋值占源的一行，四个结果表在该行上
    取该赋值、从不为 0。找不到支撑不超过 k 的见证时返回 None。
    """
    support = _small_support(targets, k)
    if support is None:
        return None

    weights = [w for w, _ in support] + [0.0] * (k - len(support))
    outcome_rows = {name: [[1] * m for _ in range(k)] for name in INSTRUMENTS}
    for lam, (_, row) in enumerate(support):
        for column, name in enumerate(INSTRUMENTS):
            outcome_rows[name][lam] = [row[column]] * m

    uniform = tuple(1.0 / m for _ in range(m))
    return ContextualModel(
        k=k, m=m,
        source=tuple(tuple(weights[i] if i == j else 0.0 for j in range(k)) for i in range(k)),
        p_x=uniform, p_xp=uniform, p_y=uniform, p_yp=uniform,
        **{TABLES[name]: tuple(map(tuple, rows)) for name, rows in outcome_rows.items()},
    )


class _BudgetExhausted(Exception):
    pass


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


class _Search:
    """随机重启局部搜索：L-BFGS-B 调概率表，逐格坐标下降调结果表"""

    def __init__(self, targets: CorrelationSet, k: int, m: int, budget: int):
        self.k, self.m, self.budget = k, m, budget
        self.pair_targets, self.single_targets = _targets(targets)
        self.evaluations = 0
        self.best = math.inf
        self.best_state = None
        self.trace: List[float] = []

    def unpack(self, theta: np.ndarray):
        k, m = self.k, self.m
        source = _softmax(theta[:k * k]).reshape(k, k)
        probs = {
            name: _softmax(theta[k * k + i * m:k * k + (i + 1) * m])
            for i, name in enumerate(INSTRUMENTS)
        }
        return source, probs

    def evaluate(self, theta: np.ndarray, tables: Dict[str, np.ndarray]) -> float:
        if self.evaluations >= self.budget:
            raise _BudgetExhausted()
        self.evaluations += 1
        source, probs = self.unpack(theta)
        r = _objective(source, probs, tables, self.pair_targets, self.single_targets)
        if r < self.best:
            self.best = r
            self.best_state = (theta.copy(), {name: t.copy() for name, t in tables.items()})
        self.trace.append(self.best)
        return r

    def run(self, rng: np.random.Generator, max_sweeps: int = 20):
        k, m = self.k, self.m
        n_cells = 4 * k * m
        while self.best > FIT_TOL:
            theta = rng.standard_normal(k * k + 4 * m) * 0.5
            tables = {name: rng.integers(-1, 2, size=(k, m)) for name in INSTRUMENTS}
            current = self.evaluate(theta, tables)
            for _ in range(max_sweeps):
                res = minimize(
                    lambda th: self.evaluate(th, tables), theta, method="L-BFGS-B",
                    options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 200},
                )
                theta, current = res.x, min(current, float(res.fun))
                improved = False
                for flat in rng.permutation(n_cells):
                    name = INSTRUMENTS[flat // (k * m)]
                    row, col = divmod(int(flat % (k * m)), m)
                    keep = tables[name][row, col]
                    for value in (-1, 0, 1):
                        if value == keep:
                            continue
                        tables[name][row, col] = value
                        r = self.evaluate(theta, tables)
                        if r < current - 1e-15:
                            current, keep, improved = r, value, True
                    tables[name][row, col] = keep
                    if current <= FIT_TOL:
                        break
                if not improved or current <= FIT_TOL:
                    break

    def model(self) -> ContextualModel:
        theta, tables = self.best_state
        source, probs = self.unpack(theta)
        return ContextualModel(
            k=self.k, m=self.m,
            source=tuple(map(tuple, source.tolist())),
            p_x=tuple(probs["x"].tolist()), p_xp=tuple(probs["xp"].tolist()),
            p_y=tuple(probs["y"].tolist()), p_yp=tuple(probs["yp"].tolist()),
            **{TABLES[name]: tuple(map(tuple, t.tolist())) for name, t in tables.items()},
        )


def fit_contextual(
    targets: CorrelationSet,
    k: int,
    m: int,
    seed: int = 0,
    budget: int = 2000
) -> FitResult:
    """
    搜索后选择期望逼近目标的情境模型

    局部目标先尝试以 Fine 见证直接嵌入（支撑不超过 k），k >= 16 时再尝试
    逐设置对的精确嵌入；都不可行时做随机重启搜索。
    预算为目标函数评估次数上限，耗尽时返回历史最优。

    Args:
        targets: 目标两体期望（可带单体期望）
        k: 源空间大小
        m: 仪器空间大小
        seed: 随机种子
        budget: 最大评估次数

    Returns:
        FitResult
    """
    if k < 1 or m < 1:
        raise ValueError("k and m must be >= 1")
    if budget < 1:
        raise ValueError("budget must be >= 1")

    for method, build in (("witness", _witness_embedding), ("embedding", _pair_embedding)):
        embedded = build(targets, k, m)
        if embedded is None:
            continue
        residual = fit_residual(embedded, targets)
        if residual <= FIT_TOL:
            logger.info(f"Exact {method} embedding at k={k}, m={m} (residual {residual:.3e})")
            return FitResult(model=embedded, residual=residual, trace=(residual,), evaluations=1, method=method)

    search = _Search(targets, k, m, budget)
    try:
        search.run(np.random.default_rng(seed))
    except _BudgetExhausted:
        logger.warning(f"Fit budget of {budget} evaluations exhausted; best residual {search.best:.3e}")
    logger.info(f"Search fit at k={k}, m={m}: residual {search.best:.3e} after {search.evaluations} evaluations")
    return FitResult(
        model=search.model(), residual=search.best, trace=tuple(search.trace),
        evaluations=search.evaluations, method="search",
    )


# ========================
# 逐事件模拟
# ========================

SYSTEMATIC = "systematic"
RANDOM = "random"

Schedule = Union[str, Sequence[SettingPair], np.ndarray]


class EventStream(NamedTuple):
    """事件流：设置对下标 (0..3) 与两侧结果 (-1, 0, +1)"""
    setting: np.ndarray
    out_a: np.ndarray
    out_b: np.ndarray

    def __len__(self) -> int:
        return int(self.setting.shape[0])


def _schedule(schedule: Schedule, n_trials: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(schedule, str):
        if schedule == RANDOM:
            return rng.integers(0, 4, size=n_trials).astype(np.int8)
        if schedule == SYSTEMATIC:
            return (np.arange(n_trials) % 4).astype(np.int8)
        raise ValueError(f"unknown schedule {schedule!r}")
    labels = np.array([SettingPair(s).index if not isinstance(s, (int, np.integer)) else int(s) for s in schedule])
    if labels.shape != (n_trials,) or not np.isin(labels, (0, 1, 2, 3)).all():
        raise ValueError("schedule must assign one setting pair to each trial")
    return labels.astype(np.int8)


def _draw(rng: np.random.Generator, cdfs: np.ndarray, which: np.ndarray) -> np.ndarray:
    u = rng.random(which.shape[0])
    idx = (u[:, None] >= cdfs[which]).sum(axis=1)
    return np.minimum(idx, cdfs.shape[1] - 1)


def simulate_contextual(
    model: ContextualModel,
    n_trials: int,
    schedule: Schedule = RANDOM,
    seed: int = 0
) -> EventStream:
    """
    逐事件实现情境模型：每次抽取 (λ1, λ2)，再按所选仪器抽取 λx、λy
    """
    if n_trials < 0:
        raise ValueError("n_trials must be >= 0")
    schedule_rng, source_rng, alice_rng, bob_rng = derive_rngs(seed, 4)
    settings = _schedule(schedule, n_trials, schedule_rng)
    if n_trials == 0:
        empty = np.empty(0, dtype=np.int8)
        return EventStream(settings, empty, empty.copy())

    k, m = model.k, model.m
    source = np.array([[float(v) for v in row] for row in model.source]).flatten()
    flat = source_rng.choice(k * k, size=n_trials, p=source / source.sum())
    lam1, lam2 = np.divmod(flat, k)

    alice = np.array([0, 0, 1, 1])[settings]
    bob = np.array([0, 1, 0, 1])[settings]
    cdf_a = np.cumsum([[float(v) for v in model.p_x], [float(v) for v in model.p_xp]], axis=1)
    cdf_b = np.cumsum([[float(v) for v in model.p_y], [float(v) for v in model.p_yp]], axis=1)
    lam_a = _draw(alice_rng, cdf_a, alice)
    lam_b = _draw(bob_rng, cdf_b, bob)

    table_a = np.array([model.a_x, model.a_xp], dtype=np.int8)
    table_b = np.array([model.b_y, model.b_yp], dtype=np.int8)
    out_a = table_a[alice, lam1, lam_a]
    out_b = table_b[bob, lam2, lam_b]
    logger.debug(f"Simulated {n_trials} trials of a k={k}, m={m} contextual model")
    return EventStream(settings, out_a, out_b)


class EmpiricalExpectations(BaseModel):
    """事件流上的经验期望与标准误差"""
    full: CorrelationSet
    postselected: CorrelationSet
    full_stderr: Dict[SettingPair, float]
    postselected_stderr: Dict[SettingPair, float]
    counts: Dict[SettingPair, int]
    retained: Dict[SettingPair, int]


def empirical_expectations(events: EventStream) -> EmpiricalExpectations:
    """
    全系综期望（0 结果计入）与后选择期望（只计 ±1 对）

    每个设置对至少需要一个事件，后选择还需要至少一个保留事件。
    """
    products = events.out_a.astype(np.int64) * events.out_b
    full, post, full_err, post_err, counts, retained = [], [], {}, {}, {}, {}
    for pair in SettingPair:
        mask = events.setting == pair.index
        n = int(mask.sum())
        if n == 0:
            raise PostSelectionError(f"no events for setting pair {pair.value}", pair.value)
        x = products[mask]
        kept = x[(events.out_a[mask] != 0) & (events.out_b[mask] != 0)]
        if kept.size == 0:
            raise PostSelectionError(f"setting pair {pair.value}: no ±1 outcome pairs retained", pair.value)
        full.append(Fraction(int(x.sum()), n))
        post.append(Fraction(int(kept.sum()), int(kept.size)))
        full_err[pair] = float(np.sqrt(max(np.mean(x ** 2) - np.mean(x) ** 2, 0.0) / n))
        post_err[pair] = binomial_sigma(np.mean(kept), int(kept.size))
        counts[pair], retained[pair] = n, int(kept.size)
    return EmpiricalExpectations(
        full=CorrelationSet.from_values(full, counts=counts),
        postselected=CorrelationSet.from_values(post, counts=retained),
        full_stderr=full_err, postselected_stderr=post_err,
        counts=counts, retained=retained,
    )


def empirical_chsh_sigma(empirical: EmpiricalExpectations, postselected: bool = True) -> float:
    """经验 S 的标准误差（四个设置对独立）"""
    errors = empirical.postselected_stderr if postselected else empirical.full_stderr
    return float(math.sqrt(sum(e ** 2 for e in errors.values())))
