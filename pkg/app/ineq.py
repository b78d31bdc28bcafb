"""
表格不等式模块

N×4 反事实表格上的精确整数/有理数运算：逐行 CHSH、全表 CHSH、
Boole/Leggett-Garg、联合分布、Fine 可行性、抽样提取、有限样本实验
与 4M×4 补全。
"""

import itertools
import logging
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.optimize import linprog

from .config import config
from .exceptions import InvariantViolation, SamplingError, SpreadsheetError
from .models import (
    HOLE,
    ROW_TYPES,
    CorrelationSet,
    JointDistribution4,
    Num,
    SettingPair,
    SignVariant,
    Spreadsheet,
)
from .scheduler import ReplicationScheduler, derive_rngs
from .utils import binomial_sigma

logger = logging.getLogger(__name__)

SIMPLE_RANDOM = "simple-random"
SETTING_DEPENDENT = "setting-dependent"

# predicate(rows (n,4), setting, tags (n,)) -> 布尔掩码
Predicate = Callable[[np.ndarray, SettingPair, np.ndarray], np.ndarray]


def check_row(row: Sequence) -> int:
    """
    单行 s = ab - ab' + a'b + a'b'

    Args:
        row: (a, a', b, b')，每个取值 ±1

    Returns:
        整数 s，必为 ±2
    """
    if len(row) != 4:
        raise SpreadsheetError(f"row must have 4 cells, got {len(row)}")
    for cell in row:
        if cell is None or (not isinstance(cell, bool) and cell == HOLE):
            raise SpreadsheetError("counterfactual row incomplete")
        if isinstance(cell, (bool, float)) or cell not in (1, -1):
            raise SpreadsheetError(f"invalid cell value {cell!r}")
    a, ap, b, bp = (int(c) for c in row)
    s = a * b - a * bp + ap * b + ap * bp
    if abs(s) > 2:
        raise InvariantViolation("row-law", f"|s| = {abs(s)} for row {tuple(row)}")
    return s


def _complete_cells(sheet: Spreadsheet) -> np.ndarray:
    if sheet.n_rows == 0:
        raise SpreadsheetError("empty spreadsheet")
    if sheet.has_holes:
        raise SpreadsheetError("counterfactual row incomplete")
    return sheet.cells.astype(np.int64)


def chsh_from_spreadsheet(
    sheet: Spreadsheet,
    variant: Optional[SignVariant] = None
) -> Tuple[CorrelationSet, Fraction]:
    """
    用全部 N 行计算四个两体期望与 S

    Args:
        sheet: 无空洞的 N×4 表格
        variant: 符号组合，默认标准组合

    Returns:
        (CorrelationSet, 精确的 S)
    """
    variant = variant or SignVariant.canonical()
    cells = _complete_cells(sheet)
    n = sheet.n_rows

    pairwise = [
        Fraction(int((cells[:, i] * cells[:, j]).sum()), n)
        for i, j in (p.columns for p in SettingPair)
    ]
    singles = [Fraction(int(cells[:, c].sum()), n) for c in range(4)]
    corr = CorrelationSet.from_values(pairwise, singles, counts={p: n for p in SettingPair})

    s = corr.chsh(variant)
    if abs(s) > 2:
        raise InvariantViolation("spreadsheet-chsh", f"|S| = {s} > 2 for variant {variant.name}")
    return corr, s


class BooleResult(NamedTuple):
    """Boole/Leggett-Garg 检验结果"""
    e_ab: Fraction
    e_ac: Fraction
    e_bc: Fraction
    satisfied: bool
    lhs: Fraction
    rhs: Fraction


def boole_bound(e_ab, e_ac, e_bc, sign: int) -> bool:
    """
    |E(AB) - E(AC)| <= 1 + sign·E(BC) 的字面检验

    sign=-1 是 Boole 形式；sign=+1 是按原样书写的 Bell 形式，
    只有在 P = -E 的约定下才对三变量联合分布成立。
    """
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    return abs(e_ab - e_ac) <= 1 + sign * e_bc


def boole_lg_check(table, sign: int = -1) -> BooleResult:
    """
    N×3 表格 (A, B, C) 上的 Boole/Leggett-Garg 不等式

    sign=-1: |E(AB) - E(AC)| <= 1 - E(BC)
    sign=+1: |E(AB) + E(AC)| <= 1 + E(BC)（C -> -C 的同一不等式）

    完整表格上两种形式总成立。
    """
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    arr = np.asarray(table)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise SpreadsheetError(f"Boole table must have 3 columns, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise SpreadsheetError("empty spreadsheet")
    if not np.issubdtype(arr.dtype, np.integer) or not np.isin(arr, (-1, 1)).all():
        raise SpreadsheetError("Boole table cells must be -1 or +1")
    arr = arr.astype(np.int64)
    n = arr.shape[0]
    e_ab = Fraction(int((arr[:, 0] * arr[:, 1]).sum()), n)
    e_ac = Fraction(int((arr[:, 0] * arr[:, 2]).sum()), n)
    e_bc = Fraction(int((arr[:, 1] * arr[:, 2]).sum()), n)

    if sign == -1:
        lhs, rhs = abs(e_ab - e_ac), 1 - e_bc
    else:
        lhs, rhs = abs(e_ab + e_ac), 1 + e_bc
    return BooleResult(e_ab, e_ac, e_bc, lhs <= rhs, lhs, rhs)


def joint_from_spreadsheet(sheet: Spreadsheet) -> JointDistribution4:
    """16 种行类型的经验频率"""
    cells = _complete_cells(sheet)
    bits = (1 - cells) // 2
    idx = bits @ np.array([8, 4, 2, 1])
    counts = np.bincount(idx, minlength=16)
    n = sheet.n_rows
    return JointDistribution4(weights=tuple(Fraction(int(c), n) for c in counts))


def pairwise_tables(corr: CorrelationSet) -> Dict[SettingPair, Dict[Tuple[int, int], object]]:
    """
    由单体与两体期望得到每个设置对的 ±1 联合分布

    p(α, β) = (1 + α·E_s + β·E_t + αβ·E_st) / 4
    """
    singles = corr.singles()
    if singles is None:
        raise ValueError("pairwise tables need all four single expectations")
    tables = {}
    for pair in SettingPair:
        i, j = pair.columns
        e = corr.get(pair)
        tables[pair] = {
            (alpha, beta): (1 + alpha * singles[i] + beta * singles[j] + alpha * beta * e) / 4
            for alpha in (1, -1) for beta in (1, -1)
        }
    return tables


def facet_verdict(corr: CorrelationSet, tol: float = 0.0) -> bool:
    """
    局域多面体的面不等式：8 个 CHSH 组合与 16 个两体正性约束

    两体概率中单体项在 CH 形式里相互抵消，因此 CHSH 部分只依赖两体期望。
    """
    for variant in SignVariant.all_variants():
        if abs(corr.chsh(variant)) > 2 + tol:
            return False
    if corr.singles() is not None:
        for table in pairwise_tables(corr).values():
            if any(p < -tol for p in table.values()):
                return False
    return True


class FineResult(BaseModel):
    """联合分布存在性判定"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    feasible: bool
    witness: Optional[JointDistribution4] = None
    lp_feasible: bool
    facet_feasible: bool
    residual: float


def fine_system(corr: CorrelationSet) -> Tuple[np.ndarray, np.ndarray]:
    """16 个确定性赋值权重的线性约束 A·w = b：归一、单体（若给出）、四个两体期望"""
    rows, rhs = [np.ones(16)], [1.0]
    singles = corr.singles()
    if singles is not None:
        for c in range(4):
            rows.append(np.array([r[c] for r in ROW_TYPES], dtype=float))
            rhs.append(float(singles[c]))
    for pair in SettingPair:
        i, j = pair.columns
        rows.append(np.array([r[i] * r[j] for r in ROW_TYPES], dtype=float))
        rhs.append(float(corr.get(pair)))
    return np.vstack(rows), np.array(rhs)


def fine_feasibility(corr: CorrelationSet, tol: Optional[float] = None) -> FineResult:
    """
    是否存在 16 个确定性赋值上的联合分布重现给定期望

    线性可行性由 HiGHS 判定；有理输入时以精确面不等式为准，
    两种判定不一致时记录告警。
    """
    tol = config.LP_TOL if tol is None else tol
    a_eq, b_eq = fine_system(corr)

    res = linprog(
        c=np.zeros(16), A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * 16,
        method="highs", options={"primal_feasibility_tolerance": 1e-10}
    )
    witness, residual = None, float("inf")
    if res.status == 0 and res.x is not None:
        x = np.clip(res.x, 0.0, None)
        x = x / x.sum()
        residual = float(np.max(np.abs(a_eq @ x - b_eq)))
        if residual <= tol:
            witness = JointDistribution4(weights=tuple(float(w) for w in x))
    lp_feasible = witness is not None

    exact = corr.exact
    facet_feasible = facet_verdict(corr, tol=0.0 if exact else tol)
    feasible = facet_feasible if exact else lp_feasible
    if lp_feasible != facet_feasible:
        logger.warning(
            f"LP and facet verdicts disagree (lp={lp_feasible}, facet={facet_feasible}, residual={residual:.2e})"
        )
    return FineResult(
        feasible=feasible,
        witness=witness if feasible else None,
        lp_feasible=lp_feasible,
        facet_feasible=facet_feasible,
        residual=residual,
    )


# ========================
# 抽样提取
# ========================

def coincidence_window_predicate(
    variant: Optional[SignVariant] = None,
    acceptance: float = 3 - 2 * np.sqrt(2)
) -> Predicate:
    """
    依赖设置的符合窗口筛选

    与该设置对符号一致的行总被保留，不一致的行只在其标签落入
    接受窗口 (tag < acceptance) 时保留。均匀表格上估计的每个期望为
    ±(1 - q)/(1 + q)，默认 q = 3 - 2√2 时 |S| = 2√2。
    """
    variant = variant or SignVariant.canonical()

    def predicate(rows: np.ndarray, pair: SettingPair, tags: np.ndarray) -> np.ndarray:
        i, j = pair.columns
        sign = variant.signs[pair.index]
        agree = sign * rows[:, i].astype(np.int64) * rows[:, j] == 1
        return agree | (tags < acceptance)

    return predicate


def extract_samples(
    sheet: Spreadsheet,
    sample_size: int,
    mode: str = SIMPLE_RANDOM,
    predicate: Optional[Predicate] = None,
    seed: int = 0
) -> Dict[SettingPair, np.ndarray]:
    """
    从 N×4 表格为每个设置对抽取 M×2 子表

    Args:
        sheet: 无空洞表格
        sample_size: 每个设置对的行数 M
        mode: simple-random（各设置对独立无放回抽样）或 setting-dependent
        predicate: setting-dependent 模式下的筛选函数
        seed: 随机种子

    Returns:
        {设置对: M×2 数组}
    """
    cells = _complete_cells(sheet)
    n = sheet.n_rows
    if mode not in (SIMPLE_RANDOM, SETTING_DEPENDENT):
        raise ValueError(f"unknown extraction mode {mode!r}")
    if mode == SETTING_DEPENDENT and predicate is None:
        raise ValueError("setting-dependent extraction needs a predicate")

    tag_rng, *pair_rngs = derive_rngs(seed, 5)
    tags = tag_rng.random(n)

    tables = {}
    for pair, rng in zip(SettingPair, pair_rngs):
        if mode == SIMPLE_RANDOM:
            available = np.arange(n)
        else:
            available = np.flatnonzero(predicate(cells, pair, tags))
        if sample_size > available.size:
            raise SamplingError(
                f"setting {pair.value}: requested {sample_size} rows but only "
                f"{available.size} of {n} available after filtering"
            )
        chosen = rng.choice(available, size=sample_size, replace=False)
        tables[pair] = cells[np.ix_(chosen, pair.columns)].astype(np.int8)
        logger.debug(f"Extracted {sample_size} of {available.size} rows for {pair.value}")
    return tables


def estimate_correlations(tables: Mapping[SettingPair, np.ndarray]) -> CorrelationSet:
    """由四个 M×2 子表估计两体期望（精确有理数）"""
    pairwise, counts = [], {}
    for pair in SettingPair:
        table = np.asarray(tables[pair], dtype=np.int64)
        if table.shape[0] == 0:
            raise SpreadsheetError(f"setting {pair.value}: empty sample")
        pairwise.append(Fraction(int((table[:, 0] * table[:, 1]).sum()), table.shape[0]))
        counts[pair] = int(table.shape[0])
    return CorrelationSet.from_values(pairwise, counts=counts)


def complete_spreadsheet(tables: Mapping[SettingPair, np.ndarray], seed: int = 0) -> Spreadsheet:
    """
    把四个 M×2 子表堆叠为 4M×4 表格并用独立的公平 ±1 填补空位

    各子表按 SettingPair 顺序排列，两列放在其标记位置。
    """
    blocks = [(pair, np.asarray(tables.get(pair, np.empty((0, 2))))) for pair in SettingPair]
    total = sum(block.shape[0] for _, block in blocks)
    if total == 0:
        raise SpreadsheetError("nothing to complete")

    rng = np.random.default_rng(seed)
    cells = rng.choice(np.array([-1, 1], dtype=np.int8), size=(total, 4))
    start = 0
    for pair, block in blocks:
        if block.shape[0] == 0:
            continue
        if block.ndim != 2 or block.shape[1] != 2 or not np.isin(block, (-1, 1)).all():
            raise SpreadsheetError(f"setting {pair.value}: table must be M×2 with ±1 entries")
        cells[start:start + block.shape[0], list(pair.columns)] = block
        start += block.shape[0]
    logger.debug(f"Completed {total}x4 spreadsheet ({2 * total} random fills)")
    return Spreadsheet(cells=cells)


# ========================
# 有限样本实验
# ========================

class GillResult(BaseModel):
    """随机分配设置标签后 S_obs 的分布"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n_rows: int
    replications: int
    defined: int
    pr_ge_2: Num
    pr_gt_2: Num
    sigma: float
    s_obs: Tuple[float, ...]
    exhaustive: bool = False

    @property
    def bound_holds(self) -> bool:
        """Pr(S_obs > 2) <= 1/2（Monte Carlo 时允许 3σ）"""
        return float(self.pr_gt_2) <= 0.5 + 3 * self.sigma

    def histogram(self, bins: int = 40) -> List[Tuple[float, int]]:
        """S_obs 直方图 (区间中心, 计数)"""
        counts, edges = np.histogram(np.asarray(self.s_obs), bins=bins, range=(-4.0, 4.0))
        centers = (edges[:-1] + edges[1:]) / 2
        return [(float(c), int(k)) for c, k in zip(centers, counts)]


def _gill_products(cells: np.ndarray, variant: SignVariant) -> np.ndarray:
    """(4, N)：每个设置对的带符号乘积"""
    return np.stack([
        variant.signs[p.index] * cells[:, p.columns[0]] * cells[:, p.columns[1]]
        for p in SettingPair
    ]).astype(np.int64)


def _gill_chunk(products: np.ndarray, n_reps: int, rng: np.random.Generator):
    """一块重复：返回 (S_obs 浮点值, S>=2, S>2, 是否有定义)"""
    n = products.shape[1]
    labels = rng.integers(0, 4, size=(n_reps, n), dtype=np.int8)
    dtype = np.int64 if n <= 20_000 else object
    counts = np.empty((4, n_reps), dtype=dtype)
    totals = np.empty((4, n_reps), dtype=dtype)
    for k in range(4):
        mask = (labels == k).astype(np.int64)
        counts[k] = mask.sum(axis=1)
        totals[k] = mask @ products[k]
    defined = (counts > 0).all(axis=0)
    safe = np.where(counts > 0, counts, 1)

    # S >= 2 的精确判定：Σ t_k Π_{j≠k} n_j 与 2 Π n_j 比较
    prod_all = safe[0] * safe[1] * safe[2] * safe[3]
    numer = sum(totals[k] * (prod_all // safe[k]) for k in range(4))
    ge = defined & (numer >= 2 * prod_all)
    gt = defined & (numer > 2 * prod_all)
    s_obs = (totals.astype(float) / safe.astype(float)).sum(axis=0)
    return s_obs[defined], int(ge.sum()), int(gt.sum()), int(defined.sum())


def gill_experiment(
    sheet: Spreadsheet,
    replications: int,
    seed: int = 0,
    scheduler: Optional[ReplicationScheduler] = None
) -> GillResult:
    """
    每次重复为每行均匀随机分配一个设置标签，取出标记的两列估计四个期望，
    按 (+,+,+,-) 组合成 S_obs。

    某个设置没有分到任何行的重复视为无定义，不计入概率。
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    cells = _complete_cells(sheet)
    products = _gill_products(cells, SignVariant.gill())
    scheduler = scheduler or ReplicationScheduler()

    chunks = scheduler.run(lambda size, rng: _gill_chunk(products, size, rng), replications, seed)
    s_obs = np.concatenate([c[0] for c in chunks])
    n_ge = sum(c[1] for c in chunks)
    n_gt = sum(c[2] for c in chunks)
    defined = sum(c[3] for c in chunks)

    pr_ge = n_ge / defined if defined else 0.0
    pr_gt = n_gt / defined if defined else 0.0
    # 以 p = 1/2 处的二项标准差衡量与界的距离
    sigma = float(np.sqrt(0.25 / max(defined, 1)))
    if pr_ge > 0.5:
        logger.warning(
            f"Pr(S_obs >= 2) = {pr_ge:.4f} exceeds 1/2; boundary case, Pr(S_obs > 2) = {pr_gt:.4f}"
        )
    if defined < replications:
        logger.info(f"{replications - defined} of {replications} replications left a setting empty")
    return GillResult(
        n_rows=sheet.n_rows, replications=replications, defined=defined,
        pr_ge_2=pr_ge, pr_gt_2=pr_gt, sigma=sigma,
        s_obs=tuple(float(s) for s in s_obs),
    )


def gill_exhaustive(sheet: Spreadsheet) -> GillResult:
    """小 N 时枚举全部 4^N 种标签分配，得到精确概率"""
    cells = _complete_cells(sheet)
    n = sheet.n_rows
    if n > 8:
        raise ValueError(f"exhaustive enumeration limited to 8 rows, got {n}")
    products = _gill_products(cells, SignVariant.gill())

    s_values, n_ge, n_gt = [], 0, 0
    for labels in itertools.product(range(4), repeat=n):
        counts, totals = [0] * 4, [0] * 4
        for row, k in enumerate(labels):
            counts[k] += 1
            totals[k] += int(products[k, row])
        if min(counts) == 0:
            continue
        s = sum(Fraction(t, c) for t, c in zip(totals, counts))
        s_values.append(s)
        n_ge += s >= 2
        n_gt += s > 2

    defined = len(s_values)
    if defined == 0:
        raise SpreadsheetError(f"no label assignment of {n} rows fills all four settings")
    return GillResult(
        n_rows=n, replications=4 ** n, defined=defined,
        pr_ge_2=Fraction(n_ge, defined), pr_gt_2=Fraction(n_gt, defined), sigma=0.0,
        s_obs=tuple(float(s) for s in s_values), exhaustive=True,
    )


def chsh_sigma(corr: CorrelationSet) -> float:
    """
    估计的 S 的标准误差 sqrt(Σ (1 - E²)/n)

    四个设置对的样本相互独立；符号组合不影响方差。
    """
    if corr.counts is None:
        raise ValueError("standard error needs per-setting counts")
    return float(np.sqrt(sum(binomial_sigma(corr.get(pair), corr.counts[pair]) ** 2 for pair in SettingPair)))
