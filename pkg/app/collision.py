"""
弹性碰撞实验模块

质量 1 的球以速度 v 撞击静止的质量 4 的球：较重球速度 V1 = 2v/5，
较轻球反弹速度 V2 = 3v/5。Alice 测较重球，Bob 测较轻球。结果由 v
预先决定；四个设置对的期望看似违反三变量不等式，但四个不同的随机变量
(A(V1), B(V1), B(V2), C(V2)) 上的 CHSH 恰好等于 2。
"""

import logging
import math
from fractions import Fraction
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from .config import config
from .exceptions import InvariantViolation, SamplingError
from .ineq import boole_bound, chsh_from_spreadsheet
from .models import (
    CollisionSetting,
    CollisionTrial,
    CorrelationSet,
    ROW_TYPES,
    JointDistribution4,
    Num,
    Observable,
    SettingPair,
    Spreadsheet,
)
from .scheduler import derive_rngs
from .utils import binomial_sigma, is_exact, to_number

logger = logging.getLogger(__name__)

V_MAX = Fraction(10)
HEAVY_MAX = Fraction(4)  # V1 = 2v/5 ∈ (0, 4]

SETTINGS = tuple(CollisionSetting)

# 不可见表格的列 (A(V1), B(V1), B(V2), C(V2)) 对应 (A, A', B, B')
SETTING_TO_PAIR: Dict[CollisionSetting, SettingPair] = {
    CollisionSetting.AB: SettingPair.AB,
    CollisionSetting.AC: SettingPair.ABP,
    CollisionSetting.BB: SettingPair.APB,
    CollisionSetting.BC: SettingPair.APBP,
}


def speeds(v) -> Tuple[Num, Num]:
    """(V1, V2) = (2v/5, 3v/5)"""
    if is_exact((v,)):
        return Fraction(2, 5) * v, Fraction(3, 5) * v
    return 2 * v / 5, 3 * v / 5


def _check_conservation(v, v1, v2):
    if is_exact((v, v1, v2)):
        momentum_ok = v == 4 * v1 - v2
        energy_ok = v * v == 4 * v1 * v1 + v2 * v2
    else:
        scale = max(abs(float(v)), 1.0)
        momentum_ok = abs(v - (4 * v1 - v2)) <= config.FLOAT_TOL * scale
        energy_ok = abs(v * v - (4 * v1 * v1 + v2 * v2)) <= config.FLOAT_TOL * scale * scale
    if not momentum_ok:
        raise InvariantViolation("momentum", f"1*{v} != 4*{v1} - 1*{v2}")
    if not energy_ok:
        raise InvariantViolation("energy", f"1*{v}^2 != 4*{v1}^2 + 1*{v2}^2")


def evaluate_trial(v, setting: CollisionSetting) -> CollisionTrial:
    """
    单次实验：Alice 的可观测量作用于 V1，Bob 的作用于 V2

    Args:
        v: 初速度，(0, 10] 内；整数与有理数按精确值处理
        setting: 设置对

    Returns:
        CollisionTrial
    """
    v = to_number(v)
    if not (0 < v <= V_MAX):
        raise ValueError(f"initial speed {v} outside (0, 10]")
    setting = CollisionSetting(setting)
    v1, v2 = speeds(v)
    _check_conservation(v, v1, v2)
    alice, bob = setting.observables
    return CollisionTrial(v=v, v1=v1, v2=v2, setting=setting, out_a=alice.measure(v1), out_b=bob.measure(v2))


def _intervals():
    """V1 的常值区间：断点为 A、B 的阈值 2、3 以及 V2 = 3 对应的 V1 = 2"""
    cuts = sorted({Fraction(0), HEAVY_MAX, Fraction(2), Fraction(3)})
    return list(zip(cuts[:-1], cuts[1:]))


def _invisible_values(v1) -> Tuple[int, int, int, int]:
    """(A(V1), B(V1), B(V2), C(V2))"""
    v2 = Fraction(3, 2) * v1
    return (Observable.A.measure(v1), Observable.B.measure(v1), Observable.B.measure(v2), Observable.C.measure(v2))


def invisible_joint() -> JointDistribution4:
    """v 诱导的 (A(V1), B(V1), B(V2), C(V2)) 联合分布；V1 在 (0, 4] 上密度 1/4"""
    weights = [Fraction(0)] * 16
    for lo, hi in _intervals():
        weights[ROW_TYPES.index(_invisible_values(hi))] += (hi - lo) / HEAVY_MAX
    return JointDistribution4(weights=tuple(weights))


def analytic_expectations() -> Dict[CollisionSetting, Fraction]:
    """
    分段精确积分

    在每个常值区间上取右端点的结果（阈值为 ≤，区间左开右闭）。
    """
    result = {}
    for setting in SETTINGS:
        alice, bob = setting.observables
        total = Fraction(0)
        for lo, hi in _intervals():
            total += alice.measure(hi) * bob.measure(Fraction(3, 2) * hi) * (hi - lo) / HEAVY_MAX
        result[setting] = total
    return result


def analytic_correlations() -> CorrelationSet:
    """不可见联合分布的边缘：两体期望与单体期望"""
    return invisible_joint().marginals()


def _measure(observable: Observable, y: np.ndarray) -> np.ndarray:
    """Observable.measure 的向量化版本"""
    below = y <= observable.threshold
    if observable is Observable.C:
        return np.where(below, 1, -1).astype(np.int8)
    return np.where(below, -1, 1).astype(np.int8)


def sample_speeds(n: int, rng: np.random.Generator) -> np.ndarray:
    """(0, 10] 上的均匀分布：10·(1 - U)，U ∈ [0, 1)"""
    return float(V_MAX) * (1.0 - rng.random(n))


class CollisionRun(BaseModel):
    """一次碰撞实验的逐次记录与估计"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    v: np.ndarray
    setting: np.ndarray
    out_a: np.ndarray
    out_b: np.ndarray
    estimates: Dict[CollisionSetting, Optional[Num]]
    stderr: Dict[CollisionSetting, float]
    counts: Dict[CollisionSetting, int]

    @property
    def n_trials(self) -> int:
        return int(self.v.shape[0])

    @property
    def undefined(self) -> Tuple[CollisionSetting, ...]:
        """没有分到任何实验的设置对（期望无定义）"""
        return tuple(s for s in SETTINGS if self.counts[s] == 0)

    def table(self, setting: CollisionSetting) -> np.ndarray:
        """该设置对的 M×2 结果表"""
        mask = self.setting == SETTINGS.index(setting)
        return np.column_stack([self.out_a[mask], self.out_b[mask]])

    def trial(self, i: int) -> CollisionTrial:
        v = float(self.v[i])
        v1, v2 = speeds(v)
        return CollisionTrial(
            v=v, v1=v1, v2=v2, setting=SETTINGS[int(self.setting[i])],
            out_a=int(self.out_a[i]), out_b=int(self.out_b[i]),
        )

    def correlations(self) -> CorrelationSet:
        """按 (A(V1), B(V1), B(V2), C(V2)) 的列对应写成 CorrelationSet"""
        if self.undefined:
            missing = ", ".join(s.value for s in self.undefined)
            raise SamplingError(f"no trials for setting {missing}; expectation undefined")
        values = {SETTING_TO_PAIR[s]: self.estimates[s] for s in SETTINGS}
        return CorrelationSet.from_values(
            [values[p] for p in SettingPair],
            counts={SETTING_TO_PAIR[s]: self.counts[s] for s in SETTINGS},
        )


def _schedule(n: int, schedule: str, rng: np.random.Generator) -> np.ndarray:
    if schedule == "systematic":
        return (np.arange(n) % 4).astype(np.int8)
    if schedule == "random":
        return rng.integers(0, 4, size=n).astype(np.int8)
    raise ValueError(f"unknown schedule {schedule!r}")


def run_experiment(n: int, schedule: str = "random", seed: int = 0) -> CollisionRun:
    """
    n 次实验，v 在 (0, 10] 上均匀

    Args:
        n: 实验次数
        schedule: systematic（轮流）或 random（每次独立均匀选择）
        seed: 随机种子

    Returns:
        CollisionRun
    """
    if schedule == "systematic" and n < 4:
        raise ValueError("systematic schedule needs n >= 4")
    if n < 1:
        raise ValueError("n must be >= 1")
    schedule_rng, speed_rng = derive_rngs(seed, 2)
    settings = _schedule(n, schedule, schedule_rng)
    v = sample_speeds(n, speed_rng)
    v1, v2 = 2 * v / 5, 3 * v / 5

    out_a = np.empty(n, dtype=np.int8)
    out_b = np.empty(n, dtype=np.int8)
    estimates, stderr, counts = {}, {}, {}
    for idx, setting in enumerate(SETTINGS):
        mask = settings == idx
        alice, bob = setting.observables
        out_a[mask] = _measure(alice, v1[mask])
        out_b[mask] = _measure(bob, v2[mask])
        count = int(mask.sum())
        counts[setting] = count
        if count == 0:
            logger.warning(f"Setting {setting.value} received no trials; expectation undefined")
            estimates[setting], stderr[setting] = None, math.inf
            continue
        products = out_a[mask].astype(np.int64) * out_b[mask]
        estimates[setting] = Fraction(int(products.sum()), count)
        stderr[setting] = binomial_sigma(estimates[setting], count)

    logger.info(
        "Collision run: "
        + ", ".join(
            f"E({s.value})={float(estimates[s]):+.4f}" if estimates[s] is not None else f"E({s.value})=undefined"
            for s in SETTINGS
        )
    )
    return CollisionRun(
        v=v, setting=settings, out_a=out_a, out_b=out_b,
        estimates=estimates, stderr=stderr, counts=counts,
    )


class NaiveVerdict(BaseModel):
    """|E(AB) - E(AC)| <= 1 ± E(BC) 的两个符号"""
    lhs: Num
    rhs_plus: Num
    rhs_minus: Num
    violated_plus: bool
    violated_minus: bool

    @property
    def violated(self) -> bool:
        return self.violated_plus and self.violated_minus


def naive_inequality(estimates: Dict[CollisionSetting, Optional[Num]]) -> Optional[NaiveVerdict]:
    """把三个设置对的估计代入三变量不等式；任一估计无定义时返回 None"""
    e_ab = estimates[CollisionSetting.AB]
    e_ac = estimates[CollisionSetting.AC]
    e_bc = estimates[CollisionSetting.BC]
    if e_ab is None or e_ac is None or e_bc is None:
        return None
    return NaiveVerdict(
        lhs=abs(e_ab - e_ac),
        rhs_plus=1 + e_bc,
        rhs_minus=1 - e_bc,
        violated_plus=not boole_bound(e_ab, e_ac, e_bc, 1),
        violated_minus=not boole_bound(e_ab, e_ac, e_bc, -1),
    )


def invisible_spreadsheet(n: int, seed: int = 0) -> Spreadsheet:
    """抽取 n 个 v，记录四个预先决定的值 (A(V1), B(V1), B(V2), C(V2))"""
    if n < 1:
        raise ValueError("n must be >= 1")
    (rng,) = derive_rngs(seed, 1)
    v = sample_speeds(n, rng)
    v1, v2 = 2 * v / 5, 3 * v / 5
    cells = np.column_stack([
        _measure(Observable.A, v1),
        _measure(Observable.B, v1),
        _measure(Observable.B, v2),
        _measure(Observable.C, v2),
    ])
    return Spreadsheet(cells=cells)


class Resolution(NamedTuple):
    """四个不同随机变量上的标准 CHSH"""
    lhs: Fraction
    rhs: int
    satisfied: bool
    sheet_s: Optional[Fraction] = None


def resolution_check(n_rows: Optional[int] = None, seed: int = 0) -> Resolution:
    """
    S = E(AB) - E(AC) + E(BB) + E(BC) = 2

    n_rows 给定时同时检查抽样得到的不可见表格。
    """
    s = analytic_correlations().chsh()
    if abs(s) > 2:
        raise InvariantViolation("collision-resolution", f"S = {s} over the invisible joint distribution")
    sheet_s = None
    if n_rows is not None:
        _, sheet_s = chsh_from_spreadsheet(invisible_spreadsheet(n_rows, seed))
    return Resolution(lhs=s, rhs=2, satisfied=abs(s) <= 2, sheet_s=sheet_s)
