"""
场景运行模块

按场景名调度各引擎，汇总为 RunReport 并写出报告、绘图数据与 metrics。
报告中的每个数值都由某个引擎操作给出，本模块只做比较与记录。
"""

import contextlib
import itertools
import logging
import math
import time
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__, chvm, collision, ineq, quantum
from .config import config
from .exceptions import ConfigurationError, InvariantViolation
from .io import read_contextual_model, write_events, write_report, write_series, write_trial_log
from .metrics_exporter import MetricsExporter
from .models import (
    CheckResult,
    CollisionSetting,
    CorrelationSet,
    QuantumState,
    RunReport,
    ScenarioConfig,
    SignVariant,
    Spreadsheet,
    SubdomainModel,
    SettingPair,
    UnitVector3,
)
from .scheduler import ReplicationScheduler
from .utils import format_duration, format_value, number_to_json

logger = logging.getLogger(__name__)

SINGLET_TAG = "singlet"
TSIRELSON = 2 * math.sqrt(2)
SINGLET_TARGETS = (1 / math.sqrt(2), -1 / math.sqrt(2), 1 / math.sqrt(2), 1 / math.sqrt(2))

REPRODUCE_SECTIONS = ("spreadsheet", "gill", "quantum", "chvm", "collision", "end-to-end")
SECTION_KEYS = {name: i for i, name in enumerate(REPRODUCE_SECTIONS)}


def _json_value(v: Any) -> Any:
    """报告中的数值：Fraction 为 "num/den"，numpy 标量转为内建类型"""
    if v is None or isinstance(v, (bool, str)):
        return v
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, Fraction):
        return number_to_json(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    if isinstance(v, dict):
        return {str(getattr(k, "value", k)): _json_value(x) for k, x in v.items()}
    return str(v)


def _is_exact_number(v: Any) -> bool:
    return isinstance(v, (Fraction, int)) and not isinstance(v, bool)


def _compare(value: Any, expected: Any, relation: str, tolerance: float) -> bool:
    if relation == "true":
        return bool(value)
    if relation == "false":
        return not bool(value)
    numeric = all(isinstance(x, (Fraction, int, float, np.integer, np.floating)) for x in (value, expected))
    exact = tolerance == 0 and _is_exact_number(value) and _is_exact_number(expected)
    if relation == "==":
        if not numeric or exact:
            return value == expected
        return abs(float(value) - float(expected)) <= tolerance
    if relation == "<=":
        return value <= expected if exact else float(value) <= float(expected) + tolerance
    if relation == ">=":
        return value >= expected if exact else float(value) >= float(expected) - tolerance
    if relation == ">":
        return value > expected if exact else float(value) > float(expected) + tolerance
    if relation == "<":
        return value < expected if exact else float(value) < float(expected) - tolerance
    raise ValueError(f"unknown relation {relation!r}")


class ReportBuilder:
    """收集数值、核对结论与输出文件"""

    def __init__(self, scenario: str, seed: int, output_dir: Path, write_logs: bool = True):
        self.scenario = scenario
        self.seed = seed
        self.output_dir = output_dir
        self.write_logs = write_logs
        self.prefix = ""
        self.values: Dict[str, Any] = {}
        self.checks: List[CheckResult] = []
        self.residuals: Dict[str, float] = {}
        self.outputs: List[str] = []

    def _name(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def value(self, name: str, value: Any):
        self.values[self._name(name)] = _json_value(value)

    def residual(self, name: str, value: float):
        self.residuals[self._name(name)] = float(value)

    def output(self, filename: str) -> Path:
        self.outputs.append(filename)
        return self.output_dir / filename

    def check(
        self,
        name: str,
        source: str,
        value: Any,
        expected: Any = None,
        relation: str = "==",
        tolerance: float = 0.0,
        tags: Sequence[str] = ()
    ) -> bool:
        passed = _compare(value, expected, relation, tolerance)
        self.checks.append(CheckResult(
            name=self._name(name), source=source,
            value=_json_value(value), expected=_json_value(expected),
            relation=relation, tolerance=tolerance, passed=passed, tags=list(tags),
        ))
        level = logging.DEBUG if passed else logging.WARNING
        shown = format_value(value) if isinstance(value, (Fraction, int, float)) and not isinstance(value, bool) else value
        logger.log(level, f"{'PASS' if passed else 'FAIL'} {self._name(name)}: {shown} {relation} {expected}")
        return passed

    @contextlib.contextmanager
    def section(self, name: str, prefixed: bool):
        """断言的定理失败时记为一条未通过的核对，继续运行其余部分"""
        self.prefix = name if prefixed else ""
        try:
            yield
        except InvariantViolation as e:
            logger.error(f"[Invariant] {name}: {e}")
            self.check(f"invariant.{e.name}", name, str(e), "holds")
        finally:
            self.prefix = ""

    def build(self) -> RunReport:
        return RunReport(
            scenario=self.scenario, version=__version__, seed=self.seed,
            values=self.values, checks=self.checks, residuals=self.residuals, outputs=self.outputs,
        )


class RunContext:
    """一次运行共享的调度器与可注入的单态工厂"""

    def __init__(
        self,
        scheduler: Optional[ReplicationScheduler] = None,
        singlet_factory: Callable[[], QuantumState] = quantum.singlet_state
    ):
        self.scheduler = scheduler or ReplicationScheduler()
        self.singlet_factory = singlet_factory


def section_seeds(seed: int, section: str, count: int) -> List[int]:
    """各部分独立的子种子；单独运行与在完整复现中运行得到相同结果"""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(SECTION_KEYS[section],))
    return [int(s) for s in sequence.generate_state(count, dtype=np.uint64)]


def _random_sheet(rng: np.random.Generator, n: int) -> Spreadsheet:
    return Spreadsheet(cells=rng.choice(np.array([-1, 1], dtype=np.int8), size=(n, 4)))


# ========================
# 表格不等式
# ========================

def run_spreadsheet(b: ReportBuilder, scenario: ScenarioConfig, ctx: RunContext):
    p = scenario.spreadsheet
    seeds = section_seeds(scenario.seed, "spreadsheet", 8)
    variants = SignVariant.all_variants()

    rows = sorted({ineq.check_row(r) for r in itertools.product((1, -1), repeat=4)})
    b.check("row_law", "ineq.check_row", rows, [-2, 2])

    rng = np.random.default_rng(seeds[0])
    worst = Fraction(0)
    for _ in range(p.n_sheets):
        sheet = _random_sheet(rng, int(rng.integers(1, p.max_rows + 1)))
        for variant in variants:
            _, s = ineq.chsh_from_spreadsheet(sheet, variant)
            worst = max(worst, abs(s))
    b.check("spreadsheet_law_max_abs_s", "ineq.chsh_from_spreadsheet", worst, 2, "<=")

    rng = np.random.default_rng(seeds[1])
    boole_ok = True
    for _ in range(max(p.n_sheets // 10, 1)):
        table = rng.choice(np.array([-1, 1]), size=(int(rng.integers(1, p.max_rows + 1)), 3))
        boole_ok &= ineq.boole_lg_check(table, -1).satisfied and ineq.boole_lg_check(table, 1).satisfied
    b.check("boole_law", "ineq.boole_lg_check", boole_ok, relation="true")

    sheet = _random_sheet(np.random.default_rng(seeds[2]), p.n_rows)
    corr, s = ineq.chsh_from_spreadsheet(sheet)
    joint = ineq.joint_from_spreadsheet(sheet)
    b.value("sheet_s", s)
    b.check("joint_marginals", "ineq.joint_from_spreadsheet", list(joint.marginals().pairwise()), list(corr.pairwise()))
    b.check("sheet_fine_feasible", "ineq.fine_feasibility", ineq.fine_feasibility(corr).feasible, relation="true")

    rng = np.random.default_rng(seeds[3])
    agree = 0
    for _ in range(p.n_correlation_sets):
        corr_r = CorrelationSet.from_values([Fraction(int(rng.integers(-20, 21)), 20) for _ in range(4)])
        chsh_ok = all(abs(corr_r.chsh(v)) <= 2 for v in variants)
        agree += ineq.fine_feasibility(corr_r).lp_feasible == chsh_ok
    b.check("fine_vs_chsh_agreement", "ineq.fine_feasibility", agree, p.n_correlation_sets)

    worst_excess, first_tables = -math.inf, None
    for i in range(p.n_extractions):
        tables = ineq.extract_samples(sheet, p.sample_size, ineq.SIMPLE_RANDOM, seed=seeds[4] + i)
        first_tables = first_tables or tables
        est = ineq.estimate_correlations(tables)
        worst_excess = max(worst_excess, abs(float(est.chsh())) - 2 - 3 * ineq.chsh_sigma(est))
    b.check("simple_random_within_3sigma", "ineq.extract_samples", worst_excess, 0.0, "<=")

    completed = ineq.complete_spreadsheet(first_tables, seed=seeds[5])
    _, s_completed = ineq.chsh_from_spreadsheet(completed)
    b.check("completed_sheet_bound", "ineq.complete_spreadsheet", abs(s_completed), 2, "<=")

    predicate = ineq.coincidence_window_predicate(acceptance=p.acceptance)
    biased = ineq.extract_samples(sheet, p.sample_size, ineq.SETTING_DEPENDENT, predicate, seed=seeds[6])
    s_biased = ineq.estimate_correlations(biased).chsh()
    b.value("setting_dependent_s", float(s_biased))
    b.check("setting_dependent_violation", "ineq.extract_samples", s_biased, 2, ">")


# ========================
# 有限样本实验
# ========================

def run_gill(b: ReportBuilder, scenario: ScenarioConfig, ctx: RunContext):
    p = scenario.gill
    seeds = section_seeds(scenario.seed, "gill", 4)

    sheet = _random_sheet(np.random.default_rng(seeds[0]), p.n_rows)
    result = ineq.gill_experiment(sheet, p.replications, seed=seeds[1], scheduler=ctx.scheduler)
    b.value("defined", result.defined)
    b.value("undefined", result.replications - result.defined)
    b.value("pr_ge_2", result.pr_ge_2)
    b.value("pr_gt_2", result.pr_gt_2)
    b.check("pr_gt_2_bound", "ineq.gill_experiment", result.bound_holds, relation="true")

    path = b.output("gill_histogram.csv")
    write_series(path, ["s_obs", "count"], result.histogram())

    small = _random_sheet(np.random.default_rng(seeds[2]), p.exhaustive_rows)
    exact = ineq.gill_exhaustive(small)
    mc = ineq.gill_experiment(small, p.exhaustive_replications, seed=seeds[3], scheduler=ctx.scheduler)
    for name in ("pr_ge_2", "pr_gt_2"):
        target = getattr(exact, name)
        sigma = math.sqrt(float(target) * (1 - float(target)) / max(mc.defined, 1))
        b.value(f"exhaustive_{name}", target)
        b.check(f"exhaustive_vs_mc_{name}", "ineq.gill_exhaustive", float(getattr(mc, name)), float(target),
                tolerance=3 * sigma)


# ========================
# 量子关联
# ========================

def _settings(scenario: ScenarioConfig):
    p = scenario.quantum
    given = [p.a, p.ap, p.b, p.bp]
    if all(v is None for v in given):
        return quantum.tsirelson_settings(), True
    if any(v is None for v in given):
        raise ConfigurationError("give all four axes or none", path="quantum.a")
    try:
        return tuple(UnitVector3.normalized(v) for v in given), False
    except ValueError as e:
        raise ConfigurationError(str(e), path="quantum") from e


def run_quantum(b: ReportBuilder, scenario: ScenarioConfig, ctx: RunContext):
    p = scenario.quantum
    seeds = section_seeds(scenario.seed, "quantum", 8)
    state = ctx.singlet_factory()

    diag = UnitVector3.normalized(np.ones(3) / math.sqrt(3))
    op = quantum.spin_operator(diag)
    same = quantum.conditional_covariance(state, op, op)
    opposite = quantum.conditional_covariance(state, op, quantum.spin_operator(-diag))
    b.check("singlet_same_axis", "quantum.conditional_covariance", same.e_ab, -1.0,
            tolerance=config.FLOAT_TOL, tags=[SINGLET_TAG])
    b.check("singlet_opposite_axis", "quantum.conditional_covariance", opposite.e_ab, 1.0,
            tolerance=config.FLOAT_TOL, tags=[SINGLET_TAG])

    rng = np.random.default_rng(seeds[0])
    worst = 0.0
    for _ in range(p.n_random):
        a, bv = quantum.random_unit_vector(rng), quantum.random_unit_vector(rng)
        cov = quantum.conditional_covariance(state, quantum.spin_operator(a), quantum.spin_operator(bv))
        worst = max(worst, abs(cov.e_ab + a.dot(bv)))
    b.check("singlet_minus_a_dot_b", "quantum.conditional_covariance", worst, 0.0, "<=",
            tolerance=config.FLOAT_TOL, tags=[SINGLET_TAG])

    settings, default_settings = _settings(scenario)
    qc = quantum.correlation_set_quantum(state, *settings)
    b.value("expectations", list(qc.correlations.pairwise()))
    s = qc.correlations.chsh()
    b.value("S", s)
    if default_settings:
        b.check("tsirelson_saturation", "quantum.correlation_set_quantum", s, TSIRELSON,
                tolerance=1e-10, tags=[SINGLET_TAG])

    ops = [quantum.spin_operator(v) for v in settings]
    b.value("chsh_operator_norm", quantum.chsh_operator(*ops).norm())

    rng = np.random.default_rng(seeds[1])
    max_norm, max_landau, min_gap = 0.0, 0.0, math.inf
    for _ in range(p.n_random):
        check = quantum.tsirelson_inequality_check(*(quantum.random_observable(rng) for _ in range(4)))
        max_norm = max(max_norm, check.norm)
        max_landau = max(max_landau, check.landau_residual)
        min_gap = min(min_gap, check.psd_gap)
    b.check("tsirelson_bound", "quantum.chsh_operator", max_norm, TSIRELSON, "<=", tolerance=1e-9)
    b.check("landau_residual", "quantum.tsirelson_inequality_check", max_landau, 0.0, "<=", tolerance=1e-10)
    b.check("tsirelson_psd_gap", "quantum.tsirelson_inequality_check", min_gap, 0.0, ">=", tolerance=1e-9)
    b.residual("landau", max_landau)

    rng = np.random.default_rng(seeds[2])
    max_sep = 0.0
    for _ in range(p.n_mixtures):
        mixture = quantum.random_separable_mixture(rng, int(rng.integers(1, 5)))
        axes = [quantum.random_unit_vector(rng) for _ in range(4)]
        max_sep = max(max_sep, abs(quantum.separable_chsh(mixture, *axes)))
    b.check("separable_bound", "quantum.separable_chsh", max_sep, 2.0, "<=", tolerance=1e-9)

    point = CorrelationSet.from_values(SINGLET_TARGETS, [0, 0, 0, 0])
    b.check("quantum_point_infeasible", "ineq.fine_feasibility", ineq.fine_feasibility(point).feasible,
            relation="false")

    a, bv = settings[0], settings[2]
    rows = []
    for i, eps in enumerate(p.epsilons):
        cap_a, cap_b = quantum.make_cap(a, eps), quantum.make_cap(bv, eps)
        quad = quantum.smeared_correlation(cap_a, cap_b, p.quadrature_order)
        closed = quantum.smeared_correlation_closed_form(cap_a, cap_b)
        mc, se = quantum.smeared_correlation_monte_carlo(cap_a, cap_b, p.mc_draws, seeds[3] + i)
        smeared_s = quantum.smeared_chsh(settings, eps, p.quadrature_order).chsh()
        b.check(f"smeared_quadrature_eps_{eps}", "quantum.smeared_correlation", quad, closed, tolerance=1e-6)
        b.check(f"smeared_monte_carlo_eps_{eps}", "quantum.smeared_correlation_monte_carlo", mc, closed,
                tolerance=4 * se)
        rows.append((eps, quad, closed, mc, se, smeared_s))
    write_series(b.output("smeared_correlation.csv"),
                 ["epsilon", "quadrature", "closed_form", "monte_carlo", "stderr", "smeared_s"], rows)


# ========================
# 隐变量模型
# ========================

def run_chvm(b: ReportBuilder, scenario: ScenarioConfig, ctx: RunContext):
    p = scenario.chvm
    seeds = section_seeds(scenario.seed, "chvm", 8)

    rng = np.random.default_rng(seeds[0])
    worst, feasible = Fraction(0), 0
    for _ in range(p.n_random_models):
        model = chvm.random_lrhvm(rng, size=int(rng.integers(1, 9)))
        corr = chvm.lrhvm_expectations(model)
        chvm.lrhvm_counterfactual_table(model)
        worst = max(worst, abs(corr.chsh()))
        feasible += ineq.fine_feasibility(corr).feasible
    b.check("lrhvm_bound", "chvm.lrhvm_expectations", worst, 2, "<=")
    b.check("lrhvm_fine_feasible", "ineq.fine_feasibility", feasible, p.n_random_models)

    rng = np.random.default_rng(seeds[1])
    mismatches, worst_full = 0, Fraction(0)
    for _ in range(p.n_random_models):
        model = chvm.random_contextual(rng, k=int(rng.integers(1, 4)), m=int(rng.integers(1, 4)))
        corr, _ = chvm.contextual_expectations(model)
        averaged = chvm.averaged_expectations(chvm.bell71_average(model))
        mismatches += corr.pairwise() != averaged.pairwise() or corr.singles() != averaged.singles()
        worst_full = max(worst_full, abs(corr.chsh()))
    b.check("averaging_identity", "chvm.bell71_average", mismatches, 0)
    b.check("full_ensemble_bound", "chvm.contextual_expectations", worst_full, 2, "<=")

    if p.model_file and not Path(p.model_file).exists():
        raise ConfigurationError(f"model file {p.model_file} not found", path="chvm.model_file")
    model = read_contextual_model(p.model_file) if p.model_file else chvm.demonstration_model()
    full, contexts = chvm.contextual_expectations(model)
    post = chvm.postselect_expectations(model)
    signalling = chvm.apparent_signalling(model)
    s_full, s_post = full.chsh(), post.correlations.chsh()
    b.value("model_full_s", s_full)
    b.value("model_postselected_s", s_post)
    b.value("model_retained", post.retained)
    b.value("model_conditional_singles", post.conditional_singles)
    b.value("model_signalling_flags", signalling.flags)
    b.check("model_full_bound", "chvm.contextual_expectations", abs(s_full), 2, "<=")
    b.check("model_postselected_violation", "chvm.postselect_expectations", s_post, Fraction(11, 5), ">=")
    b.check("model_apparent_signalling", "chvm.apparent_signalling", signalling.signalling, relation="true")
    b.check("model_raw_marginals_independent", "chvm.contextual_expectations",
            all(first == second for first, second in contexts.values()), relation="true")

    if p.n_trials > 0:
        events = chvm.simulate_contextual(model, p.n_trials, chvm.RANDOM, seed=seeds[2])
        empirical = chvm.empirical_expectations(events)
        for label, estimate, analytic, postselected in (
            ("full", empirical.full, full, False),
            ("postselected", empirical.postselected, post.correlations, True),
        ):
            sigma = chvm.empirical_chsh_sigma(empirical, postselected)
            b.value(f"simulated_{label}_s", estimate.chsh())
            b.check(f"simulated_{label}_s_within_4sigma", "chvm.simulate_contextual",
                    float(estimate.chsh()), float(analytic.chsh()), tolerance=4 * sigma)
        if b.write_logs:
            write_events(b.output("events.csv"), events)

    rng = np.random.default_rng(seeds[3])
    base = chvm.random_lrhvm(rng, size=4)
    full_subsets = {pair: tuple(range(4)) for pair in SettingPair}
    equal = chvm.larsson_gill_bound(SubdomainModel(
        p=base.p, subsets=full_subsets, a_x=base.a, a_xp=base.ap, b_y=base.b, b_yp=base.bp,
    ))
    disjoint = chvm.larsson_gill_bound(SubdomainModel(
        p=(Fraction(1, 4),) * 4, subsets={pair: (pair.index,) for pair in SettingPair},
        a_x=(1, 1, 1, 1), a_xp=(1, 1, 1, 1), b_y=(1, 1, 1, 1), b_yp=(1, -1, 1, 1),
    ))
    b.check("larsson_gill_equal_subsets", "chvm.larsson_gill_bound", equal.bound, 2)
    b.check("larsson_gill_empty_intersection", "chvm.larsson_gill_bound", disjoint.bound, 4)
    b.value("larsson_gill_disjoint_s", disjoint.s_conditional)
    counterexamples = sum(
        not chvm.larsson_gill_bound(chvm.random_subdomain(rng)).within_bound
        for _ in range(p.n_random_models)
    )
    b.value("larsson_gill_survey_counterexamples", counterexamples)

    for per_side in (2, 3):
        b.value(f"parameter_count_{per_side}_settings", chvm.parameter_count(p.fit_k, p.fit_m, per_side).model_dump())

    targets = CorrelationSet.from_values(SINGLET_TARGETS, [0, 0, 0, 0])
    fit = chvm.fit_contextual(targets, p.fit_k, p.fit_m, seed=seeds[4], budget=p.fit_budget)
    b.residual("fit_singlet", fit.residual)
    b.value("fit_method", fit.method)
    b.value("fit_postselected_s", chvm.postselect_expectations(fit.model).correlations.chsh())
    b.check("fit_singlet_residual", "chvm.fit_contextual", fit.residual, 1e-3, "<=")


# ========================
# 碰撞实验
# ========================

REFERENCE_COLLISION = {
    CollisionSetting.AB: Fraction(1),
    CollisionSetting.AC: Fraction(-1),
    CollisionSetting.BC: Fraction(-1, 2),
    CollisionSetting.BB: Fraction(1, 2),
}


def run_collision(b: ReportBuilder, scenario: ScenarioConfig, ctx: RunContext):
    p = scenario.collision
    seeds = section_seeds(scenario.seed, "collision", 4)

    analytic = collision.analytic_expectations()
    for setting, expected in REFERENCE_COLLISION.items():
        b.check(f"analytic_E_{setting.value}", "collision.analytic_expectations", analytic[setting], expected)

    for v, setting, outcomes in ((10, CollisionSetting.AB, (1, 1)), (5, CollisionSetting.BC, (-1, 1)),
                                 (5, CollisionSetting.BB, (-1, -1))):
        trial = collision.evaluate_trial(v, setting)
        b.check(f"trial_v{v}_{setting.value}", "collision.evaluate_trial", [trial.out_a, trial.out_b], list(outcomes))

    run = collision.run_experiment(p.n_trials, p.schedule, seed=seeds[0])
    for setting in collision.SETTINGS:
        estimate = run.estimates[setting]
        if estimate is None:
            b.value(f"estimated_E_{setting.value}", None)
            continue
        b.value(f"estimated_E_{setting.value}", float(estimate))
        b.check(f"estimate_E_{setting.value}_within_4sigma", "collision.run_experiment",
                float(estimate), float(analytic[setting]), tolerance=4 * run.stderr[setting])

    naive = collision.naive_inequality(run.estimates)
    if naive is None:
        logger.warning("Naive inequality skipped: undefined estimate among AB, AC, BC")
        b.value("naive_lhs", None)
    else:
        sigma_lhs = math.hypot(run.stderr[CollisionSetting.AB], run.stderr[CollisionSetting.AC])
        b.value("naive_lhs", naive.lhs)
        b.value("naive_rhs_plus", naive.rhs_plus)
        b.value("naive_rhs_minus", naive.rhs_minus)
        b.check("naive_inequality_violated", "collision.naive_inequality", naive.violated, relation="true")
        b.check("naive_lhs_near_2", "collision.naive_inequality", float(naive.lhs), 2.0, tolerance=4 * sigma_lhs)

    resolution = collision.resolution_check(p.spreadsheet_rows, seed=seeds[1])
    b.value("resolution_s", resolution.lhs)
    b.check("resolution_s_equals_2", "collision.resolution_check", resolution.lhs, 2)
    b.check("invisible_sheet_bound", "collision.resolution_check", abs(resolution.sheet_s), 2, "<=")
    b.check("invisible_point_feasible", "ineq.fine_feasibility",
            ineq.fine_feasibility(collision.analytic_correlations()).feasible, relation="true")

    sheet = collision.invisible_spreadsheet(p.spreadsheet_rows, seed=seeds[2])
    worst_excess = -math.inf
    for i in range(p.n_seeds):
        tables = ineq.extract_samples(sheet, p.sample_size, ineq.SIMPLE_RANDOM, seed=seeds[3] + i)
        est = ineq.estimate_correlations(tables)
        worst_excess = max(worst_excess, abs(float(est.chsh())) - 2 - 3 * ineq.chsh_sigma(est))
    b.check("invisible_samples_within_3sigma", "ineq.extract_samples", worst_excess, 0.0, "<=")

    if b.write_logs:
        write_trial_log(b.output("collision_trials.csv"), run)


# ========================
# 端到端
# ========================

def run_end_to_end(b: ReportBuilder, scenario: ScenarioConfig, ctx: RunContext):
    p = scenario.end_to_end
    seeds = section_seeds(scenario.seed, "end-to-end", 4)

    sheet = collision.invisible_spreadsheet(p.n_trials, seed=seeds[0])
    worst_excess, first_tables = -math.inf, None
    for i in range(p.n_seeds):
        tables = ineq.extract_samples(sheet, p.sample_size, ineq.SIMPLE_RANDOM, seed=seeds[1] + i)
        first_tables = first_tables or tables
        est = ineq.estimate_correlations(tables)
        worst_excess = max(worst_excess, abs(float(est.chsh())) - 2 - 3 * ineq.chsh_sigma(est))
    b.value("simple_random_worst_excess", worst_excess)
    b.check("simple_random_within_3sigma", "ineq.extract_samples", worst_excess, 0.0, "<=")

    completed = ineq.complete_spreadsheet(first_tables, seed=seeds[2])
    _, s_completed = ineq.chsh_from_spreadsheet(completed)
    b.check("completed_sheet_bound", "ineq.chsh_from_spreadsheet", abs(s_completed), 2, "<=")

    predicate = ineq.coincidence_window_predicate(acceptance=p.acceptance)
    biased = ineq.extract_samples(completed, p.sample_size, ineq.SETTING_DEPENDENT, predicate, seed=seeds[3])
    s_biased = ineq.estimate_correlations(biased).chsh()
    b.value("setting_dependent_s", float(s_biased))
    b.check("setting_dependent_violation", "ineq.extract_samples", s_biased, 2, ">")


SECTIONS: Dict[str, Callable[[ReportBuilder, ScenarioConfig, RunContext], None]] = {
    "spreadsheet": run_spreadsheet,
    "gill": run_gill,
    "quantum": run_quantum,
    "chvm": run_chvm,
    "collision": run_collision,
    "end-to-end": run_end_to_end,
}


def run(
    scenario: ScenarioConfig,
    output_dir: Optional[str] = None,
    threads: Optional[int] = None,
    singlet_factory: Callable[[], QuantumState] = quantum.singlet_state,
    write_logs: bool = True
) -> RunReport:
    """
    执行一个场景并写出 report.json、数据文件与 metrics

    Args:
        scenario: 已校验的场景配置
        output_dir: 输出目录（默认取场景或全局配置）
        threads: 线程数，不影响结果
        singlet_factory: 单态工厂，测试中用于注入错误的态
        write_logs: 是否写出逐事件日志

    Returns:
        RunReport
    """
    out = Path(output_dir or scenario.output_dir or config.OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(ReplicationScheduler(max_workers=threads), singlet_factory)
    builder = ReportBuilder(scenario.scenario, scenario.seed, out, write_logs)

    reproduce = scenario.scenario == "reproduce"
    names = REPRODUCE_SECTIONS if reproduce else (scenario.scenario,)
    logger.info(f"Running scenario {scenario.scenario} (seed {scenario.seed}, {ctx.scheduler.max_workers} threads)")

    start = time.perf_counter()
    for name in names:
        section_start = time.perf_counter()
        with builder.section(name, prefixed=reproduce):
            SECTIONS[name](builder, scenario, ctx)
        logger.info(f"Section {name} finished in {format_duration(time.perf_counter() - section_start)}")
    duration = time.perf_counter() - start

    report = builder.build()
    write_report(out / "report.json", report)
    if config.METRICS_ENABLED:
        exporter = MetricsExporter()
        exporter.record(report, duration)
        exporter.write(str(out))

    if report.passed:
        logger.info(f"All {len(report.checks)} checks passed in {format_duration(duration)}")
    else:
        logger.error(f"{len(report.failures)} of {len(report.checks)} checks failed: {', '.join(report.failures)}")
    return report


def reproduce_all(
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
    singlet_factory: Callable[[], QuantumState] = quantum.singlet_state,
    threads: Optional[int] = None,
    **params: Any
) -> RunReport:
    """
    依次运行全部部分，汇总为一份报告

    params 为各部分的参数覆盖（例如 quantum={"mc_draws": 10_000}）。
    """
    scenario = ScenarioConfig(scenario="reproduce", seed=config.SEED if seed is None else seed, **params)
    return run(scenario, output_dir, threads=threads, singlet_factory=singlet_factory, write_logs=False)
