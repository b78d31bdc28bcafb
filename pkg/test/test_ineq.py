"""表格不等式、Fine 判定、抽样提取与有限样本实验"""

import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from app import ineq
from app.exceptions import SamplingError, SpreadsheetError
from app.models import CorrelationSet, JointDistribution4, SettingPair, SignVariant, Spreadsheet
from app.scheduler import ReplicationScheduler

pm_one = st.sampled_from([-1, 1])
sheets = st.integers(min_value=1, max_value=200).flatmap(
    lambda n: arrays(np.int8, (n, 4), elements=pm_one)
)


# ========================
# 单行与表格定律
# ========================

def test_check_row_values():
    assert ineq.check_row((1, 1, 1, 1)) == 2
    assert ineq.check_row((1, 1, -1, 1)) == -2
    assert {ineq.check_row(r) for r in itertools.product((1, -1), repeat=4)} == {-2, 2}


def test_check_row_rejects_holes_and_bad_values():
    with pytest.raises(SpreadsheetError, match="counterfactual row incomplete"):
        ineq.check_row((1, None, 1, 1))
    with pytest.raises(SpreadsheetError, match="counterfactual row incomplete"):
        ineq.check_row((1, 0, 1, 1))
    with pytest.raises(SpreadsheetError):
        ineq.check_row((1, 2, 1, 1))
    with pytest.raises(SpreadsheetError):
        ineq.check_row((1, 1, 1))


@given(sheets)
def test_spreadsheet_law_all_variants(cells):
    sheet = Spreadsheet(cells=cells)
    for variant in SignVariant.all_variants():
        _, s = ineq.chsh_from_spreadsheet(sheet, variant)
        assert isinstance(s, Fraction)
        assert abs(s) <= 2


def test_chsh_from_spreadsheet_single_row():
    corr, s = ineq.chsh_from_spreadsheet(Spreadsheet.from_rows([(1, 1, 1, 1)]))
    assert s == 2
    assert corr.pairwise() == (1, 1, 1, 1)
    assert corr.counts == {pair: 1 for pair in SettingPair}


def test_chsh_from_spreadsheet_errors():
    with pytest.raises(SpreadsheetError):
        ineq.chsh_from_spreadsheet(Spreadsheet(cells=np.empty((0, 4), dtype=np.int8)))
    with pytest.raises(SpreadsheetError, match="counterfactual row incomplete"):
        ineq.chsh_from_spreadsheet(Spreadsheet.from_rows([(1, None, 1, 1)]))


def test_eight_variants():
    variants = SignVariant.all_variants()
    assert len(variants) == 8
    assert SignVariant.canonical().name == "+-++"
    assert SignVariant.from_name("+++-") == SignVariant.gill()
    with pytest.raises(ValueError):
        SignVariant(signs=(1, 1, 1, 1))


# ========================
# Boole 不等式
# ========================

@given(st.integers(min_value=1, max_value=100).flatmap(lambda n: arrays(np.int64, (n, 3), elements=pm_one)))
def test_boole_law_both_signs(table):
    assert ineq.boole_lg_check(table, -1).satisfied
    assert ineq.boole_lg_check(table, 1).satisfied


def test_boole_bound_literal_forms():
    # 碰撞实验的期望值同时违反两种字面形式
    assert not ineq.boole_bound(Fraction(1), Fraction(-1), Fraction(-1, 2), 1)
    assert not ineq.boole_bound(Fraction(1), Fraction(-1), Fraction(-1, 2), -1)
    assert ineq.boole_bound(0, 0, 0, -1)
    with pytest.raises(ValueError):
        ineq.boole_bound(0, 0, 0, 0)


def test_boole_rejects_bad_tables():
    with pytest.raises(SpreadsheetError):
        ineq.boole_lg_check(np.ones((3, 4), dtype=int))
    with pytest.raises(SpreadsheetError):
        ineq.boole_lg_check(np.empty((0, 3), dtype=int))


# ========================
# 联合分布与 Fine 判定
# ========================

@given(sheets)
def test_joint_marginals_match_spreadsheet(cells):
    sheet = Spreadsheet(cells=cells)
    corr, _ = ineq.chsh_from_spreadsheet(sheet)
    joint = ineq.joint_from_spreadsheet(sheet)
    assert sum(joint.weights) == 1
    assert joint.marginals().pairwise() == corr.pairwise()
    assert joint.marginals().singles() == corr.singles()


def test_pairwise_tables_uniform():
    tables = ineq.pairwise_tables(JointDistribution4.uniform().marginals())
    for table in tables.values():
        assert set(table.values()) == {Fraction(1, 4)}


def test_fine_feasibility_uniform_and_boundary():
    assert ineq.fine_feasibility(JointDistribution4.uniform().marginals()).feasible
    boundary = CorrelationSet.from_values([1, 1, 1, 1])
    result = ineq.fine_feasibility(boundary)
    assert result.feasible and result.lp_feasible and result.facet_feasible
    assert result.witness is not None


def test_quantum_point_infeasible():
    r = 1 / np.sqrt(2)
    point = CorrelationSet.from_values([r, -r, r, r], [0, 0, 0, 0])
    result = ineq.fine_feasibility(point)
    assert not result.feasible
    assert result.witness is None


@given(st.lists(st.integers(min_value=-10, max_value=10), min_size=4, max_size=4))
def test_fine_agrees_with_chsh(values):
    corr = CorrelationSet.from_values([Fraction(v, 10) for v in values])
    chsh_ok = all(abs(corr.chsh(v)) <= 2 for v in SignVariant.all_variants())
    result = ineq.fine_feasibility(corr)
    assert result.facet_feasible == chsh_ok
    assert result.lp_feasible == chsh_ok


# ========================
# 抽样提取
# ========================

def _uniform_sheet(copies: int) -> Spreadsheet:
    return Spreadsheet(cells=np.array(list(itertools.product((1, -1), repeat=4)) * copies, dtype=np.int8))


def test_simple_random_extraction_shapes_and_determinism():
    sheet = _uniform_sheet(50)
    first = ineq.extract_samples(sheet, 100, seed=7)
    second = ineq.extract_samples(sheet, 100, seed=7)
    for pair in SettingPair:
        assert first[pair].shape == (100, 2)
        np.testing.assert_array_equal(first[pair], second[pair])


def test_extraction_errors():
    sheet = _uniform_sheet(1)
    with pytest.raises(SamplingError):
        ineq.extract_samples(sheet, 17)
    with pytest.raises(ValueError):
        ineq.extract_samples(sheet, 4, mode=ineq.SETTING_DEPENDENT)
    with pytest.raises(ValueError):
        ineq.extract_samples(sheet, 4, mode="biased")


def test_simple_random_respects_bound_within_sampling_error():
    sheet = _uniform_sheet(500)
    for seed in range(10):
        est = ineq.estimate_correlations(ineq.extract_samples(sheet, 1000, seed=seed))
        assert abs(float(est.chsh())) <= 2 + 3 * ineq.chsh_sigma(est)


def test_setting_dependent_extraction_violates():
    sheet = _uniform_sheet(1000)
    predicate = ineq.coincidence_window_predicate()
    tables = ineq.extract_samples(sheet, 2000, ineq.SETTING_DEPENDENT, predicate, seed=3)
    s = ineq.estimate_correlations(tables).chsh()
    assert s > 2
    assert float(s) == pytest.approx(2 * np.sqrt(2), abs=0.3)


def test_complete_spreadsheet_stacks_tables():
    tables = {pair: np.array([[1, -1]] * 5, dtype=np.int8) for pair in SettingPair}
    sheet = ineq.complete_spreadsheet(tables, seed=1)
    assert sheet.n_rows == 20
    assert not sheet.has_holes
    for k, pair in enumerate(SettingPair):
        block = sheet.cells[5 * k:5 * (k + 1)]
        np.testing.assert_array_equal(block[:, list(pair.columns)], tables[pair])
    _, s = ineq.chsh_from_spreadsheet(sheet)
    assert abs(s) <= 2


def test_complete_spreadsheet_nothing_to_complete():
    with pytest.raises(SpreadsheetError, match="nothing to complete"):
        ineq.complete_spreadsheet({})


def test_chsh_sigma_requires_counts():
    with pytest.raises(ValueError):
        ineq.chsh_sigma(CorrelationSet.from_values([0, 0, 0, 0]))
    corr = CorrelationSet.from_values([0, 0, 0, 0], counts={pair: 100 for pair in SettingPair})
    assert ineq.chsh_sigma(corr) == pytest.approx(0.2)


# ========================
# 有限样本实验
# ========================

def test_gill_experiment_bound(rng):
    sheet = Spreadsheet(cells=rng.choice(np.array([-1, 1], dtype=np.int8), size=(1000, 4)))
    result = ineq.gill_experiment(sheet, 2000, seed=5)
    assert result.defined == 2000
    assert result.bound_holds
    assert float(result.pr_gt_2) <= 0.5
    assert sum(count for _, count in result.histogram()) == result.defined


def test_gill_experiment_boundary_sheet(caplog):
    sheet = Spreadsheet(cells=np.ones((40, 4), dtype=np.int8))
    result = ineq.gill_experiment(sheet, 500, seed=2)
    assert result.defined > 0
    assert result.pr_ge_2 == 1
    assert result.pr_gt_2 == 0
    assert result.bound_holds
    assert set(result.s_obs) == {2.0}
    assert "boundary case" in caplog.text


def test_gill_experiment_independent_of_threads(rng):
    sheet = Spreadsheet(cells=rng.choice(np.array([-1, 1], dtype=np.int8), size=(200, 4)))
    one = ineq.gill_experiment(sheet, 3000, seed=9, scheduler=ReplicationScheduler(max_workers=1, chunk_size=500))
    many = ineq.gill_experiment(sheet, 3000, seed=9, scheduler=ReplicationScheduler(max_workers=8, chunk_size=500))
    assert one == many


def test_gill_exhaustive_matches_monte_carlo(rng):
    sheet = Spreadsheet(cells=rng.choice(np.array([-1, 1], dtype=np.int8), size=(4, 4)))
    exact = ineq.gill_exhaustive(sheet)
    assert exact.exhaustive
    assert exact.replications == 4 ** 4
    assert exact.defined == 24
    mc = ineq.gill_experiment(sheet, 20000, seed=11)
    for name in ("pr_ge_2", "pr_gt_2"):
        p = float(getattr(exact, name))
        sigma = np.sqrt(p * (1 - p) / mc.defined)
        assert abs(float(getattr(mc, name)) - p) <= 3 * sigma + 1e-12


def test_gill_exhaustive_too_few_rows():
    with pytest.raises(SpreadsheetError):
        ineq.gill_exhaustive(Spreadsheet.from_rows([(1, 1, 1, 1)] * 3))
