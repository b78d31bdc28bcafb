"""隐变量模型：LRHVM、情境模型、后选择、修正界、拟合与模拟"""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app import chvm, ineq
from app.exceptions import PostSelectionError
from app.models import ContextualModel, CorrelationSet, LrhvmModel, SettingPair, SubdomainModel

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)

SINGLET = (1 / math.sqrt(2), -1 / math.sqrt(2), 1 / math.sqrt(2), 1 / math.sqrt(2))


def _single_cell_model(a_x=1, a_xp=1, b_y=1, b_yp=1) -> ContextualModel:
    one = (Fraction(1),)
    return ContextualModel(
        k=1, m=1, source=(one,), p_x=one, p_xp=one, p_y=one, p_yp=one,
        a_x=((a_x,),), a_xp=((a_xp,),), b_y=((b_y,),), b_yp=((b_yp,),),
    )


# ========================
# LRHVM
# ========================

@given(seeds, st.integers(min_value=1, max_value=8))
def test_lrhvm_bound_and_feasibility(seed, size):
    model = chvm.random_lrhvm(np.random.default_rng(seed), size=size)
    corr = chvm.lrhvm_expectations(model)
    assert abs(corr.chsh()) <= 2
    assert ineq.fine_feasibility(corr).feasible
    joint, _ = chvm.lrhvm_counterfactual_table(model)
    assert joint.marginals().pairwise() == corr.pairwise()


def test_lrhvm_deterministic_model():
    model = LrhvmModel(p=(Fraction(1),), a=(1,), ap=(1,), b=(1,), bp=(-1,))
    corr = chvm.lrhvm_expectations(model)
    assert corr.pairwise() == (1, -1, 1, -1)
    assert corr.chsh() == 2
    _, counterfactual = chvm.lrhvm_counterfactual_table(model)
    assert counterfactual == -1


def test_lrhvm_float_probabilities(rng):
    model = chvm.random_lrhvm(rng, size=5, exact=False)
    assert abs(chvm.lrhvm_expectations(model).chsh()) <= 2 + 1e-12


# ========================
# 情境模型与平均
# ========================

@given(seeds, st.integers(min_value=1, max_value=3), st.integers(min_value=1, max_value=3))
def test_averaging_identity(seed, k, m):
    model = chvm.random_contextual(np.random.default_rng(seed), k=k, m=m)
    corr, contexts = chvm.contextual_expectations(model)
    averaged = chvm.averaged_expectations(chvm.bell71_average(model))
    assert corr.pairwise() == averaged.pairwise()
    assert corr.singles() == averaged.singles()
    assert abs(corr.chsh()) <= 2
    for first, second in contexts.values():
        assert first == second


@given(seeds)
def test_postselected_within_no_signalling_bound(seed):
    rng = np.random.default_rng(seed)
    model = chvm.random_contextual(rng, k=2, m=2, allow_zero=False)
    assert abs(chvm.postselect_expectations(model).correlations.chsh()) <= 4


def test_demonstration_model_values():
    model = chvm.demonstration_model()
    full, contexts = chvm.contextual_expectations(model)
    post = chvm.postselect_expectations(model)
    assert full.chsh() == Fraction(26, 25)
    assert post.correlations.chsh() == Fraction(26, 9)
    assert post.correlations.get(SettingPair.AB) == Fraction(7, 9)
    assert full.get(SettingPair.AB) == Fraction(7, 25)
    assert post.retained[SettingPair.AB] == Fraction(9, 25)
    assert contexts["A_x"] == (Fraction(1, 5), Fraction(1, 5))


def test_demonstration_model_apparent_signalling():
    report = chvm.apparent_signalling(chvm.demonstration_model())
    assert report.signalling
    row = next(r for r in report.rows if r.observable == "A_x" and r.distant == "B_y")
    assert row.raw == Fraction(1, 5)
    assert row.detected == Fraction(7, 9)
    assert row.undetected == Fraction(-1, 3)


def test_no_signalling_without_zero_outcomes(rng):
    model = chvm.random_contextual(rng, k=2, m=2, allow_zero=False)
    report = chvm.apparent_signalling(model)
    assert all(r.undetected is None for r in report.rows)


def test_postselection_zero_mass_names_pair():
    with pytest.raises(PostSelectionError) as info:
        chvm.postselect_expectations(_single_cell_model(a_x=0))
    assert info.value.setting == SettingPair.AB.value


def test_invalid_contextual_model():
    with pytest.raises(ValueError):
        ContextualModel(
            k=1, m=1, source=((Fraction(1, 2),),),
            p_x=(1,), p_xp=(1,), p_y=(1,), p_yp=(1,),
            a_x=((1,),), a_xp=((1,),), b_y=((1,),), b_yp=((1,),),
        )
    with pytest.raises(ValueError):
        _single_cell_model(a_x=2)


# ========================
# Larsson-Gill 修正界
# ========================

def test_larsson_gill_endpoints(rng):
    base = chvm.random_lrhvm(rng, size=4)
    equal = chvm.larsson_gill_bound(SubdomainModel(
        p=base.p, subsets={pair: (0, 1, 2, 3) for pair in SettingPair},
        a_x=base.a, a_xp=base.ap, b_y=base.b, b_yp=base.bp,
    ))
    assert equal.endpoint == "all-subsets-equal"
    assert equal.delta == 1
    assert equal.bound == 2
    assert equal.within_bound

    disjoint = chvm.larsson_gill_bound(SubdomainModel(
        p=(Fraction(1, 4),) * 4, subsets={pair: (pair.index,) for pair in SettingPair},
        a_x=(1, 1, 1, 1), a_xp=(1, 1, 1, 1), b_y=(1, 1, 1, 1), b_yp=(1, -1, 1, 1),
    ))
    assert disjoint.endpoint == "empty-intersection"
    assert disjoint.bound == 4
    assert disjoint.s_conditional == 4


@given(seeds)
def test_larsson_gill_random_subdomains(seed):
    result = chvm.larsson_gill_bound(chvm.random_subdomain(np.random.default_rng(seed)))
    assert 0 <= result.delta <= 1
    assert result.bound == 4 - 2 * result.delta
    assert abs(result.s_conditional) <= 4


# ========================
# 参数计数与拟合
# ========================

def test_parameter_count():
    count = chvm.parameter_count(2, 2)
    assert count.outcome_functions == 4 * 3 ** 4
    assert count.instrument_parameters == 4
    assert count.source_parameters == 3
    assert count.source_parameters_symmetric == 2
    assert count.source_parameters_offdiagonal == 1
    three = chvm.parameter_count(2, 2, settings_per_side=3)
    assert three.setting_pairs == 9
    assert three.outcome_functions == 6 * 3 ** 4
    with pytest.raises(ValueError):
        chvm.parameter_count(0, 1)


def test_fit_residual_of_own_postselected_values():
    model = chvm.demonstration_model()
    targets = chvm.postselect_expectations(model).correlations
    assert chvm.fit_residual(model, targets) == pytest.approx(0.0, abs=1e-24)


def test_fit_singlet_by_pair_embedding():
    targets = CorrelationSet.from_values(SINGLET, [0, 0, 0, 0])
    fit = chvm.fit_contextual(targets, k=16, m=1)
    assert fit.method == "embedding"
    assert fit.residual <= 1e-12
    s = chvm.postselect_expectations(fit.model).correlations.chsh()
    assert float(s) == pytest.approx(2 * math.sqrt(2), abs=1e-9)


@pytest.mark.parametrize("seed", [3, 11])
def test_fit_reproduces_local_targets(seed):
    model = chvm.random_lrhvm(np.random.default_rng(seed), size=3)
    targets = chvm.lrhvm_expectations(model)
    fit = chvm.fit_contextual(targets, k=3, m=1)
    assert fit.method == "witness"
    assert fit.residual <= 1e-12
    retained = chvm.postselect_expectations(fit.model).correlations
    for got, want in zip(retained.pairwise(), targets.pairwise()):
        assert float(got) == pytest.approx(float(want), abs=1e-9)


def test_fit_zero_targets_without_postselection():
    fit = chvm.fit_contextual(CorrelationSet.from_values([0, 0, 0, 0]), k=2, m=2)
    assert fit.method == "witness"
    assert fit.residual <= 1e-12
    assert chvm.postselect_expectations(fit.model).retained == pytest.approx({p: 1.0 for p in SettingPair})


def test_fit_search_respects_budget():
    targets = CorrelationSet.from_values(SINGLET)
    fit = chvm.fit_contextual(targets, k=2, m=1, seed=4, budget=300)
    assert fit.method == "search"
    assert fit.evaluations <= 300
    assert len(fit.trace) == fit.evaluations
    assert list(fit.trace) == sorted(fit.trace, reverse=True)
    assert fit.residual == fit.trace[-1]
    assert chvm.fit_residual(fit.model, targets) == pytest.approx(fit.residual, abs=1e-9)


def test_fit_argument_errors():
    targets = CorrelationSet.from_values([0, 0, 0, 0])
    with pytest.raises(ValueError):
        chvm.fit_contextual(targets, k=0, m=1)
    with pytest.raises(ValueError):
        chvm.fit_contextual(targets, k=1, m=1, budget=0)


# ========================
# 逐事件模拟
# ========================

def test_simulation_is_deterministic():
    model = chvm.demonstration_model()
    first = chvm.simulate_contextual(model, 5000, seed=8)
    second = chvm.simulate_contextual(model, 5000, seed=8)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


def test_systematic_schedule_is_balanced():
    events = chvm.simulate_contextual(chvm.demonstration_model(), 4000, chvm.SYSTEMATIC, seed=1)
    assert len(events) == 4000
    assert np.bincount(events.setting, minlength=4).tolist() == [1000] * 4


@pytest.mark.parametrize("schedule", [chvm.RANDOM, chvm.SYSTEMATIC, []])
def test_simulation_of_zero_trials_is_empty(schedule):
    events = chvm.simulate_contextual(chvm.demonstration_model(), 0, schedule, seed=3)
    assert len(events) == 0
    assert events.out_a.shape == events.out_b.shape == (0,)
    with pytest.raises(PostSelectionError):
        chvm.empirical_expectations(events)


@pytest.mark.slow
def test_simulation_reproduces_analytic_values():
    model = chvm.demonstration_model()
    full, _ = chvm.contextual_expectations(model)
    post = chvm.postselect_expectations(model).correlations
    empirical = chvm.empirical_expectations(chvm.simulate_contextual(model, 400_000, seed=2))
    for pair in SettingPair:
        assert abs(float(empirical.full.get(pair)) - float(full.get(pair))) <= 4 * empirical.full_stderr[pair]
        assert abs(float(empirical.postselected.get(pair)) - float(post.get(pair))) \
            <= 4 * empirical.postselected_stderr[pair]
    sigma = chvm.empirical_chsh_sigma(empirical)
    assert abs(float(empirical.postselected.chsh()) - float(post.chsh())) <= 4 * sigma


def test_empirical_expectations_needs_every_pair():
    events = chvm.simulate_contextual(_single_cell_model(), 8, chvm.SYSTEMATIC)
    empirical = chvm.empirical_expectations(events)
    assert empirical.full.pairwise() == (1, 1, 1, 1)
    short = chvm.EventStream(events.setting[:2], events.out_a[:2], events.out_b[:2])
    with pytest.raises(PostSelectionError):
        chvm.empirical_expectations(short)
