"""量子关联、Tsirelson 界与平滑关联"""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app import quantum
from app.exceptions import QuantumValidationError
from app.models import HermitianOperator, QuantumState, SettingPair, UnitVector3

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


def test_spin_operator_squares_to_identity(rng):
    for _ in range(100):
        op = quantum.spin_operator(quantum.random_unit_vector(rng))
        np.testing.assert_allclose(op.matrix @ op.matrix, quantum.IDENTITY2, atol=1e-12)
        np.testing.assert_allclose(op.eigenvalues(), [-1, 1], atol=1e-12)


def test_unit_vector_validation():
    with pytest.raises(QuantumValidationError):
        quantum.spin_operator((1.0, 1.0, 0.0))
    with pytest.raises(QuantumValidationError):
        quantum.make_cap((0.0, 0.0, 1.0), 2.5)
    with pytest.raises(ValueError):
        UnitVector3.normalized((2.0, 0.0, 0.0))
    nearly = UnitVector3.normalized((1.0 + 1e-8, 0.0, 0.0))
    assert nearly.x == 1.0


def test_singlet_same_and_opposite_axis():
    a = UnitVector3.normalized(np.ones(3) / math.sqrt(3))
    state = quantum.singlet_state()
    same = quantum.conditional_covariance(state, quantum.spin_operator(a), quantum.spin_operator(a))
    opposite = quantum.conditional_covariance(state, quantum.spin_operator(a), quantum.spin_operator(-a))
    assert same.e_ab == pytest.approx(-1.0, abs=1e-12)
    assert opposite.e_ab == pytest.approx(1.0, abs=1e-12)
    assert same.e_a == pytest.approx(0.0, abs=1e-12)
    assert same.e_b == pytest.approx(0.0, abs=1e-12)


def test_singlet_rotational_invariance(rng):
    state = quantum.singlet_state()
    for _ in range(1000):
        a, b = quantum.random_unit_vector(rng), quantum.random_unit_vector(rng)
        cov = quantum.conditional_covariance(state, quantum.spin_operator(a), quantum.spin_operator(b))
        assert abs(cov.e_ab + a.dot(b)) <= 1e-12


def test_conditional_covariance_dimension_mismatch():
    big = HermitianOperator(matrix=np.eye(4))
    with pytest.raises(QuantumValidationError):
        quantum.conditional_covariance(quantum.singlet_state(), big, quantum.spin_operator((0, 0, 1)))


def test_maximally_mixed_state_has_no_correlation():
    cov = quantum.conditional_covariance(
        quantum.maximally_mixed_state(), quantum.spin_operator((0, 0, 1)), quantum.spin_operator((0, 0, 1))
    )
    assert cov == pytest.approx((0.0, 0.0, 0.0, 0.0), abs=1e-15)


def test_tsirelson_settings_saturate():
    result = quantum.correlation_set_quantum(quantum.singlet_state(), *quantum.tsirelson_settings())
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(result.correlations.pairwise(), [r, -r, r, r], atol=1e-12)
    assert result.correlations.chsh() == pytest.approx(2 * math.sqrt(2), abs=1e-10)
    for pair in SettingPair:
        table = result.tables[pair]
        assert table.min() >= -1e-12
        assert table.sum() == pytest.approx(1.0, abs=1e-12)


def test_chsh_operator_norm_at_tsirelson():
    ops = [quantum.spin_operator(v) for v in quantum.tsirelson_settings()]
    assert quantum.chsh_operator(*ops).norm() == pytest.approx(2 * math.sqrt(2), abs=1e-9)


def test_chsh_operator_rejects_invalid_observable():
    bad = HermitianOperator(matrix=2 * quantum.SIGMA_Z)
    ok = quantum.spin_operator((0, 0, 1))
    with pytest.raises(QuantumValidationError, match="not a valid observable"):
        quantum.chsh_operator(bad, ok, ok, ok)


@given(seeds)
def test_tsirelson_bound_and_landau_equality(seed):
    rng = np.random.default_rng(seed)
    check = quantum.tsirelson_inequality_check(*(quantum.random_observable(rng) for _ in range(4)))
    assert check.norm <= quantum.TSIRELSON_BOUND + 1e-9
    assert check.holds
    assert check.landau_residual is not None
    assert check.landau_residual <= 1e-10


@given(seeds)
def test_separable_bound(seed):
    rng = np.random.default_rng(seed)
    mixture = quantum.random_separable_mixture(rng, int(rng.integers(1, 5)))
    axes = [quantum.random_unit_vector(rng) for _ in range(4)]
    assert abs(quantum.separable_chsh(mixture, *axes)) <= 2 + 1e-9


def test_invalid_states():
    with pytest.raises(ValueError):
        QuantumState.pure(np.array([1, 1, 0, 0], dtype=complex))
    with pytest.raises(ValueError):
        QuantumState.mixed(np.diag([1.5, -0.5, 0, 0]).astype(complex))


# ========================
# 平滑关联
# ========================

@pytest.mark.parametrize("epsilon", [0.4, 0.2, 0.1, 0.05])
def test_smeared_quadrature_matches_closed_form(epsilon):
    a, _, b, _ = quantum.tsirelson_settings()
    cap_a, cap_b = quantum.make_cap(a, epsilon), quantum.make_cap(b, epsilon)
    quad = quantum.smeared_correlation(cap_a, cap_b)
    closed = quantum.smeared_correlation_closed_form(cap_a, cap_b)
    assert closed == pytest.approx(-(1 - epsilon / 2) ** 2 * a.dot(b), abs=1e-15)
    assert quad == pytest.approx(closed, abs=1e-6)


def test_smeared_examples():
    z = (0.0, 0.0, 1.0)
    cap = quantum.make_cap(z, 0.2)
    assert quantum.smeared_correlation(cap, cap) == pytest.approx(-0.81, abs=1e-6)
    x = quantum.make_cap((1.0, 0.0, 0.0), 0.4)
    assert quantum.smeared_correlation(cap, x) == pytest.approx(0.0, abs=1e-9)
    tiny = quantum.make_cap(z, 1e-6)
    assert quantum.smeared_correlation(tiny, tiny) == pytest.approx(-1.0, abs=1e-5)


def test_smeared_magnitude_increases_as_caps_shrink():
    a, _, b, _ = quantum.tsirelson_settings()
    values = [abs(quantum.smeared_correlation(quantum.make_cap(a, e), quantum.make_cap(b, e)))
              for e in (0.4, 0.2, 0.1, 0.05)]
    assert values == sorted(values)
    assert values[-1] < abs(a.dot(b))


@pytest.mark.slow
def test_smeared_monte_carlo_oracle():
    z = (0.0, 0.0, 1.0)
    tilted = UnitVector3.normalized((0.6, 0.0, 0.8))
    cap_a, cap_b = quantum.make_cap(z, 0.2), quantum.make_cap(tilted, 0.4)
    estimate, stderr = quantum.smeared_correlation_monte_carlo(cap_a, cap_b, 1_000_000, seed=3)
    closed = quantum.smeared_correlation_closed_form(cap_a, cap_b)
    assert abs(estimate - closed) <= 4 * stderr


def test_smeared_chsh_shrinks_towards_tsirelson():
    settings = quantum.tsirelson_settings()
    s = quantum.smeared_chsh(settings, 0.1).chsh()
    assert s == pytest.approx(2 * math.sqrt(2) * 0.95 ** 2, abs=1e-6)
