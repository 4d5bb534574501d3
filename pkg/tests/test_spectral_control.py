import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from harnacklab.control import (
    ControlFunction,
    apply_LT,
    gramian,
    lemma3_bound,
    lemma3_control,
    min_energy_control,
    min_energy_norm_sq,
    remark_control,
)
from harnacklab.spectral import (
    DimensionError,
    DomainError,
    Segment,
    SpectralOperator,
    grid_count,
    half_norm_sq,
    phi_function,
    semigroup_apply,
    v_norm,
)

spectra = st.lists(st.floats(0.1, 60.0), min_size=1, max_size=6).map(
    lambda v: SpectralOperator(np.sort(np.array(v))))


# --- spectral ---------------------------------------------------------------

def test_power_law_eigenvalues():
    A = SpectralOperator.power_law(4, 1.5)
    assert np.allclose(A.eigenvalues, [1, 8, 27, 64])
    assert A.gap == 1.0


@pytest.mark.parametrize("bad", [[], [0.0], [-1.0], [2.0, 1.0], [np.inf]])
def test_operator_rejects_bad_spectrum(bad):
    with pytest.raises((DimensionError, DomainError)):
        SpectralOperator(np.array(bad, dtype=float))


def test_power_law_rejects_sub_laplacian_beta():
    with pytest.raises(DomainError):
        SpectralOperator.power_law(3, 0.5)


@given(spectra, st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_semigroup_property(A, s, t):
    x = np.linspace(1.0, -1.0, A.dim)
    lhs = semigroup_apply(A, s + t, x)
    rhs = semigroup_apply(A, s, semigroup_apply(A, t, x))
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-300)


def test_semigroup_rejects_negative_time():
    with pytest.raises(DomainError):
        semigroup_apply(SpectralOperator.power_law(2), -0.1, [1.0, 1.0])


@given(spectra)
def test_half_norm_matches_time_integral(A):
    x = np.linspace(0.5, 1.5, A.dim)
    val, _ = integrate.quad(
        lambda t: float(np.sum((A.eigenvalues * np.exp(-t * A.eigenvalues) * x) ** 2)),
        0, np.inf, limit=200)
    assert half_norm_sq(A, x) == pytest.approx(val, rel=1e-7)
    assert v_norm(A, x, 1.0) ** 2 == pytest.approx(2 * half_norm_sq(A, x), rel=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("z", [0.0, 1e-8, 0.3, 0.999, 1.0, 5.0, 200.0])
def test_phi_function_matches_quadrature(k, z):
    from math import factorial
    ref, _ = integrate.quad(lambda u: np.exp(-z * (1 - u)) * u ** (k - 1) / factorial(k - 1),
                            0, 1, epsabs=1e-15, epsrel=1e-13)
    assert phi_function(k, np.array([z]))[0] == pytest.approx(ref, rel=1e-12, abs=1e-16)


def test_segment_interpolation_and_sup():
    seg = Segment.from_function(lambda s: np.array([s, 2 * s]), 0.5, 0.125)
    assert seg.n_intervals == 4
    assert np.allclose(seg.at(-0.3), [-0.3, -0.6])
    assert seg.sup_norm() == pytest.approx(0.5 * np.sqrt(5))
    with pytest.raises(DomainError):
        seg.at(0.1)


def test_grid_count_requires_exact_division():
    assert grid_count(1.5, 1 / 64) == 96
    with pytest.raises(DomainError):
        grid_count(1.0, 0.3)


# --- control ----------------------------------------------------------------

def test_single_mode_minimal_energy_oracle():
    # 2 lambda / (1 - e^{-2 lambda T}) with lambda = T = 1
    A = SpectralOperator(np.array([1.0]))
    assert min_energy_norm_sq(A, None, 1.0, [1.0]) == pytest.approx(2.313035, abs=1e-6)
    assert gramian(A, None, 1.0).entries[0] == pytest.approx((1 - np.exp(-2)) / 2)
    f = min_energy_control(A, None, 1.0, [1.0])
    assert f.norm_sq() == pytest.approx(2.3130352854993315, rel=1e-10)


def test_single_mode_lemma3_oracle():
    # int_0^1 (e^{-(1-t)} (1 + 2t))^2 dt, evaluated by quadrature
    ref, _ = integrate.quad(lambda t: (np.exp(-(1 - t)) * (1 + 2 * t)) ** 2, 0, 1)
    A = SpectralOperator(np.array([1.0]))
    f = lemma3_control(A, None, 1.0, [1.0])
    assert f.norm_sq() == pytest.approx(ref, rel=1e-10)
    assert f.norm_sq() == pytest.approx(2.432329, abs=1e-5)
    assert lemma3_bound(A, None, 1.0, [1.0]) == 4.0


@settings(max_examples=40, deadline=None)
@given(spectra, st.floats(0.25, 4.0), st.integers(0, 2 ** 31))
def test_minimality_sandwich(A, T, seed):
    x = np.random.default_rng(seed).standard_normal(A.dim)
    lo = min_energy_norm_sq(A, None, T, x)
    mid = lemma3_control(A, None, T, x, step=T * 2.0 ** -10).norm_sq()
    hi = lemma3_bound(A, None, T, x)
    assert lo <= mid * (1 + 1e-9)
    assert mid <= hi * (1 + 1e-9)


@settings(max_examples=25, deadline=None)
@given(spectra, st.floats(0.25, 3.0), st.integers(0, 2 ** 31))
def test_controls_reach_target(A, T, seed):
    x = np.random.default_rng(seed).standard_normal(A.dim)
    for build in (min_energy_control, lemma3_control):
        f = build(A, None, T, x)
        assert np.linalg.norm(apply_LT(A, None, T, f) - x) <= 1e-6 * (1 + np.linalg.norm(x))
        assert np.allclose(f.response(T), x, atol=1e-12)


def test_min_energy_scales_quadratically():
    A = SpectralOperator.power_law(5)
    x = np.arange(1.0, 6.0)
    assert min_energy_norm_sq(A, None, 1.0, 3 * x) == pytest.approx(
        9 * min_energy_norm_sq(A, None, 1.0, x), rel=1e-13)


def test_remark_control_reaches_target_and_is_not_cheaper():
    A = SpectralOperator.power_law(3)
    x = np.array([1.0, -0.5, 0.2])
    g = remark_control(A, 1.0, x, lambda t: t * t, step=2.0 ** -12)
    assert np.allclose(apply_LT(A, None, 1.0, g), x, atol=1e-6)
    assert g.norm_sq() >= min_energy_norm_sq(A, None, 1.0, x)


def test_remark_control_rejects_bad_weight():
    A = SpectralOperator.power_law(2)
    with pytest.raises(DomainError):
        remark_control(A, 1.0, [1.0, 1.0], lambda t: 0.5 * t, step=0.125)


def test_apply_LT_exact_for_constant_control():
    # int_0^T e^{-(T-s) lam} ds = (1 - e^{-lam T}) / lam
    A = SpectralOperator.power_law(4)
    f = ControlFunction(np.ones((65, 4)), 1 / 64)
    expect = -np.expm1(-A.eigenvalues) / A.eigenvalues
    assert np.allclose(apply_LT(A, None, 1.0, f), expect, rtol=1e-12)


def test_control_norm_rules_agree_on_smooth_input():
    f = ControlFunction.from_function(lambda t: np.array([np.sin(3 * t)]), 0.0, 1.0, 2.0 ** -8)
    exact = 0.5 - np.sin(6) / 12
    assert f.norm_sq("romberg") == pytest.approx(exact, rel=1e-12)
    assert f.norm_sq("simpson") == pytest.approx(exact, rel=1e-8)
