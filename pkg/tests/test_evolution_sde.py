import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from harnacklab.evolution_sde import (
    ConfigurationError,
    EvolutionModel,
    EvolutionShift,
    RadialBeta,
    B_difference,
    bilinear,
    bin_scores,
    burgers_B,
    burgers_tensor,
    condition_probe,
    coupled_evolution,
    delta_e,
    gamma_evolution,
    grad_B,
    harnack_exponent_evolution,
    max_scale,
    p_threshold,
    psi_constant,
    shift_functionals,
    simulate_evolution,
)
from harnacklab.scheme import step_coefficients
from harnacklab.spectral import DomainError, v_norm

N = 8
vectors = arrays(np.float64, N, elements=st.floats(-3, 3))


@pytest.fixture(scope="module")
def burgers():
    return EvolutionModel.default(N, 1.5, 0.5, 1.0, "burgers")


def test_tensor_is_symmetric():
    C = burgers_tensor(6)
    assert np.allclose(C, np.swapaxes(C, 1, 2))


@given(vectors)
def test_energy_identity(u):
    model = EvolutionModel.default(N)
    b = burgers_B(model, u)
    assert abs(float(b @ u)) <= 1e-10 * (1 + np.linalg.norm(u) ** 3)


@given(vectors, vectors)
def test_difference_expansion(x, g):
    model = EvolutionModel.default(N)
    direct = burgers_B(model, x + g) - burgers_B(model, x)
    assert np.allclose(B_difference(model, x, g), direct, atol=1e-10)
    assert np.allclose(direct, 2 * bilinear(model, g, x) + burgers_B(model, g), atol=1e-10)


@given(vectors, vectors)
def test_gateaux_derivative_matches_central_difference(v, h):
    model = EvolutionModel.default(N)
    eps = 1e-5
    fd = (burgers_B(model, v + eps * h) - burgers_B(model, v - eps * h)) / (2 * eps)
    # B is quadratic, so the central difference is exact up to rounding
    assert np.allclose(fd, grad_B(model, v, h), atol=1e-7 * (1 + np.abs(fd).max()))


def test_zero_nonlinearity_vanishes():
    model = EvolutionModel.default(N, nonlinearity="zero")
    assert not np.any(burgers_B(model, np.ones(N)))


def test_noise_norm_constant():
    model = EvolutionModel.default(N, q0=2.0)
    v = np.random.default_rng(0).standard_normal((50, N))
    lhs = model.q_norm(v) ** 2
    rhs = model.K3 * v_norm(model.A, v, model.theta) ** 2
    assert np.all(lhs <= rhs * (1 + 1e-12))
    assert model.K3_exact() == pytest.approx(model.K3)


def test_radial_beta_must_be_monotone():
    with pytest.raises(ConfigurationError):
        RadialBeta(lambda r: np.sin(r), "sine").sup_ball(10.0)
    assert RadialBeta.linear(2.0).sup_ball(3.0) == pytest.approx(6.0)


@given(st.floats(0.2, 3.0))
def test_shift_profile_endpoints(T):
    model = EvolutionModel.default(N)
    e = np.linspace(1, 0, N)
    assert np.allclose(gamma_evolution(model.A, T, e, 0.0), 0.0)
    assert np.allclose(gamma_evolution(model.A, T, e, T), e)


def test_coupled_process_ends_shifted(burgers):
    x0 = np.eye(N)[0]
    shift = EvolutionShift.build(burgers.A, 1.0, 0.2 * np.eye(N)[0] + 0.1 * np.eye(N)[1])
    x = simulate_evolution(burgers, x0, 1.0, 1 / 64, 3, n_paths=4)
    y = coupled_evolution(burgers, shift, x0, x)
    assert np.allclose(y.final - x.final, shift.e, atol=1e-12)
    assert np.allclose(y.states - x.states, shift.nodes(1 / 64)[None], atol=1e-12)


def test_girsanov_density_is_exact_change_of_noise(burgers):
    """Re-running with dW + h step reproduces x + Gamma and log R matches the sum."""
    step = 1 / 64
    x0 = np.eye(N)[0]
    shift = EvolutionShift.build(burgers.A, 1.0, 0.2 * np.eye(N)[0])
    x = simulate_evolution(burgers, x0, 1.0, step, 8, n_paths=3)
    coef = step_coefficients(burgers.A, step, "exact")
    gam, g = shift.nodes(step), shift.forcing(step)
    h = np.stack([coef.rho / burgers.q * (g[j] + burgers_B(burgers, x.states[:, j])
                                          - burgers_B(burgers, x.states[:, j] + gam[j]))
                  for j in range(x.n_steps)], axis=1)
    y = simulate_evolution(burgers, x0, 1.0, step, 8, dW=x.dW + h * step)
    assert np.allclose(y.states, x.states + gam[None], atol=1e-10)
    logR = -np.einsum("pnk,pnk->p", h, x.dW) - 0.5 * step * np.einsum("pnk,pnk->p", h, h)
    logs, _ = shift_functionals(burgers, shift, x)
    assert np.allclose(logs[0], logR, atol=1e-10)


def test_zero_shift_gives_unit_density(burgers):
    shift = EvolutionShift.build(burgers.A, 1.0, np.zeros(N))
    x = simulate_evolution(burgers, np.zeros(N), 1.0, 1 / 32, 1, n_paths=5)
    logs, w = shift_functionals(burgers, shift, x, (1.0, 0.5))
    assert shift.is_zero
    assert not np.any(logs[0]) and not np.any(w)


@settings(max_examples=50)
@given(st.floats(1e-3, 10.0), st.floats(1e-4, 0.99), st.floats(1e-4, 0.99))
def test_threshold_increases_with_scale(delta, a, b):
    r1, r2 = sorted((a, b))
    r1, r2 = r1 * np.sqrt(2 * delta), r2 * np.sqrt(2 * delta)
    assert p_threshold(delta, r1) <= p_threshold(delta, r2) * (1 + 1e-12)
    assert p_threshold(delta, r1) > 1


@settings(max_examples=50)
@given(st.floats(1e-3, 10.0), st.floats(1.01, 50.0))
def test_max_scale_is_admissible(delta, p):
    r = max_scale(delta, p)
    assert 0 < r <= np.sqrt(delta)
    assert p_threshold(delta, r) <= p * (1 + 1e-9)


def test_delta_exponent_domain(burgers):
    model = EvolutionModel.default(N, K4=1.7)
    e = np.eye(N)[0] * 0.2
    d = delta_e(model, 1.0, e)
    r = 0.5 * max_scale(d, 2.0)
    C = harnack_exponent_evolution(model, np.eye(N)[0], 1.0, e, r, 2.0)
    assert np.isfinite(C) and C > 0
    with pytest.raises(DomainError):
        harnack_exponent_evolution(model, np.eye(N)[0], 1.0, e, 2 * np.sqrt(d), 2.0)
    with pytest.raises(DomainError):
        harnack_exponent_evolution(model, np.eye(N)[0], 1.0, e, r, 1.0)


def test_beta_exponent_decreases_in_p():
    model = EvolutionModel.default(N, nonlinearity="zero")
    e = np.eye(N)[0] * 0.2
    c = [harnack_exponent_evolution(model, np.zeros(N), 1.0, e, None, p, "beta")
         for p in (1.5, 2, 4, 8)]
    assert all(a >= b for a, b in zip(c, c[1:]))


def test_psi_grows_with_constant(burgers):
    e = np.eye(N)[0] * 0.2
    vals = [psi_constant(burgers, np.eye(N)[0], 1.0, e, C) for C in (0.1, 1.0, 2.0)]
    assert all(0 < a < b for a, b in zip(vals, vals[1:]))
    with pytest.raises(DomainError):
        psi_constant(burgers, np.eye(N)[0], 1.0, e, 0.0)


def test_condition_probe_is_stable(burgers):
    rep = condition_probe(burgers, 300, seed=1)
    assert rep.stable
    assert rep.fitted["K5"] < 1e-10
    assert rep.fitted["c_beta"] == pytest.approx(rep.fitted["K4"] / 2)


def test_condition_probe_needs_burgers():
    with pytest.raises(ConfigurationError):
        condition_probe(EvolutionModel.default(N, nonlinearity="zero"), 10)


def test_bin_scores_recover_linear_score():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(200_000) * 0.5 + 1.0
    w = (x - 1.0) / 0.25 + rng.standard_normal(x.size)
    bins = bin_scores(x, w, np.linspace(0.0, 2.0, 9), 1.0, 0.25)
    z = np.abs(bins.score - bins.oracle_avg) / bins.diff_stderr
    assert np.all(z < 4)
