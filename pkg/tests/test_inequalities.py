import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from oulab.errors import ConfigurationError, DomainError
from oulab.gaussian import GrowthClass, SpectralField
from oulab.inequalities import (
    VanishingProbe,
    case1_potential_bound,
    effective_degree,
    fit_slope,
    g_theta,
    hardy_quadratic,
    hardy_quadratic_identity,
    hardy_singular,
    inject_fault,
    log_c_nk,
    polynomial_probe,
    probe_integral,
    vanishing_envelope,
)
from oulab.gaussian import build_gamma_grid
from oulab.mehler import kernel_variance


def random_field(seed, dim, degree):
    return SpectralField(np.random.default_rng(seed).normal(size=(degree + 1,) * dim))


def test_hardy_quadratic_closed_forms():
    tau = 0.2
    s = kernel_variance(tau)
    one = hardy_quadratic(SpectralField.mode((0, 0)), tau)
    assert one.lhs == pytest.approx(2 * s, rel=1e-13)
    assert one.rhs == pytest.approx(2 * math.expm1(2 * tau), rel=1e-13)
    x = hardy_quadratic(SpectralField.mode((1,)), tau)
    assert x.lhs == pytest.approx(3 * s * s, rel=1e-13)
    assert x.rhs == pytest.approx(math.expm1(2 * tau) * (s + 1), rel=1e-13)
    assert one.passed and x.passed
    with pytest.raises(DomainError):
        hardy_quadratic(SpectralField.mode((0,)), 0.0)


def test_hardy_singular_closed_forms():
    s = 0.1
    tau = -0.5 * math.log(1 - s)
    one = hardy_singular(SpectralField.mode((0, 0, 0)), tau)
    assert one.lhs == pytest.approx(1 / s, rel=1e-12)
    assert one.rhs == pytest.approx(2 / s, rel=1e-12)
    # x1 and x1 x2: angular averages 1/3 and 3 · 1/15
    x1 = hardy_singular(SpectralField.mode((1, 0, 0)), tau)
    assert x1.lhs == pytest.approx(1 / 3, rel=1e-12)
    x12 = hardy_singular(SpectralField.mode((1, 1, 0)), tau)
    assert x12.lhs == pytest.approx(0.2 * s, rel=1e-12)
    assert one.passed and x1.passed and x12.passed


def test_hardy_singular_against_monte_carlo():
    # heavy tails in 3-D make plain MC noisy; use a modest tolerance
    rng = np.random.default_rng(11)
    u = random_field(3, 3, 2)
    tau = 0.05
    s = kernel_variance(tau)
    z = rng.normal(size=(400_000, 3)) * math.sqrt(s)
    mc = np.mean(u.values(z) ** 2 / np.sum(z**2, axis=1))
    assert hardy_singular(u, tau).lhs == pytest.approx(mc, rel=0.02)


def test_hardy_singular_needs_three_dimensions():
    with pytest.raises(DomainError):
        hardy_singular(SpectralField.mode((1, 1)), 0.1)


@settings(max_examples=30)
@given(st.integers(1, 3), st.integers(0, 4), st.floats(1e-3, 1.0), st.integers(0, 2**31 - 1))
def test_hardy_quadratic_holds(dim, degree, tau, seed):
    assert hardy_quadratic(random_field(seed, dim, degree), tau).passed


@settings(max_examples=20)
@given(st.integers(0, 3), st.floats(1e-3, 1.0), st.integers(0, 2**31 - 1))
def test_hardy_singular_holds(degree, tau, seed):
    rep = hardy_singular(random_field(seed, 3, degree), tau)
    assert rep.passed and rep.lhs >= 0


@settings(max_examples=20)
@given(st.integers(1, 3), st.integers(0, 3), st.floats(1e-3, 1.0), st.integers(0, 2**31 - 1))
def test_quadratic_identity(dim, degree, tau, seed):
    lhs, rhs = hardy_quadratic_identity(random_field(seed, dim, degree), tau)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-14)


def test_effective_degree():
    c = np.zeros((4, 4))
    c[1, 2] = 1.0
    assert effective_degree(SpectralField(c)) == 3
    assert effective_degree(SpectralField.zeros(2, 3)) == 0


def test_fault_hook_breaks_hardy_checks():
    u = SpectralField.mode((1, 0, 0))
    inject_fault("hardy_rhs_sign")
    try:
        assert not hardy_quadratic(u, 0.1).passed
        assert not hardy_singular(u, 0.1).passed
    finally:
        inject_fault(None)
    assert hardy_quadratic(u, 0.1).passed


@pytest.mark.parametrize("n,K", [(1, 0), (1, 1), (2, 2), (3, 4)])
def test_c_nk_matches_numerical_maximum(n, K):
    res = minimize_scalar(lambda th: -g_theta(th, n, K), bounds=(1e-6, 10.0), method="bounded",
                          options={"xatol": 1e-14})
    assert log_c_nk(n, K) == pytest.approx(-res.fun, rel=1e-10)
    with pytest.raises(DomainError):
        log_c_nk(0, 0)


def test_probe_integral_closed_form():
    probe = polynomial_probe(1)
    tau = 0.01
    s = kernel_variance(tau)
    G = probe_integral(probe, tau, build_gamma_grid(1, 6))
    assert G == pytest.approx(3 * s * s + 2 * s * tau + tau * tau, rel=1e-13)


def test_polynomial_probe_constants():
    p = polynomial_probe(2, A=1.0, T1=1.0)
    assert p.C0 == 2.0
    assert p.growth.B == pytest.approx(4 * math.exp(p.T0 - 2))
    assert p.local_bound_ratio() <= 1 + 1e-12
    # the growth constant really dominates v e^{-A|x|²}
    y = np.linspace(0, 20, 4001)
    assert np.max((y + p.T0) ** 2 * np.exp(-y)) <= p.growth.B * (1 + 1e-6)


@pytest.mark.parametrize("K", [1, 2, 3])
def test_envelope_and_slope(K):
    probe = polynomial_probe(K)
    tau = np.geomspace(1e-4 * probe.T0, 0.9 * probe.T0, 30)
    rep = vanishing_envelope(probe, tau)
    assert rep.passed
    assert rep.details["slope"] == pytest.approx(2 * K, abs=0.05)
    split = np.array(rep.details["split_inner"]) + np.array(rep.details["split_outer"])
    assert np.allclose(split, rep.details["G"], rtol=1e-12)


def test_envelope_degenerate_probes():
    tau = np.geomspace(1e-5, 1e-3, 10)
    k0 = vanishing_envelope(polynomial_probe(0), tau)
    assert k0.passed and k0.details["slope"] == pytest.approx(0.0, abs=1e-12)
    zero = VanishingProbe(1, 1.0, 1.0, lambda x, t: np.zeros(np.atleast_2d(x).shape[0]), GrowthClass(1.0, 1.0))
    rep = vanishing_envelope(zero, tau)
    assert rep.passed and rep.lhs == 0.0


def test_envelope_rejects_grid_beyond_T0():
    probe = polynomial_probe(1)
    with pytest.raises(ConfigurationError):
        vanishing_envelope(probe, [1e-4, probe.T0 * 1.01])


def test_probe_validation():
    with pytest.raises(ConfigurationError):
        VanishingProbe(-1, 1.0, 1.0, lambda x, t: x, GrowthClass(1.0, 1.0))
    with pytest.raises(ConfigurationError):
        VanishingProbe(1, 0.0, 1.0, lambda x, t: x, GrowthClass(1.0, 1.0))


def test_fit_slope_on_power_law():
    tau = np.geomspace(1e-4, 1e-1, 20)
    assert fit_slope(tau, 3 * tau**2.5) == pytest.approx(2.5, rel=1e-12)


def test_case1_examples():
    r = np.linspace(0.0, 5.0, 201)
    rep = case1_potential_bound(lambda r: r**2 / 4, r, dv=lambda r: r / 2)
    fine = case1_potential_bound(lambda r: r**2 / 4, np.linspace(0.0, 5.0, 401), dv=lambda r: r / 2)
    assert rep.passed and fine.passed
    assert rep.details["product_rule_error"] / fine.details["product_rule_error"] == pytest.approx(4.0, rel=0.05)
    rr = np.linspace(0.1, 5.0, 201)
    inv = case1_potential_bound(lambda r: 1 / r**2, rr, dv=lambda r: -2 / r**3)
    assert inv.passed and inv.details["implied_c0"] == pytest.approx(1.0 - 0.005 - 0.25 * 1e-4)
    bad = case1_potential_bound(lambda r: r**3, r)
    assert not bad.passed and not bad.details["hypothesis_pass"]
    with pytest.raises(ConfigurationError):
        case1_potential_bound(lambda r: r, [1.0, 0.5, 2.0])
