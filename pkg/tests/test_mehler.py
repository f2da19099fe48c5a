import math

import mpmath as mp
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from oulab.errors import ConfigurationError, DomainError
from oulab.gaussian import build_gamma_grid
from oulab.mehler import (
    KernelParams,
    backward_heat_residual,
    forward_mass,
    heat_residual_order,
    kernel_mass,
    kernel_variance,
    matrix_factor,
    matrix_identity_residual,
    mehler_backward,
    mehler_forward,
)


def backward_oracle(x: float, tau: float) -> float:
    """1-D backward kernel evaluated in 40-digit arithmetic."""
    mp.mp.dps = 40
    s = 1 - mp.e ** (-2 * mp.mpf(tau))
    return float(s ** mp.mpf(-0.5) * mp.e ** (-(mp.e ** (-2 * mp.mpf(tau)) / s) * mp.mpf(x) ** 2 / 2))


def test_forward_value_at_half_log_two():
    assert mehler_forward([0.0], [0.0], math.log(2) / 2) == pytest.approx(math.sqrt(2), rel=1e-14)


def test_forward_symmetry_and_long_time_limit():
    rng = np.random.default_rng(3)
    for _ in range(10):
        x, y = rng.normal(size=2), rng.normal(size=2)
        t = rng.uniform(0.05, 3)
        assert mehler_forward(x, y, t) == pytest.approx(mehler_forward(y, x, t), rel=1e-14)
    assert mehler_forward([0.7], [-1.2], 40.0) == pytest.approx(1.0, abs=1e-12)


def test_forward_rejects_non_positive_time():
    with pytest.raises(DomainError):
        mehler_forward([0.0], [0.0], 0.0)


def test_backward_examples():
    k0 = mehler_backward(KernelParams(1, 0.05), [0.0])
    assert k0.value == pytest.approx(backward_oracle(0.0, 0.05), rel=1e-13)
    assert k0.value == pytest.approx(3.24166, abs=5e-6)
    assert np.all(k0.grad == 0)
    k1 = mehler_backward(KernelParams(1, 0.05), [1.0])
    assert k1.value == pytest.approx(backward_oracle(1.0, 0.05), rel=1e-13)
    assert k1.value == pytest.approx(0.0279292, rel=1e-5)


def test_gradient_vanishes_at_centre():
    p = KernelParams(3, 0.3, center=[0.2, -0.1, 0.5])
    assert np.allclose(mehler_backward(p, [0.2, -0.1, 0.5]).grad, 0.0)


def test_hessian_symmetric_and_value_positive():
    rng = np.random.default_rng(1)
    p = KernelParams(3, 0.2)
    k = mehler_backward(p, rng.normal(size=3))
    assert k.value > 0
    assert np.max(np.abs(k.hess - k.hess.T)) <= 1e-12 * np.max(np.abs(k.hess))


@given(st.integers(1, 3), st.floats(0.05, 2.0), st.integers(0, 2**31 - 1))
def test_analytic_derivatives_match_finite_differences(dim, tau, seed):
    x = np.random.default_rng(seed).normal(size=dim) * 0.7
    p = KernelParams(dim, tau)
    k = mehler_backward(p, x)
    h = 1e-4
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        plus, minus = mehler_backward(p, x + e), mehler_backward(p, x - e)
        scale = max(np.max(np.abs(k.grad)), k.value * 1e-3)
        assert abs((plus.value - minus.value) / (2 * h) - k.grad[i]) <= 1e-6 * scale
        hscale = max(np.max(np.abs(k.hess)), k.value * 1e-3)
        assert np.max(np.abs((plus.grad - minus.grad) / (2 * h) - k.hess[i])) <= 1e-6 * hscale


def test_heat_residual_small_and_second_order():
    p = KernelParams(1, 0.1)
    M = mehler_backward(p, [0.3]).value
    assert backward_heat_residual(p, [0.3], 1e-4) <= 1e-6 * M
    r1 = backward_heat_residual(p, [0.3], 4e-3)
    r2 = backward_heat_residual(p, [0.3], 2e-3)
    assert r1 / r2 == pytest.approx(4.0, rel=0.05)
    assert heat_residual_order(p, [0.3], 4e-3) == pytest.approx(2.0, abs=0.05)


def test_heat_residual_at_centre():
    for tau in (0.05, 0.5, 2.0):
        p = KernelParams(2, tau)
        M = mehler_backward(p, [0.0, 0.0]).value
        assert backward_heat_residual(p, [0.0, 0.0], tau / 1000) <= 1e-4 * M
        assert heat_residual_order(p, [0.0, 0.0], tau / 20) > 1.9


def test_heat_residual_step_validation():
    p = KernelParams(1, 0.1)
    with pytest.raises(ConfigurationError):
        backward_heat_residual(p, [0.0], 0.06)
    with pytest.raises(ConfigurationError):
        backward_heat_residual(p, [0.0], 0.0)


def test_params_validation():
    with pytest.raises(DomainError):
        KernelParams(1, 0.0)
    with pytest.raises(DomainError):
        KernelParams(1, 11.0)
    with pytest.raises(ConfigurationError):
        KernelParams(4, 0.1)
    with pytest.raises(ConfigurationError):
        KernelParams(2, 0.1, center=[0.0])


def test_matrix_identity_against_symbolic_kernel():
    x, t = sp.symbols("x t", real=True)
    M = (1 - sp.exp(2 * t)) ** sp.Rational(-1, 2) * sp.exp(-sp.exp(2 * t) * x**2 / (2 * (1 - sp.exp(2 * t))))
    expr = sp.diff(M, x, 2) - sp.diff(M, x) ** 2 / M + sp.exp(2 * t) / (1 - sp.exp(2 * t)) * M
    assert abs(float(expr.subs({x: 0, t: -0.2}))) < 1e-12
    assert abs(float(expr.subs({x: 0.8, t: -0.2}))) < 1e-12
    p = KernelParams(1, 0.2)
    assert abs(matrix_identity_residual(p, [0.0])[0, 0]) <= 1e-10 * mehler_backward(p, [0.0]).value


def test_matrix_identity_two_dimensions():
    rng = np.random.default_rng(5)
    p = KernelParams(2, 0.05)
    for _ in range(5):
        x = rng.normal(size=2)
        M = mehler_backward(p, x).value
        assert np.max(np.abs(matrix_identity_residual(p, x))) <= 1e-10 * M


def test_matrix_factor_sign():
    # e^{2t}/(1-e^{2t}) at t = -ln2/2 is (1/2)/(1/2) = +1
    assert matrix_factor(-math.log(2) / 2) == pytest.approx(1.0, rel=1e-14)


def test_kernel_mass_examples():
    assert kernel_mass(KernelParams(1, 0.05), build_gamma_grid(1, 8)) == pytest.approx(1.0, abs=1e-10)
    assert kernel_mass(KernelParams(3, 0.1), build_gamma_grid(3, 6)) == pytest.approx(1.0, abs=1e-10)
    assert forward_mass([0.5], 0.3, build_gamma_grid(1, 12)) == pytest.approx(1.0, abs=1e-10)


@given(st.floats(1e-3, 10.0), st.integers(1, 3))
def test_kernel_mass_property(tau, dim):
    assert kernel_mass(KernelParams(dim, tau), build_gamma_grid(dim, 4)) == pytest.approx(1.0, abs=1e-10)


def test_composite_measure_second_moment_on_unit_grid():
    # independent of the rescaling shortcut: integrate x² M on a fine dγ grid
    tau = 0.5
    grid = build_gamma_grid(1, 120)
    p = KernelParams(1, tau)
    M = np.array([mehler_backward(p, x).value for x in grid.nodes])
    assert grid.integrate(M) == pytest.approx(1.0, abs=1e-12)
    assert grid.integrate(grid.nodes[:, 0] ** 2 * M) == pytest.approx(kernel_variance(tau), abs=1e-12)
