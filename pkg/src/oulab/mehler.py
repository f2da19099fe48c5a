"""Closed-form Mehler kernels and residual checks of their identities.

The backward kernel centred at (x0, t0), evaluated at time t = t0 - τ, is

    M(x) = s^{-n/2} exp(-a |x - x0|² / 2),   s = 1 - e^{-2τ},  a = e^{-2τ}/s.

A non-zero centre is a coordinate translation: every identity below is
stated in the shifted variable ``y = x - x0``, including the operator
``L_γ = Δ - y·∇``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from oulab.errors import ConfigurationError, DomainError
from oulab.gaussian import GaussianGrid

TAU_MAX = 10.0


def kernel_variance(tau: float) -> float:
    """s = 1 - exp(-2τ), the per-axis variance of M(·,-τ) dγ."""
    return -math.expm1(-2.0 * tau)


def kernel_rate(tau: float) -> float:
    """a = e^{-2τ} / (1 - e^{-2τ}) = 1 / (e^{2τ} - 1)."""
    return 1.0 / math.expm1(2.0 * tau)


def matrix_factor(t: float) -> float:
    """e^{2t} / (1 - e^{2t}) at kernel time t < 0; equals kernel_rate(-t)."""
    if t >= 0:
        raise DomainError(f"kernel time must be negative, got {t}")
    return math.exp(2.0 * t) / -math.expm1(2.0 * t)


@dataclass(frozen=True, eq=False)
class KernelParams:
    dim: int
    tau: float
    center: np.ndarray | None = None
    center_time: float = 0.0
    tau_max: float = TAU_MAX

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.dim}")
        if not self.tau > 0:
            raise DomainError(f"τ must be positive, got {self.tau}")
        if self.tau > self.tau_max:
            raise DomainError(f"τ = {self.tau} exceeds τ_max = {self.tau_max}")
        c = np.zeros(self.dim) if self.center is None else np.asarray(self.center, dtype=float).reshape(-1)
        if c.size != self.dim:
            raise ConfigurationError(f"centre has {c.size} components, expected {self.dim}")
        object.__setattr__(self, "center", c)

    @property
    def eval_time(self) -> float:
        return self.center_time - self.tau

    def with_tau(self, tau: float) -> "KernelParams":
        return KernelParams(self.dim, tau, self.center, self.center_time, self.tau_max)


@dataclass(frozen=True, eq=False)
class KernelEval:
    value: float
    grad: np.ndarray
    hess: np.ndarray


def log_backward(points, tau: float, center=None) -> np.ndarray:
    """log M(x, -τ) at points of shape (N, n)."""
    if not tau > 0:
        raise DomainError(f"τ must be positive, got {tau}")
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if center is not None:
        x = x - np.asarray(center, dtype=float)
    n = x.shape[1]
    s = kernel_variance(tau)
    a = kernel_rate(tau)
    return -0.5 * n * math.log(s) - 0.5 * a * np.sum(x**2, axis=1)


def backward_values(points, tau: float, center=None) -> np.ndarray:
    return np.exp(log_backward(points, tau, center))


def mehler_forward(x, y, t: float) -> float:
    """Mehler kernel M_H(x, y, t), the fundamental solution of ∂_t u = L_γ u."""
    return math.exp(log_mehler_forward(x, y, t))


def log_mehler_forward(x, y, t: float) -> float:
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    s = -math.expm1(-2.0 * t)
    e1 = math.exp(-t)
    quad = (e1 * e1 * (x @ x + y @ y) - 2.0 * e1 * (x @ y)) / s
    return -0.5 * x.size * math.log(s) - 0.5 * quad


def mehler_backward(params: KernelParams, x) -> KernelEval:
    """Value, gradient and Hessian of the backward kernel at x."""
    d = np.asarray(x, dtype=float).reshape(-1) - params.center
    a = kernel_rate(params.tau)
    m = float(np.exp(log_backward(d[None, :], params.tau)[0]))
    grad = -a * d * m
    hess = m * (a * a * np.outer(d, d) - a * np.eye(params.dim))
    return KernelEval(m, grad, 0.5 * (hess + hess.T))


def ou_of_kernel(params: KernelParams, x) -> float:
    """L_γ M at (x, -τ) from the analytic derivatives (shifted coordinates)."""
    k = mehler_backward(params, x)
    d = np.asarray(x, dtype=float).reshape(-1) - params.center
    return float(np.trace(k.hess) - d @ k.grad)


def default_step(tau: float) -> float:
    return min(1e-4, tau / 10.0)


def backward_heat_residual(params: KernelParams, x, h: float | None = None) -> float:
    """|∂_t M + L_γ M| at (x, -τ), time derivative by centred difference."""
    h = default_step(params.tau) if h is None else h
    if not 0 < h <= params.tau / 2:
        raise ConfigurationError(f"step h = {h} must lie in (0, τ/2] with τ = {params.tau}")
    d = (np.asarray(x, dtype=float).reshape(-1) - params.center)[None, :]
    # t = -τ, so t + h is τ - h
    later = math.exp(log_backward(d, params.tau - h)[0])
    earlier = math.exp(log_backward(d, params.tau + h)[0])
    dt_m = (later - earlier) / (2.0 * h)
    return abs(dt_m + ou_of_kernel(params, x))


def heat_residual_order(params: KernelParams, x, h: float, levels: int = 3) -> float:
    """Observed convergence order of backward_heat_residual under step halving.

    Least-squares slope of log residual against log h over ``levels``
    successive halvings.
    """
    steps = h / 2.0 ** np.arange(levels)
    res = np.array([backward_heat_residual(params, x, float(k)) for k in steps])
    if np.any(res <= 0):
        return math.inf
    slope = np.polyfit(np.log(steps), np.log(res), 1)[0]
    return float(slope)


def matrix_identity_residual(params: KernelParams, x) -> np.ndarray:
    """∇_i∇_j M - ∇_i M ∇_j M / M + e^{2t}/(1-e^{2t}) M δ_ij at t = -τ."""
    k = mehler_backward(params, x)
    factor = matrix_factor(-params.tau)
    return k.hess - np.outer(k.grad, k.grad) / k.value + factor * k.value * np.eye(params.dim)


def kernel_mass(params: KernelParams, grid: GaussianGrid) -> float:
    """∫ M(·, -τ) dγ by importance sampling on the composite-measure grid.

    The unit grid is rescaled to N(0, s I) and the integrand is the density
    ratio M·γ / φ_s evaluated from the kernel formula in log space.
    """
    s = kernel_variance(params.tau)
    g = grid.rescaled(s)
    y = g.nodes
    r2 = np.sum(y**2, axis=1)
    n = params.dim
    log_gamma = -0.5 * n * math.log(2 * math.pi) - 0.5 * r2
    log_phi = -0.5 * n * math.log(2 * math.pi * s) - 0.5 * r2 / s
    ratio = np.exp(log_backward(y, params.tau) + log_gamma - log_phi)
    return g.integrate(ratio)


def forward_mass(x, t: float, grid: GaussianGrid) -> float:
    """∫ M_H(x, y, t) dγ(y) on a grid shifted to mean e^{-t}x, variance s."""
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    x = np.asarray(x, dtype=float).reshape(-1)
    s = -math.expm1(-2.0 * t)
    g = grid.rescaled(s)
    mean = math.exp(-t) * x
    ys = g.nodes + mean
    n = x.size
    out = np.empty(ys.shape[0])
    for i, y in enumerate(ys):
        log_gamma = -0.5 * n * math.log(2 * math.pi) - 0.5 * (y @ y)
        dev = y - mean
        log_phi = -0.5 * n * math.log(2 * math.pi * s) - 0.5 * (dev @ dev) / s
        out[i] = log_mehler_forward(x, y, t) + log_gamma - log_phi
    return g.integrate(np.exp(out))
