"""Hardy-type inequalities, the vanishing-order envelope and the radial
potential bound, each checked directly by quadrature.

Kernel-weighted integrals ∫ f M(·,-τ) dγ are Gaussian expectations under
N(0, s I), s = 1 - e^{-2τ}, and run on rescaled unit rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from oulab.errors import ConfigurationError, DomainError
from oulab.frequency import compute_T0
from oulab.gaussian import GaussianGrid, GrowthClass, SpectralField, build_gamma_grid, build_spherical_grid
from oulab.mehler import kernel_variance
from oulab.reports import CheckReport

SLACK = 1e-9
_fault_hooks: set[str] = set()


def inject_fault(name: str | None) -> None:
    """Test hook: ``"hardy_rhs_sign"`` flips the sign of every Hardy RHS."""
    _fault_hooks.clear()
    if name:
        _fault_hooks.add(name)


def _rhs_sign() -> float:
    return -1.0 if "hardy_rhs_sign" in _fault_hooks else 1.0


def effective_degree(u: SpectralField) -> int:
    """Largest total degree |α| carrying a nonzero coefficient."""
    idx = np.argwhere(u.coeffs != 0)
    return int(idx.sum(axis=1).max()) if idx.size else 0


def _quadratic_grid(u: SpectralField) -> GaussianGrid:
    return build_gamma_grid(u.dim, max(u.max_degree + 3, 4))


def _singular_grid(u: SpectralField):
    p = effective_degree(u)
    radial = p + 2 + (p % 2)
    return build_spherical_grid(radial, p + 2, 2 * p + 2, "hermite")


def _masses(u, g) -> tuple[np.ndarray, np.ndarray, float, float]:
    vals = u.grid_values(g)
    grads = u.grid_gradients(g)
    return vals, grads, g.integrate(vals**2), g.integrate(np.sum(grads**2, axis=1))


def _report(check, anchor, inputs, lhs, rhs, details) -> CheckReport:
    slack = SLACK * (abs(lhs) + abs(rhs))
    passed = lhs <= rhs * (1 + 1e-10) + slack
    return CheckReport(check, anchor, inputs, lhs, rhs, bool(passed), {**details, "slack": slack})


def hardy_quadratic(u: SpectralField, tau: float, grid: GaussianGrid | None = None) -> CheckReport:
    """∫|x|² u² M dγ <= (e^{2τ} - 1) (n ∫u² M dγ + ∫|∇u|² M dγ)."""
    if not tau > 0:
        raise DomainError(f"τ must be positive, got {tau}")
    n = u.dim
    g = (grid or _quadratic_grid(u)).rescaled(kernel_variance(tau))
    vals, _, H, I = _masses(u, g)
    lhs = g.integrate(np.sum(g.nodes**2, axis=1) * vals**2)
    rhs = _rhs_sign() * math.expm1(2 * tau) * (n * H + I)
    return _report("hardy_quadratic", "hardy-quadratic-weight", {"tau": tau, "dim": n},
                   lhs, rhs, {"H": H, "I": I})


def hardy_quadratic_identity(u: SpectralField, tau: float, grid: GaussianGrid | None = None) -> tuple[float, float]:
    """Both sides of ∫|x|²u²M dγ = (e^{2τ}-1) ∫u(2x·∇u + nu - |x|²u) M dγ."""
    n = u.dim
    g = (grid or _quadratic_grid(u)).rescaled(kernel_variance(tau))
    vals, grads, _, _ = _masses(u, g)
    r2 = np.sum(g.nodes**2, axis=1)
    lhs = g.integrate(r2 * vals**2)
    inner = 2 * np.sum(g.nodes * grads, axis=1) + n * vals - r2 * vals
    return lhs, math.expm1(2 * tau) * g.integrate(vals * inner)


def hardy_singular(u, tau: float, grid=None) -> CheckReport:
    """∫u²/|x|² M dγ <= 2/((n-2)s) ∫u² M dγ + 4/(n-2)² ∫|∇u|² M dγ, n >= 3.

    The default grid integrates polynomial u exactly, singular weight included.
    """
    n = u.dim
    if n < 3:
        raise DomainError(f"the inverse-square Hardy inequality needs n >= 3, got n = {n}")
    if not tau > 0:
        raise DomainError(f"τ must be positive, got {tau}")
    s = kernel_variance(tau)
    g = (grid or _singular_grid(u)).rescaled(s)
    vals, _, H, I = _masses(u, g)
    r2 = np.sum(g.nodes**2, axis=1)
    if np.any(r2 == 0):
        raise DomainError("a quadrature node sits at the origin")
    lhs = g.integrate(vals**2 / r2)
    rhs = _rhs_sign() * (2.0 / ((n - 2) * s) * H + 4.0 / (n - 2) ** 2 * I)
    return _report("hardy_singular", "hardy-inverse-square", {"tau": tau, "dim": n},
                   lhs, rhs, {"H": H, "I": I})


# -- vanishing-order envelope ---------------------------------------------------


def g_theta(theta, n: int, K: int):
    return -(n + 4 * K) * np.log(theta) - 1.0 / (16.0 * theta)


def log_c_nk(n: int, K: int) -> float:
    """log C_{n,K} = max_θ g(θ), attained at θ = 1/(16(n+4K))."""
    if n + 4 * K <= 0:
        raise DomainError("n + 4K must be positive")
    return float(g_theta(1.0 / (16.0 * (n + 4 * K)), n, K))


@dataclass(frozen=True)
class VanishingProbe:
    """v(x, t) with |v| <= C0(|x|^{2K} + |t|^K) near the origin and G(A, B) growth."""

    K: int
    C0: float
    T1: float
    v: Callable[[np.ndarray, float], np.ndarray]
    growth: GrowthClass
    dim: int = 1

    def __post_init__(self):
        if self.K < 0 or int(self.K) != self.K:
            raise ConfigurationError(f"K must be a non-negative integer, got {self.K}")
        if not (self.C0 > 0 and self.T1 > 0):
            raise ConfigurationError("C0 and T1 must be positive")

    @property
    def T0(self) -> float:
        return compute_T0(self.growth.A, self.T1).value

    def B0(self) -> float:
        """sup of B(t) over [-T0, 0], sampled."""
        return max(self.growth.bound_at(t) for t in np.linspace(-self.T0, 0.0, 65))

    def C1(self) -> float:
        return 2 * self.C0**2 + math.exp(log_c_nk(self.dim, self.K)) * self.B0() ** 2

    def local_bound_ratio(self, samples: int = 24, seed: int = 0) -> float:
        """max |v| / (C0(|x|^{2K} + |t|^K)) on a mesh of the set |x|² + |t| <= T1."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for frac in np.linspace(0.05, 1.0, samples):
            for share in np.linspace(0.0, 1.0, 9):
                r = math.sqrt(share * frac * self.T1)
                t = -(1 - share) * frac * self.T1
                d = rng.normal(size=(8, self.dim))
                d /= np.linalg.norm(d, axis=1, keepdims=True)
                x = r * d
                bound = self.C0 * (r ** (2 * self.K) + abs(t) ** self.K)
                val = np.max(np.abs(np.asarray(self.v(x, t), dtype=float)))
                worst = max(worst, val / bound if bound > 0 else (math.inf if val > 0 else 0.0))
        return worst


def polynomial_probe(K: int, dim: int = 1, A: float = 1.0, T1: float = 1.0) -> VanishingProbe:
    """v = (|x|² + |t|)^K with C0 = 2^{K-1} and the tight growth constant.

    max_y (y + |t|)^K e^{-Ay} over y >= 0, |t| <= T0 is (K/A)^K e^{AT0 - K}
    once K/A >= T0.
    """
    T0 = compute_T0(A, T1).value
    if K == 0:
        B0 = 1.0
    else:
        B0 = (K / A) ** K * math.exp(A * T0 - K) if K / A >= T0 else T0**K
    C0 = max(2.0 ** (K - 1), 1.0)

    def v(x, t):
        return (np.sum(np.atleast_2d(x) ** 2, axis=1) + abs(t)) ** K

    return VanishingProbe(K, C0, T1, v, GrowthClass(A, B0), dim)


def probe_integral(probe: VanishingProbe, tau: float, grid: GaussianGrid) -> float:
    """G(τ) = ∫ v²(·,-τ) M(·,-τ) dγ."""
    g = grid.rescaled(kernel_variance(tau))
    return g.integrate(np.asarray(probe.v(g.nodes, -tau), dtype=float) ** 2)


def fit_slope(tau, G, decades: float = 1.0) -> float:
    """Least-squares slope of log G against log τ over the lowest decade."""
    tau, G = np.asarray(tau, dtype=float), np.asarray(G, dtype=float)
    mask = tau <= tau[0] * 10**decades * (1 + 1e-12)
    if mask.sum() < 2:
        mask[:2] = True
    return float(np.polyfit(np.log(tau[mask]), np.log(G[mask]), 1)[0])


def vanishing_envelope(probe: VanishingProbe, tau_grid, grid: GaussianGrid | None = None,
                       slope_tol: float = 0.1) -> CheckReport:
    """G(τ) <= C1 τ^{2K} on the grid and log-log slope >= 2K - slope_tol."""
    tau = np.asarray(tau_grid, dtype=float)
    T0 = probe.T0
    if tau.size < 2 or tau[0] <= 0 or tau[-1] >= T0:
        raise ConfigurationError(f"τ-grid must lie in (0, T0) with T0 = {T0:.6g}")
    grid = grid or build_gamma_grid(probe.dim, 2 * probe.K + 4)
    G = np.array([probe_integral(probe, t, grid) for t in tau])
    K = probe.K
    C1 = probe.C1()
    envelope = C1 * tau ** (2 * K)
    ratio = G / envelope
    zero = bool(np.all(G == 0))
    slope = math.inf if zero else fit_slope(tau, G)
    slope_ok = zero or slope >= 2 * K - slope_tol
    bound_ok = bool(np.all(G <= envelope * (1 + 1e-12)))
    # diagnostic split at |x| = τ^{1/4}
    inner = []
    for t in tau:
        g = grid.rescaled(kernel_variance(t))
        vals = np.asarray(probe.v(g.nodes, -t), dtype=float) ** 2
        inside = np.sum(g.nodes**2, axis=1) <= math.sqrt(t)
        inner.append(g.integrate(np.where(inside, vals, 0.0)))
    inner = np.array(inner)
    return CheckReport(
        "vanishing_envelope", "vanishing-order-envelope",
        {"K": K, "C0": probe.C0, "A": probe.growth.A, "T1": probe.T1, "dim": probe.dim,
         "B0": probe.B0(), "C1": C1, "log_C_nK": log_c_nk(probe.dim, K), "slope_tol": slope_tol},
        float(np.max(ratio)) if not zero else 0.0, 1.0, bool(slope_ok and bound_ok),
        {"slope": slope, "slope_pass": slope_ok, "bound_pass": bound_ok, "G": G.tolist(),
         "split_inner": inner.tolist(), "split_outer": (G - inner).tolist(),
         "local_bound_ratio": probe.local_bound_ratio()},
    )


# -- case (i): bound on the radial profile --------------------------------------


def case1_potential_bound(v: Callable[[np.ndarray], np.ndarray], r_grid,
                          dv: Callable[[np.ndarray], np.ndarray] | None = None, h: float = 1e-6) -> CheckReport:
    """From |r v' + 2v| <= 1 + r², bound the growth of r² v.

    Checks the hypothesis at each radius, the product rule (r²v)' = r(rv' + 2v)
    against finite differences of r²v, and
    |r²v(r) - r0²v(r0)| <= (r² - r0²)/2 + (r⁴ - r0⁴)/4.
    The implied c0 is max(0, max_r r²|v| - r²/2 - r⁴/4).
    """
    r = np.asarray(r_grid, dtype=float)
    if r.ndim != 1 or r.size < 3 or np.any(np.diff(r) <= 0) or r[0] < 0:
        raise ConfigurationError("radial grid must be increasing, non-negative, with at least 3 points")
    vals = np.asarray(v(r), dtype=float)
    if dv is None:
        lo = np.maximum(r - h, 0.0)
        dvals = (np.asarray(v(r + h), dtype=float) - np.asarray(v(lo), dtype=float)) / (r + h - lo)
    else:
        dvals = np.asarray(dv(r), dtype=float)
    hyp = r * dvals + 2 * vals
    hyp_ok = np.abs(hyp) <= (1 + r**2) * (1 + 1e-9)
    product = np.gradient(r**2 * vals, r, edge_order=2)
    product_err = float(np.max(np.abs(product - r * hyp) / (1 + np.abs(r * hyp))))
    r0, v0 = r[0], vals[0]
    lhs = np.abs(r**2 * vals - r0**2 * v0)
    rhs = 0.5 * (r**2 - r0**2) + 0.25 * (r**4 - r0**4)
    bound_ok = lhs <= rhs * (1 + 1e-9) + 1e-12
    c0 = max(0.0, float(np.max(r**2 * np.abs(vals) - 0.5 * r**2 - 0.25 * r**4)))
    bad = np.flatnonzero(~hyp_ok)
    worst = int(np.argmax(lhs - rhs))
    return CheckReport(
        "case1_potential_bound", "radial-potential-growth",
        {"r_min": float(r[0]), "r_max": float(r[-1]), "points": int(r.size)},
        float(lhs[worst]), float(rhs[worst]), bool(hyp_ok.all() and bound_ok.all()),
        {"hypothesis_pass": bool(hyp_ok.all()), "hypothesis_violations": r[bad].tolist(),
         "hypothesis_values": hyp.tolist(), "product_rule_error": product_err,
         "bound_pass": bool(bound_ok.all()), "implied_c0": c0},
    )
