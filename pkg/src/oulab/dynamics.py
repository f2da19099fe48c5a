"""Ornstein-Uhlenbeck heat flow with lower-order terms on spectral fields.

The OU part is exact and diagonal in the Hermite basis. Drift ``b·∇u``,
zeroth-order ``c u`` and potential ``-V u`` are applied at quadrature nodes
and re-projected, inside a Strang splitting

    half OU step  ->  full lower-order step  ->  half OU step.

The module also carries closed-form solutions for inverse-square
potentials ``V = w(θ)/r²`` in three dimensions, used as converged
reference solutions where a polynomial basis cannot represent the
singularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import eval_genlaguerre, roots_legendre

from oulab.errors import ConfigurationError, DomainError, InstabilityError
from oulab.gaussian import (
    GaussianGrid,
    SpectralField,
    _apply_axes,
    apply_ou,
    build_gamma_grid,
    build_spherical_grid,
    gradient,
    normalized_hermite,
    projection_matrix,
    total_degree,
)

BLOWUP_FACTOR = 1e12

DriftFn = Callable[[np.ndarray, float], np.ndarray]
ScalarFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class LowerOrder:
    """Coefficients of b·∇u + c u.

    ``b(x, t)`` returns shape (N, n) and ``c(x, t)`` shape (N,); either may
    be None. ``L`` bounds sup(|b| + |c|/(1+|x|)).
    """

    b: DriftFn | None = None
    c: ScalarFn | None = None
    L: float = 0.0

    def bound_samples(self, points, t: float = 0.0) -> np.ndarray:
        """|b| + |c|/(1+|x|) at the given points."""
        x = np.atleast_2d(points)
        total = np.zeros(x.shape[0])
        if self.b is not None:
            total += np.linalg.norm(np.asarray(self.b(x, t), dtype=float).reshape(x.shape), axis=1)
        if self.c is not None:
            total += np.abs(np.asarray(self.c(x, t), dtype=float).reshape(-1)) / (1.0 + np.linalg.norm(x, axis=1))
        return total

    def check(self, grid, times: Sequence[float] = (0.0,), slack: float = 1e-12) -> float:
        """Largest sampled value of |b| + |c|/(1+|x|); raises if it exceeds L."""
        worst = max(float(np.max(self.bound_samples(grid.nodes, t))) for t in times)
        if worst > self.L * (1 + slack) + slack:
            raise ConfigurationError(
                f"lower-order bound violated: sampled sup(|b| + |c|/(1+|x|)) = {worst:.6g} > L = {self.L}"
            )
        return worst


def _unit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = np.linalg.norm(x, axis=1)
    safe = np.where(r > 0, r, 1.0)
    return r, x / safe[:, None]


@dataclass(frozen=True)
class Potential:
    """Time-independent potential V(x) = v(|x|) · w(x/|x|).

    ``v`` maps radii to values and ``w`` maps unit vectors (N, n) to values.
    For ``kind == "singular_radial"`` the profile is ``r^{-q}`` and
    ``epsilon`` sets the regularisation ``(r² + ε²)^{-q/2}`` used by the
    evolution; inequality checks use the unregularised values.
    """

    kind: str
    v: Callable[[np.ndarray], np.ndarray] | None = None
    w: Callable[[np.ndarray], np.ndarray] | None = None
    L: float = 1.0
    q: float = 2.0
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("smooth_radial", "singular_radial"):
            raise ConfigurationError(f"unknown potential kind {self.kind!r}")
        if self.kind == "smooth_radial" and self.v is None:
            raise ConfigurationError("smooth potential needs a radial profile v")
        if self.kind == "singular_radial" and not 0 < self.q <= 2:
            raise ConfigurationError(f"singularity exponent q must lie in (0, 2], got {self.q}")
        if self.epsilon < 0:
            raise ConfigurationError(f"regularisation length must be >= 0, got {self.epsilon}")

    def angular(self, unit: np.ndarray) -> np.ndarray:
        if self.w is None:
            return np.ones(unit.shape[0])
        return np.asarray(self.w(unit), dtype=float).reshape(-1)

    def radial(self, r: np.ndarray, regularized: bool = False) -> np.ndarray:
        if self.kind == "smooth_radial":
            return np.asarray(self.v(r), dtype=float).reshape(-1)
        if regularized:
            return (r**2 + self.epsilon**2) ** (-0.5 * self.q)
        with np.errstate(divide="ignore"):
            return r ** (-self.q)

    def values(self, points, regularized: bool = False) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        r, unit = _unit(x)
        return self.radial(r, regularized) * self.angular(unit)

    def check(self, dim: int, radii=None, sphere_points: int = 400, seed: int = 0) -> None:
        """Sampled hypotheses: case (i) growth bound or case (ii) structure."""
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(sphere_points, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        w = self.angular(dirs)
        if np.max(np.abs(w)) > self.L * (1 + 1e-12):
            raise ConfigurationError(f"angular profile exceeds its bound L = {self.L}")
        if self.kind == "smooth_radial":
            r = np.linspace(0.0, 10.0, 2001) if radii is None else np.asarray(radii, dtype=float)
            h = 1e-6
            v = self.radial(r)
            dv = (self.radial(r + h) - self.radial(np.abs(r - h))) / (2 * h)
            dv[r < h] = (self.radial(r[r < h] + h) - v[r < h]) / h
            bad = np.abs(r * dv + 2 * v) > 1 + r**2 + 1e-6
            if bad.any():
                r0 = float(r[np.flatnonzero(bad)[0]])
                raise ConfigurationError(f"radial profile violates |r v' + 2v| <= 1 + r² at r = {r0:.6g}")
        else:
            if dim < 3:
                raise ConfigurationError("singular potentials need dimension >= 3")
            if self.q < 2 and np.min(w) < 0:
                raise ConfigurationError("angular profile must be non-negative when q < 2")


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    degree: int
    nodes: int
    scheme: str = "strang_split"

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"time step must be positive, got {self.dt}")
        if self.nodes < self.degree + 1:
            raise ConfigurationError(
                f"need at least degree + 1 = {self.degree + 1} nodes per axis, got {self.nodes}"
            )
        if self.scheme != "strang_split":
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")


def ou_factors(dim: int, degree: int, t: float) -> np.ndarray:
    return np.exp(-total_degree(dim, degree) * t)


def evolve_pure(u0: SpectralField, t: float) -> SpectralField:
    """Exact OU flow: c_α -> c_α e^{-|α| t}.

    Negative durations are allowed; for a finite Hermite expansion the
    backward flow is exact as well.
    """
    return SpectralField(u0.coeffs * ou_factors(u0.dim, u0.max_degree, t), u0.time + t, u0.discarded)


class _NodalOps:
    """Cached per-axis evaluation/projection matrices for one configuration."""

    def __init__(self, dim: int, degree: int, m: int):
        self.dim, self.degree = dim, degree
        self.grid = build_gamma_grid(dim, m)
        self.basis = normalized_hermite(self.grid.axis_nodes, degree)
        self.proj = projection_matrix(self.grid, degree)
        self.full_proj = projection_matrix(self.grid, m - 1)
        self.points = self.grid.nodes
        self.shape = (m,) * dim
        self.grad_scale = np.sqrt(np.arange(1, degree + 1, dtype=float))

    def to_nodes(self, coeffs: np.ndarray) -> np.ndarray:
        return _apply_axes(coeffs, self.basis)

    def gradient_nodes(self, coeffs: np.ndarray) -> list[np.ndarray]:
        out = []
        for g in gradient(SpectralField(coeffs)):
            out.append(self.to_nodes(g.coeffs))
        return out

    def to_coeffs(self, values: np.ndarray) -> tuple[np.ndarray, float]:
        """Project nodal values; returns coefficients and discarded energy."""
        if self.full_proj.shape[0] == self.degree + 1:
            return _apply_axes(values, self.proj), 0.0
        full = _apply_axes(values, self.full_proj)
        keep = (slice(0, self.degree + 1),) * self.dim
        kept = full[keep]
        return np.array(kept), max(float(np.sum(full**2) - np.sum(kept**2)), 0.0)


def _step_count(t: float, dt: float) -> int:
    if t < 0:
        raise DomainError(f"duration must be non-negative, got {t}")
    return max(1, int(math.ceil(t / dt - 1e-9)))


class _Stepper:
    """Strang splitting driver shared by the drift and potential variants."""

    def __init__(self, dim: int, cfg: EvolutionConfig, middle):
        self.cfg = cfg
        self.ops = _NodalOps(dim, cfg.degree, cfg.nodes)
        self.middle = middle
        self.dim = dim

    def advance(self, u: SpectralField, t: float, reference_norm: float) -> SpectralField:
        if t == 0:
            return u
        n = _step_count(t, self.cfg.dt)
        h = t / n
        half = ou_factors(self.dim, self.cfg.degree, 0.5 * h)
        c = u.resized(self.cfg.degree).coeffs.copy()
        time = u.time
        lost = u.discarded
        for _ in range(n):
            c = c * half
            c, d = self.middle(self.ops, c, time, h)
            lost += d
            c = c * half
            time += h
            norm = float(np.sum(c**2))
            if not math.isfinite(norm) or norm > BLOWUP_FACTOR**2 * max(reference_norm, 1e-300):
                raise InstabilityError(
                    f"coefficient norm blew up at t = {time:.6g}; reduce dt (now {self.cfg.dt}) "
                    f"or the degree cutoff (now {self.cfg.degree})"
                )
        return SpectralField(c, time, lost)


def _drift_middle(lo: LowerOrder):
    def rhs(ops: _NodalOps, c: np.ndarray, t: float) -> tuple[np.ndarray, float]:
        vals = np.zeros(ops.shape)
        if lo.b is not None:
            b = np.asarray(lo.b(ops.points, t), dtype=float).reshape(-1, ops.dim)
            for axis, g in enumerate(ops.gradient_nodes(c)):
                vals += b[:, axis].reshape(ops.shape) * g
        if lo.c is not None:
            cv = np.asarray(lo.c(ops.points, t), dtype=float).reshape(ops.shape)
            vals += cv * ops.to_nodes(c)
        return ops.to_coeffs(vals)

    def middle(ops, c, t, h):
        # classical RK4 on the lower-order flow
        k1, d1 = rhs(ops, c, t)
        k2, d2 = rhs(ops, c + 0.5 * h * k1, t + 0.5 * h)
        k3, d3 = rhs(ops, c + 0.5 * h * k2, t + 0.5 * h)
        k4, d4 = rhs(ops, c + h * k3, t + h)
        # upper bound for the energy cut from the combined increment
        lost = (h / 6.0) ** 2 * (math.sqrt(d1) + 2 * math.sqrt(d2) + 2 * math.sqrt(d3) + math.sqrt(d4)) ** 2
        return c + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), lost

    return middle


def _potential_middle(V: Potential):
    cache: dict = {}

    def middle(ops, c, t, h):
        key = (id(ops), h)
        if key not in cache:
            vals = V.values(ops.points, regularized=True).reshape(ops.shape)
            cache.clear()
            cache[key] = np.exp(-h * vals)
        return ops.to_coeffs(cache[key] * ops.to_nodes(c))

    return middle


def _has_lower_order(lo: LowerOrder) -> bool:
    return lo.b is not None or lo.c is not None


def evolve_lower_order(u0: SpectralField, lo: LowerOrder, cfg: EvolutionConfig, t: float) -> SpectralField:
    """Solve ∂_t u = L_γ u + b·∇u + c u over a duration t.

    The duration is split into ceil(t/dt) equal steps.
    """
    if not _has_lower_order(lo):
        return evolve_pure(u0.resized(cfg.degree), t)
    stepper = _Stepper(u0.dim, cfg, _drift_middle(lo))
    return stepper.advance(u0, t, u0.norm_sq())


def evolve_potential(u0: SpectralField, V: Potential, cfg: EvolutionConfig, t: float) -> SpectralField:
    """Solve ∂_t u = L_γ u - V u over a duration t (singular V regularised)."""
    stepper = _Stepper(u0.dim, cfg, _potential_middle(V))
    return stepper.advance(u0, t, u0.norm_sq())


def evolve_snapshots(u0: SpectralField, times: Sequence[float], cfg: EvolutionConfig,
                     lo: LowerOrder | None = None, V: Potential | None = None) -> list[SpectralField]:
    """Snapshots at increasing absolute times, starting from u0.time.

    Each interval between consecutive requested times is covered by equal
    steps no longer than cfg.dt.
    """
    if lo is not None and V is not None:
        raise ConfigurationError("give either lower-order coefficients or a potential, not both")
    if V is not None:
        stepper = _Stepper(u0.dim, cfg, _potential_middle(V))
    elif lo is not None and _has_lower_order(lo):
        stepper = _Stepper(u0.dim, cfg, _drift_middle(lo))
    else:
        stepper = None
    ref = u0.norm_sq()
    out = []
    u = u0.resized(cfg.degree)
    for t in times:
        if t < u.time - 1e-14:
            raise ConfigurationError("snapshot times must be increasing and not before the initial time")
        span = max(t - u.time, 0.0)
        u = evolve_pure(u, span) if stepper is None else stepper.advance(u, span, ref)
        u = u.with_time(t)
        out.append(u)
    return out


def pde_residual(u_before: SpectralField, u_after: SpectralField, lo_or_V=None, dt: float | None = None,
                 grid: GaussianGrid | None = None) -> float:
    """Max nodal defect of (u_after - u_before)/dt - (L_γ + rhs) u_mid.

    ``u_mid`` is the average of both snapshots and the coefficients are
    evaluated at the midpoint time.
    """
    dt = u_after.time - u_before.time if dt is None else dt
    if not dt > 0:
        raise DomainError(f"time step must be positive, got {dt}")
    deg = max(u_before.max_degree, u_after.max_degree)
    a, b = u_before.resized(deg), u_after.resized(deg)
    grid = build_gamma_grid(a.dim, deg + 2) if grid is None else grid
    mid = SpectralField(0.5 * (a.coeffs + b.coeffs), a.time + 0.5 * dt)
    t_mid = mid.time
    x = grid.nodes
    lhs = (b.grid_values(grid) - a.grid_values(grid)) / dt
    rhs = apply_ou(mid).grid_values(grid)
    if isinstance(lo_or_V, LowerOrder):
        if lo_or_V.b is not None:
            bv = np.asarray(lo_or_V.b(x, t_mid), dtype=float).reshape(-1, a.dim)
            rhs = rhs + np.sum(bv * mid.grid_gradients(grid), axis=1)
        if lo_or_V.c is not None:
            rhs = rhs + np.asarray(lo_or_V.c(x, t_mid), dtype=float).reshape(-1) * mid.grid_values(grid)
    elif isinstance(lo_or_V, Potential):
        rhs = rhs - lo_or_V.values(x, regularized=True) * mid.grid_values(grid)
    elif lo_or_V is not None:
        raise ConfigurationError(f"expected LowerOrder, Potential or None, got {type(lo_or_V).__name__}")
    return float(np.max(np.abs(lhs - rhs)))


# -- inverse-square potentials: separated closed-form solutions --------------


def _legendre_norm(l: np.ndarray) -> np.ndarray:
    # P_l scaled to unit L² norm on the sphere (axisymmetric harmonics)
    return np.sqrt((2 * l + 1) / (4 * np.pi))


@dataclass(frozen=True, eq=False)
class AngularMode:
    """Eigenfunction Φ(z), z = cos θ, of -Δ_S + w on the unit sphere S²."""

    mu: float
    coeffs: np.ndarray  # Legendre-series coefficients of Φ in z

    def value(self, z) -> np.ndarray:
        return npleg.legval(z, self.coeffs)

    def derivative(self, z) -> np.ndarray:
        return npleg.legval(z, npleg.legder(self.coeffs))


def angular_mode(w_of_z: Callable[[np.ndarray], np.ndarray], lmax: int = 24, index: int = 0,
                 quad_points: int | None = None) -> AngularMode:
    """Galerkin eigenpair of -Δ_S + w(z) for an axisymmetric profile w.

    Uses normalised Legendre polynomials up to degree ``lmax``; the
    ``index``-th smallest eigenvalue is returned.
    """
    q = quad_points or 2 * lmax + 40
    z, wz = roots_legendre(q)
    l = np.arange(lmax + 1)
    P = np.stack([npleg.legval(z, np.eye(lmax + 1)[k]) for k in l], axis=1) * _legendre_norm(l)
    wvals = np.asarray(w_of_z(z), dtype=float).reshape(-1)
    A = 2 * np.pi * (P * (wz * wvals)[:, None]).T @ P
    A = 0.5 * (A + A.T) + np.diag(l * (l + 1.0))
    evals, evecs = np.linalg.eigh(A)
    vec = evecs[:, index]
    if vec[np.argmax(np.abs(vec))] < 0:
        vec = -vec
    return AngularMode(float(evals[index]), vec * _legendre_norm(l))


@dataclass(frozen=True, eq=False)
class InverseSquareSolution:
    """Exact solution of ∂_t u = L_γ u - (w(θ)/r²) u on R³.

        u(x, t) = Φ(cos θ) r^β Σ_j c_j e^{-(β+2j) t} L_j^{(β+1/2)}(r²/2)

    with β(β+1) = μ, μ the eigenvalue of Φ. Requires μ > -1/4 so that
    β > -1/2 and all kernel-weighted integrals are finite.
    """

    mode: AngularMode
    radial_coeffs: np.ndarray
    w_of_z: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    time: float = 0.0

    def __post_init__(self):
        if self.mode.mu <= -0.25:
            raise DomainError(f"angular eigenvalue {self.mode.mu} <= -1/4; β would be complex or below -1/2")
        object.__setattr__(self, "radial_coeffs", np.asarray(self.radial_coeffs, dtype=float))

    dim = 3

    @property
    def beta(self) -> float:
        return -0.5 + math.sqrt(0.25 + self.mode.mu)

    @property
    def laguerre_alpha(self) -> float:
        return self.beta + 0.5

    def at(self, t: float) -> "InverseSquareSolution":
        return InverseSquareSolution(self.mode, self.radial_coeffs, self.w_of_z, t)

    def potential(self, points) -> np.ndarray:
        x = np.atleast_2d(points)
        r2 = np.sum(x**2, axis=1)
        return np.asarray(self.w_of_z(x[:, 2] / np.sqrt(r2)), dtype=float) / r2

    def _radial(self, r: np.ndarray):
        beta, alpha = self.beta, self.laguerre_alpha
        rho = 0.5 * r**2
        f = np.zeros_like(r)
        df = np.zeros_like(r)
        for j, cj in enumerate(self.radial_coeffs):
            if cj == 0.0:
                continue
            amp = cj * math.exp(-(beta + 2 * j) * self.time)
            f += amp * eval_genlaguerre(j, alpha, rho)
            if j > 0:
                df -= amp * eval_genlaguerre(j - 1, alpha + 1, rho)
        R = r**beta * f
        dR = beta * r ** (beta - 1) * f + r ** (beta + 1) * df
        return R, dR

    def values(self, points) -> np.ndarray:
        x = np.atleast_2d(points)
        r = np.linalg.norm(x, axis=1)
        R, _ = self._radial(r)
        return R * self.mode.value(x[:, 2] / r)

    def gradients(self, points) -> np.ndarray:
        x = np.atleast_2d(points)
        r = np.linalg.norm(x, axis=1)
        z = x[:, 2] / r
        R, dR = self._radial(r)
        phi, dphi = self.mode.value(z), self.mode.derivative(z)
        unit = x / r[:, None]
        grad_z = (np.eye(3)[2][None, :] - z[:, None] * unit) / r[:, None]
        return (dR * phi)[:, None] * unit + (R * dphi)[:, None] * grad_z

    def grid_values(self, grid) -> np.ndarray:
        return self.values(grid.nodes)

    def grid_gradients(self, grid) -> np.ndarray:
        return self.gradients(grid.nodes)

    def norm_sq(self) -> float:
        g = self.quadrature_grid()
        return g.integrate(self.values(g.nodes) ** 2)

    def quadrature_grid(self, extra: int = 4):
        """Spherical rule exact for the weighted integrals of this solution."""
        lmax = len(self.mode.coeffs) - 1
        J = len(self.radial_coeffs)
        return build_spherical_grid(J + 2 + extra, lmax + 2 + extra, 8, "laguerre",
                                    round(self.beta - 0.5, 15))


def inverse_square_solution(w_of_z, radial_coeffs, lmax: int = 24, time: float = 0.0) -> InverseSquareSolution:
    return InverseSquareSolution(angular_mode(w_of_z, lmax), np.asarray(radial_coeffs, dtype=float), w_of_z, time)
