"""Gaussian measure, Hermite spectral fields and quadrature grids.

Everything uses the probabilists' convention: the reference measure is
``dγ = (2π)^{-n/2} exp(-|x|²/2) dx`` and the orthonormal basis is
``h_k = He_k / sqrt(k!)`` with tensor products ``h_α`` in several dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import roots_genlaguerre, roots_legendre

from oulab.errors import ConfigurationError, DomainError, EvaluationError

MAX_DIM = 3
MAX_POINTS = 256


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def hermite_gauss_rule(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the m-point rule for the standard normal.

    Nodes are eigenvalues of the symmetric Jacobi matrix with off-diagonal
    ``sqrt(k)``, polished by one Newton step on h_m. Weights come from the
    Christoffel function ``1 / sum_k h_k(x)^2`` rather than from squared
    eigenvector components, which underflow in the tails for large m. The
    rule is symmetrised exactly and the weights renormalised to sum to one.
    """
    if m < 1:
        raise ConfigurationError(f"node count must be positive, got {m}")
    if m == 1:
        return np.zeros(1), np.ones(1)
    off = np.sqrt(np.arange(1, m, dtype=float))
    nodes = eigh_tridiagonal(np.zeros(m), off, eigvals_only=True)
    basis = normalized_hermite(nodes, m)
    nodes = nodes - basis[:, m] / (math.sqrt(m) * basis[:, m - 1])
    nodes = 0.5 * (nodes - nodes[::-1])
    if m % 2:
        nodes[m // 2] = 0.0
    weights = 1.0 / np.sum(normalized_hermite(nodes, m - 1) ** 2, axis=1)
    weights = 0.5 * (weights + weights[::-1])
    return nodes, weights / weights.sum()


def normalized_hermite(x, degree: int) -> np.ndarray:
    """Values of h_0..h_degree at x, shape (len(x), degree + 1)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    out = np.empty((x.size, degree + 1))
    out[:, 0] = 1.0
    if degree >= 1:
        out[:, 1] = x
    for k in range(1, degree):
        out[:, k + 1] = (x * out[:, k] - math.sqrt(k) * out[:, k - 1]) / math.sqrt(k + 1)
    return out


def gaussian_moment(powers: Sequence[int], variance: float = 1.0) -> float:
    """E[x^powers] for a centred Gaussian with the given per-axis variance."""
    total = 1.0
    for p in powers:
        if p % 2:
            return 0.0
        total *= math.prod(range(p - 1, 0, -2)) * variance ** (p // 2)
    return total


def _mode_product(tensor: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(mat, tensor, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def _apply_axes(tensor: np.ndarray, mat: np.ndarray) -> np.ndarray:
    for axis in range(tensor.ndim):
        tensor = _mode_product(tensor, mat, axis)
    return tensor


@dataclass(frozen=True, eq=False)
class GaussianGrid:
    """Tensor Gauss-Hermite rule for a centred Gaussian N(0, scale² I).

    ``scale == 1`` is the reference measure dγ. Rescaled copies integrate the
    composite measure M(·, -τ) dγ, which is itself N(0, s I) with
    ``s = 1 - exp(-2τ)``.
    """

    dim: int
    points_per_axis: int
    axis_nodes: np.ndarray
    axis_weights: np.ndarray
    scale: float = 1.0
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        axes = np.meshgrid(*([self.axis_nodes] * self.dim), indexing="ij")
        nodes = np.stack([a.reshape(-1) for a in axes], axis=1)
        w = self.axis_weights
        for _ in range(self.dim - 1):
            w = np.multiply.outer(w, self.axis_weights)
        object.__setattr__(self, "nodes", _frozen(nodes))
        object.__setattr__(self, "weights", _frozen(np.reshape(w, -1)))

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    def rescaled(self, variance: float) -> "GaussianGrid":
        """Same rule for N(0, variance · I)."""
        if variance <= 0:
            raise DomainError(f"variance must be positive, got {variance}")
        sigma = math.sqrt(variance)
        return GaussianGrid(
            self.dim, self.points_per_axis, _frozen(self.axis_nodes / self.scale * sigma),
            self.axis_weights, sigma,
        )

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * np.asarray(values, dtype=float).reshape(-1)))


@lru_cache(maxsize=64)
def build_gamma_grid(dim: int, m: int) -> GaussianGrid:
    """Tensor grid with m points per axis for dγ on R^dim."""
    if dim not in (1, 2, 3):
        raise ConfigurationError(f"dimension must be 1, 2 or 3, got {dim}")
    if not 2 <= m <= MAX_POINTS:
        raise ConfigurationError(f"points per axis must lie in [2, {MAX_POINTS}], got {m}")
    nodes, weights = hermite_gauss_rule(m)
    return GaussianGrid(dim, m, _frozen(nodes), _frozen(weights), 1.0)


@dataclass(frozen=True, eq=False)
class SphericalGrid:
    """Product rule in spherical coordinates on R³ for N(0, scale² I).

    With ``radial="hermite"`` the radius runs over the whole line (each ray
    is paired with its antipode), so integrands ``p(x)`` and ``p(x)/|x|²``
    with polynomial p are both integrated exactly. With ``radial="laguerre"``
    the radial rule carries the weight ``ρ^alpha`` in ``ρ = |x|²/2``, which
    makes ``|x|^(2alpha-1) · p(|x|²) · (angular polynomial)`` exact.
    """

    nodes: np.ndarray
    weights: np.ndarray
    radial: str
    alpha: float
    scale: float = 1.0
    dim: int = 3

    @property
    def size(self) -> int:
        return self.weights.size

    def rescaled(self, variance: float) -> "SphericalGrid":
        if variance <= 0:
            raise DomainError(f"variance must be positive, got {variance}")
        sigma = math.sqrt(variance)
        return SphericalGrid(
            _frozen(self.nodes / self.scale * sigma), self.weights, self.radial, self.alpha, sigma
        )

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * np.asarray(values, dtype=float).reshape(-1)))


def _sphere_rule(polar: int, azimuth: int):
    z, wz = roots_legendre(polar)
    phi = 2.0 * np.pi * (np.arange(azimuth) + 0.5) / azimuth
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    rho = np.sqrt(1.0 - zz**2)
    dirs = np.stack([rho * np.cos(pp), rho * np.sin(pp), zz], axis=-1).reshape(-1, 3)
    w = np.repeat(wz, azimuth) * (2.0 * np.pi / azimuth)
    return dirs, w


@lru_cache(maxsize=32)
def build_spherical_grid(
    radial_points: int,
    polar_points: int,
    azimuth_points: int,
    radial: str = "hermite",
    alpha: float = 0.5,
) -> SphericalGrid:
    """Spherical product rule for dγ on R³ (see :class:`SphericalGrid`)."""
    if min(radial_points, polar_points, azimuth_points) < 1:
        raise ConfigurationError("spherical rule sizes must be positive")
    dirs, wdir = _sphere_rule(polar_points, azimuth_points)
    if radial == "hermite":
        if radial_points % 2:
            # an odd rule puts a node at r = 0, where p/|x|² is undefined
            raise ConfigurationError(f"Hermite radial rule needs an even point count, got {radial_points}")
        xi, wxi = hermite_gauss_rule(radial_points)
        r, wr = xi, wxi * xi**2 / (4.0 * np.pi)
    elif radial == "laguerre":
        if alpha <= -1:
            raise ConfigurationError(f"Laguerre exponent must exceed -1, got {alpha}")
        rho, lam = roots_genlaguerre(radial_points, alpha)
        r = np.sqrt(2.0 * rho)
        wr = lam * rho ** (0.5 - alpha) / (2.0 * np.pi**1.5)
    else:
        raise ConfigurationError(f"unknown radial rule {radial!r}")
    nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    weights = np.multiply.outer(wr, wdir).reshape(-1)
    return SphericalGrid(_frozen(nodes), _frozen(weights), radial, float(alpha))


def integrate_gamma(f: Callable[[np.ndarray], np.ndarray], grid) -> float:
    """Quadrature of f against the grid's measure; f maps (N, dim) -> (N,)."""
    values = np.asarray(f(grid.nodes), dtype=float).reshape(-1)
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        node = tuple(float(v) for v in grid.nodes[i])
        raise EvaluationError(f"integrand is not finite at node {node}", node=node)
    return grid.integrate(values)


def total_degree(dim: int, degree: int) -> np.ndarray:
    """|α| for every multi-index of a (degree+1)^dim coefficient tensor."""
    k = np.arange(degree + 1)
    out = np.zeros((degree + 1,) * dim, dtype=int)
    for axis in range(dim):
        shape = [1] * dim
        shape[axis] = degree + 1
        out = out + k.reshape(shape)
    return out


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Function of x stored as coefficients in the orthonormal basis h_α.

    ``coeffs`` has shape ``(D+1,) * dim``; ``time`` stamps the snapshot and
    ``discarded`` accumulates the squared coefficient mass dropped by
    degree truncation while the field was being evolved.
    """

    coeffs: np.ndarray
    time: float = 0.0
    discarded: float = 0.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim < 1 or c.ndim > MAX_DIM or len(set(c.shape)) != 1:
            raise ConfigurationError(f"coefficients must be a cube of dimension 1..3, got {c.shape}")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, dim: int, degree: int, time: float = 0.0) -> "SpectralField":
        return cls(np.zeros((degree + 1,) * dim), time)

    @classmethod
    def mode(cls, index: Sequence[int], degree: int | None = None, coeff: float = 1.0,
             time: float = 0.0) -> "SpectralField":
        """coeff · h_index; note h_k = He_k / sqrt(k!)."""
        index = tuple(int(i) for i in index)
        degree = max(index) if degree is None else degree
        c = np.zeros((degree + 1,) * len(index))
        c[index] = coeff
        return cls(c, time)

    @property
    def dim(self) -> int:
        return self.coeffs.ndim

    @property
    def max_degree(self) -> int:
        return self.coeffs.shape[0] - 1

    def norm_sq(self) -> float:
        """∫ u² dγ by Parseval."""
        return float(np.sum(self.coeffs**2))

    def with_time(self, time: float) -> "SpectralField":
        return SpectralField(self.coeffs, time, self.discarded)

    def resized(self, degree: int) -> "SpectralField":
        """Pad with zeros or truncate to the given per-axis degree."""
        old = self.max_degree
        if degree == old:
            return self
        if degree > old:
            c = np.zeros((degree + 1,) * self.dim)
            c[(slice(0, old + 1),) * self.dim] = self.coeffs
            return SpectralField(c, self.time, self.discarded)
        keep = (slice(0, degree + 1),) * self.dim
        lost = self.norm_sq() - float(np.sum(self.coeffs[keep] ** 2))
        return SpectralField(self.coeffs[keep], self.time, self.discarded + max(lost, 0.0))

    def _binary(self, other, sign):
        if not isinstance(other, SpectralField):
            return NotImplemented
        deg = max(self.max_degree, other.max_degree)
        a, b = self.resized(deg), other.resized(deg)
        return SpectralField(a.coeffs + sign * b.coeffs, self.time)

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __mul__(self, k):
        if isinstance(k, SpectralField):
            return NotImplemented
        return SpectralField(self.coeffs * float(k), self.time, self.discarded)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    # -- evaluation -------------------------------------------------------

    def values(self, points) -> np.ndarray:
        """u at arbitrary points of shape (N, dim)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        idx = np.nonzero(self.coeffs)
        if not idx[0].size:
            return np.zeros(pts.shape[0])
        out = np.ones((pts.shape[0], idx[0].size))
        for axis in range(self.dim):
            basis = normalized_hermite(pts[:, axis], self.max_degree)
            out *= basis[:, idx[axis]]
        return out @ self.coeffs[idx]

    def gradients(self, points) -> np.ndarray:
        """∇u at points, shape (N, dim)."""
        return np.stack([g.values(points) for g in gradient(self)], axis=1)

    def grid_tensor(self, grid: GaussianGrid) -> np.ndarray:
        """Values on a tensor grid as an (m,)*dim array (fast path)."""
        _check_grid_dim(self, grid)
        basis = normalized_hermite(grid.axis_nodes, self.max_degree)
        return _apply_axes(self.coeffs, basis)

    def grid_values(self, grid) -> np.ndarray:
        if isinstance(grid, GaussianGrid):
            return self.grid_tensor(grid).reshape(-1)
        return self.values(grid.nodes)

    def grid_gradients(self, grid) -> np.ndarray:
        return np.stack([g.grid_values(grid) for g in gradient(self)], axis=1)


def _check_grid_dim(u: SpectralField, grid) -> None:
    if grid.dim != u.dim:
        raise ConfigurationError(f"field dimension {u.dim} does not match grid dimension {grid.dim}")


def projection_matrix(grid: GaussianGrid, degree: int) -> np.ndarray:
    """(degree+1, m) matrix mapping axis values to axis coefficients."""
    basis = normalized_hermite(grid.axis_nodes, degree)
    return (basis * grid.axis_weights[:, None]).T


def project_tensor(values: np.ndarray, degree: int, grid: GaussianGrid, time: float = 0.0) -> SpectralField:
    """Coefficients of nodal values given as an (m,)*dim tensor."""
    if grid.scale != 1.0:
        raise ConfigurationError("projection needs the unit-variance grid for dγ")
    values = np.asarray(values, dtype=float).reshape((grid.points_per_axis,) * grid.dim)
    return SpectralField(_apply_axes(values, projection_matrix(grid, degree)), time)


def project(f: Callable[[np.ndarray], np.ndarray], degree: int, grid: GaussianGrid,
            time: float = 0.0) -> SpectralField:
    """Spectral coefficients c_α = ∫ f h_α dγ by quadrature.

    Exact for polynomials of per-axis degree <= degree as long as the grid
    has at least degree + 1 points per axis.
    """
    if grid.points_per_axis < degree + 1:
        raise ConfigurationError(
            f"{grid.points_per_axis} points per axis cannot project degree {degree} "
            f"(need at least {degree + 1})"
        )
    values = np.asarray(f(grid.nodes), dtype=float).reshape(-1)
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        node = tuple(float(v) for v in grid.nodes[i])
        raise EvaluationError(f"function is not finite at node {node}", node=node)
    return project_tensor(values, degree, grid, time)


def gradient(u: SpectralField) -> list[SpectralField]:
    """Per-axis derivative fields via h_k' = sqrt(k) h_{k-1}.

    The per-axis degree drops by one; the coefficient tensor keeps its shape
    with a zero top slice so fields stay addable.
    """
    D = u.max_degree
    scale = np.sqrt(np.arange(1, D + 1, dtype=float))
    out = []
    for axis in range(u.dim):
        c = np.zeros_like(u.coeffs)
        shape = [1] * u.dim
        shape[axis] = D
        upper = np.take(u.coeffs, np.arange(1, D + 1), axis=axis) * scale.reshape(shape)
        index = [slice(None)] * u.dim
        index[axis] = slice(0, D)
        c[tuple(index)] = upper
        out.append(SpectralField(c, u.time))
    return out


def apply_ou(u: SpectralField) -> SpectralField:
    """L_γ u = Δu - x·∇u, diagonal with eigenvalue -|α|."""
    return SpectralField(-total_degree(u.dim, u.max_degree) * u.coeffs, u.time)


@dataclass(frozen=True)
class GrowthClass:
    """|f(x)| <= B · exp(A |x|²); B may depend on time."""

    A: float
    B: float | Callable[[float], float]

    def __post_init__(self):
        if not (math.isfinite(self.A) and self.A > 0):
            raise ConfigurationError(f"growth constant A must be finite and positive, got {self.A}")
        if not callable(self.B) and not (math.isfinite(self.B) and self.B > 0):
            raise ConfigurationError(f"growth constant B must be finite and positive, got {self.B}")

    def bound_at(self, t: float = 0.0) -> float:
        b = self.B(t) if callable(self.B) else self.B
        if not (math.isfinite(b) and b > 0):
            raise ConfigurationError(f"growth bound B({t}) = {b} is not finite and positive")
        return float(b)


def check_growth(f: Callable[[np.ndarray], np.ndarray], gc: GrowthClass, grid, t: float = 0.0) -> bool:
    """Sampled test of |f| <= B e^{A|x|²} at the grid nodes.

    This is a necessary condition only: nodes are finitely many.
    """
    x = grid.nodes
    values = np.abs(np.asarray(f(x), dtype=float).reshape(-1))
    with np.errstate(divide="ignore"):
        lhs = np.log(values)
    rhs = math.log(gc.bound_at(t)) + gc.A * np.sum(x**2, axis=1)
    return bool(np.all(np.isfinite(values)) and np.all(lhs <= rhs))
