"""Kernel-weighted integrals H, I, the frequency N and checks built on them.

For a solution u, with s = 1 - e^{-2τ} and M the backward kernel at (0, 0),

    H(τ) = ∫ u²(·,-τ) M(·,-τ) dγ
    I(τ) = ∫ (|∇u|² [+ V u²])(·,-τ) M(·,-τ) dγ
    N(τ) = s · I(τ) / H(τ)

Because M(·,-τ) dγ is the centred Gaussian N(0, s I), all integrals run on
a unit quadrature rule rescaled by sqrt(s).
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from oulab.errors import ConfigurationError, DomainError, EvaluationError
from oulab.gaussian import SpectralField
from oulab.mehler import kernel_variance
from oulab.reports import CheckReport, format_float, write_atomic

DEGENERATE_RATIO = 1e-14
CSV_COLUMNS = ("tau", "H", "I", "N", "N_prime", "flags")


@dataclass(frozen=True)
class HorizonT0:
    A: float
    T: float
    value: float


def compute_T0(A: float, T: float) -> HorizonT0:
    """T0 = ½ min{log(1 + 1/(8(A + π))), T}."""
    if not (A > 0 and T > 0):
        raise DomainError(f"A and T must be positive, got A={A}, T={T}")
    value = 0.5 * min(math.log1p(1.0 / (8.0 * (A + math.pi))), T)
    return HorizonT0(float(A), float(T), value)


def default_tau_grid(T0: float, points: int = 40, lo: float = 0.01, hi: float = 0.9) -> np.ndarray:
    """Geometric τ-grid from lo·T0 to hi·T0."""
    if points < 2 or not 0 < lo < hi < 1:
        raise ConfigurationError(f"bad τ-grid spec points={points}, lo={lo}, hi={hi}")
    return np.geomspace(lo * T0, hi * T0, points)


# -- field providers ----------------------------------------------------------


def pure_provider(u0: SpectralField) -> Callable[[float], SpectralField]:
    """Exact OU solution through u0 (eigen-decay of every Hermite mode)."""
    from oulab.dynamics import evolve_pure

    return lambda t: evolve_pure(u0, t - u0.time)


def snapshot_provider(snapshots: Sequence, rel_tol: float = 1e-9) -> Callable[[float], object]:
    """Look up precomputed snapshots by their time stamp."""
    times = np.array([s.time for s in snapshots])

    def at(t: float):
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > rel_tol * max(1.0, abs(t)):
            raise ConfigurationError(f"no snapshot stored at t = {t}")
        return snapshots[i]

    return at


def _on_grid(u, grid) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(u, "grid_values"):
        return u.grid_values(grid), u.grid_gradients(grid)
    return u.values(grid.nodes), u.gradients(grid.nodes)


def _finite(values: np.ndarray, grid, what: str) -> np.ndarray:
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        node = tuple(float(v) for v in grid.nodes[i])
        raise EvaluationError(f"{what} is not finite at node {node}", node=node)
    return values


def weighted_integrals(u, tau: float, grid, V: Callable | None = None) -> tuple[float, float]:
    """(H, I) for one snapshot u at kernel time -τ."""
    if not tau > 0:
        raise DomainError(f"τ must be positive, got {tau}")
    g = grid.rescaled(kernel_variance(tau))
    vals, grads = _on_grid(u, g)
    vals = _finite(vals, g, "field")
    H = g.integrate(vals**2)
    density = np.sum(grads**2, axis=1)
    if V is not None:
        density = density + _finite(np.asarray(V(g.nodes), dtype=float).reshape(-1), g, "potential") * vals**2
    return H, g.integrate(_finite(density, g, "gradient"))


def H_of_tau(u_at: Callable[[float], object], tau: float, grid) -> float:
    return weighted_integrals(u_at(-tau), tau, grid)[0]


def I_of_tau(u_at: Callable[[float], object], tau: float, grid, V: Callable | None = None) -> float:
    return weighted_integrals(u_at(-tau), tau, grid, V)[1]


def N_of_tau(H: float, I: float, tau: float) -> float:
    if not H > 0:
        raise DomainError(f"H = {H} is not positive; the frequency is undefined")
    return kernel_variance(tau) * I / H


@dataclass(frozen=True, eq=False)
class FrequencyTrace:
    tau: np.ndarray
    H: np.ndarray
    I: np.ndarray
    N: np.ndarray
    N_prime: np.ndarray
    flags: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        return any("degenerate" in f for f in self.flags)

    @property
    def valid(self) -> np.ndarray:
        """Mask of rows with a defined frequency."""
        return np.array(["degenerate" not in f for f in self.flags], dtype=bool)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for k in range(self.tau.size):
            writer.writerow([format_float(v) for v in
                             (self.tau[k], self.H[k], self.I[k], self.N[k], self.N_prime[k])] + [self.flags[k]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        write_atomic(path, self.csv_text())

    @classmethod
    def read_csv(cls, path) -> "FrequencyTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda name: np.array([float(r[name]) for r in rows])
        return cls(col("tau"), col("H"), col("I"), col("N"), col("N_prime"),
                   tuple(r["flags"] for r in rows))


def _derivative(tau: np.ndarray, N: np.ndarray) -> tuple[np.ndarray, list[str]]:
    flags = [""] * tau.size
    if tau.size >= 3:
        d = np.gradient(N, tau, edge_order=2)
        flags[0] = flags[-1] = "one_sided"
    elif tau.size == 2:
        d = np.full(2, (N[1] - N[0]) / (tau[1] - tau[0]))
        flags = ["one_sided", "one_sided"]
    else:
        d = np.full(tau.size, np.nan)
    return d, flags


def trace_frequency(u_at: Callable[[float], object], tau_grid, grid, V: Callable | None = None,
                    shift: float = 0.0, meta: dict | None = None, threads: int = 1) -> FrequencyTrace:
    """Sample H, I, N on a τ-grid; ``shift`` gives the frequency N_s.

    For N_s the kernel stays at time -τ while the field is read at s - τ.
    The trace stops at the first τ where H is degenerate (below
    1e-14 · ∫u² dγ); that row is kept and flagged.
    """
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or tau.size == 0 or np.any(np.diff(tau) <= 0) or tau[0] <= 0:
        raise ConfigurationError("τ-grid must be a non-empty increasing sequence of positive values")

    def point(t: float):
        u = u_at(shift - t)
        H, I = weighted_integrals(u, t, grid, V)
        ref = u.norm_sq() if hasattr(u, "norm_sq") else 0.0
        return H, I, ref

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(point, tau))
    else:
        rows = [point(t) for t in tau]

    Hs, Is, Ns = [], [], []
    flags: list[str] = []
    for t, (H, I, ref) in zip(tau, rows):
        if H <= 0 or H <= DEGENERATE_RATIO * ref:
            Hs.append(H)
            Is.append(I)
            Ns.append(math.nan)
            flags.append("degenerate")
            break
        Hs.append(H)
        Is.append(I)
        Ns.append(N_of_tau(H, I, t))
        flags.append("")
    k = len(Hs)
    tau = tau[:k]
    N = np.array(Ns)
    good = np.array([f != "degenerate" for f in flags], dtype=bool)
    Np = np.full(k, np.nan)
    if good.any():
        d, dflags = _derivative(tau[good], N[good])
        Np[good] = d
        idx = np.flatnonzero(good)
        for j, f in zip(idx, dflags):
            flags[j] = f
    info = dict(meta or {})
    info["shift"] = shift
    return FrequencyTrace(tau, np.array(Hs), np.array(Is), N, Np, tuple(flags), info)


# -- checks ---------------------------------------------------------------------


def check_monotone(trace: FrequencyTrace, tol: float) -> CheckReport:
    """N(τ_{k+1}) >= N(τ_k) - tol for consecutive grid points."""
    N = trace.N[trace.valid]
    drops = N[:-1] - N[1:]
    worst = float(np.max(drops)) if drops.size else 0.0
    k = int(np.argmax(drops)) if drops.size else -1
    ok = bool(trace.N[trace.valid].size > 0 and worst <= tol)
    return CheckReport(
        "check_monotone", "frequency-monotone-pure-heat", {"tol": tol, "points": int(N.size)},
        worst, tol, ok,
        {"worst_index": k, "worst_tau": float(trace.tau[k]) if k >= 0 else None,
         "degenerate": trace.degenerate},
    )


def almost_monotone_constant(L: float, n: int) -> float:
    return (n + 1) * L * L


def check_almost_monotone(trace: FrequencyTrace, L: float, n: int, tol: float,
                          tau_cap: float | None = None) -> CheckReport:
    """N(τ)+1 <= e^{C(τ0-τ)} (N(τ0)+1)(1+tol) for τ < τ0 < tau_cap, C = (n+1)L².

    Also checks the pointwise form N' >= -C (N+1) - tol on the whole trace
    and reports the looser integrated bound with factor e^{C}.
    """
    C = almost_monotone_constant(L, n)
    if tau_cap is None:
        T0 = trace.meta.get("T0")
        tau_cap = 0.5 * T0 if T0 else math.inf
    mask = trace.valid & (trace.tau < tau_cap)
    tau, N = trace.tau[mask], trace.N[mask]
    worst_ratio, worst_pair, loose_ok = 0.0, (-1, -1), True
    ok_pairs = True
    if tau.size >= 2:
        i, j = np.triu_indices(tau.size, k=1)
        bound = np.exp(C * (tau[j] - tau[i])) * (N[j] + 1.0) * (1.0 + tol)
        lhs = N[i] + 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(bound > 0, lhs / bound * (1.0 + tol), np.inf)
        ok_pairs = bool(np.all(lhs <= bound))
        loose_ok = bool(np.all(lhs <= math.exp(C) * (N[j] + 1.0) * (1.0 + tol)))
        p = int(np.argmax(ratio))
        worst_ratio, worst_pair = float(ratio[p]), (int(i[p]), int(j[p]))
    valid = trace.valid & np.isfinite(trace.N_prime)
    slack = trace.N_prime[valid] + C * (trace.N[valid] + 1.0)
    worst_diff = float(np.min(slack)) if slack.size else 0.0
    ok_diff = worst_diff >= -tol
    return CheckReport(
        "check_almost_monotone", "frequency-almost-monotone",
        {"L": L, "n": n, "tol": tol, "C": C, "tau_cap": tau_cap},
        worst_ratio, 1.0 + tol, bool(ok_pairs and ok_diff and tau.size >= 2),
        {"worst_pair": list(worst_pair), "pairs_pass": ok_pairs,
         "differential_min": worst_diff, "differential_pass": ok_diff,
         "loose_factor_pass": loose_ok, "points": int(tau.size)},
    )


def default_C2(trace: FrequencyTrace, tau0: float, L: float, n: int, potential: bool = False) -> float:
    """Constant C2 with s·H'/H <= C2·e^{-2τ} on (0, τ0].

    With F = b·∇u + cu one has s·H'/H <= 2N + s + s∫F²M/H, which is at most
    (2 + 2(n+1)L²)(N + 1); in potential mode H' = 2I exactly and s·H'/H = 2N.
    """
    mask = trace.valid & (trace.tau <= tau0 * (1 + 1e-12))
    sup_n = float(np.max(trace.N[mask])) if mask.any() else 0.0
    factor = 2.0 if potential else 2.0 + 2.0 * (n + 1) * L * L
    return factor * max(sup_n + 1.0, 0.0) * math.exp(2.0 * tau0)


def check_H_lower_bound(trace: FrequencyTrace, tau0: float, C2: float | None = None, L: float = 0.0,
                        n: int = 1, potential: bool = False, rel_slack: float = 1e-9) -> CheckReport:
    """H(τ) >= H(τ0) (1-e^{-2τ0})^{-C2} τ^{C2} for grid points τ < τ0.

    τ0 snaps to the largest grid point not above it. The intermediate bound
    H(τ) >= H(τ0) (s/s0)^{C2} is reported alongside.
    """
    valid = trace.valid
    idx = np.flatnonzero(valid & (trace.tau <= tau0 * (1 + 1e-12)))
    if idx.size < 2:
        raise ConfigurationError("need at least two grid points at or below τ0")
    j = idx[-1]
    t0, H0 = float(trace.tau[j]), float(trace.H[j])
    if C2 is None:
        C2 = default_C2(trace, t0, L, n, potential)
    s0 = kernel_variance(t0)
    tau, H = trace.tau[idx[:-1]], trace.H[idx[:-1]]
    s = -np.expm1(-2.0 * tau)
    with np.errstate(divide="ignore"):
        log_rhs = math.log(H0) - C2 * math.log(s0) + C2 * np.log(tau) if H0 > 0 else np.full(tau.size, -np.inf)
        log_s_rhs = math.log(H0) + C2 * (np.log(s) - math.log(s0)) if H0 > 0 else np.full(tau.size, -np.inf)
        log_h = np.log(H)
    gap = log_h - log_rhs
    k = int(np.argmin(gap))
    ok = bool(np.all(gap >= math.log1p(-rel_slack)))
    s_ok = bool(np.all(log_h - log_s_rhs >= math.log1p(-rel_slack)))
    return CheckReport(
        "check_H_lower_bound", "kernel-mass-lower-bound",
        {"tau0": t0, "C2": C2},
        -float(gap[k]), -math.log1p(-rel_slack), ok,
        {"worst_tau": float(tau[k]), "log_gap_min": float(gap[k]), "s_form_pass": s_ok,
         "s_form_log_gap_min": float(np.min(log_h - log_s_rhs))},
    )


def duality_pairing(u_at: Callable[[float], object], S: float, taus, grid, tol: float = 1e-6,
                    abs_tol: float = 1e-14) -> CheckReport:
    """D(τ) = ∫ u(·, τ-2S) u(·, -τ) dγ for τ in (-2S, 0); checks D is constant."""
    taus = np.asarray(taus, dtype=float)
    if np.any(taus <= -2 * S) or np.any(taus >= 0):
        raise ConfigurationError("duality τ-grid must lie inside (-2S, 0)")
    D = np.array([grid.integrate(u_at(t - 2 * S).grid_values(grid) * u_at(-t).grid_values(grid))
                  for t in taus])
    dev = float(np.max(np.abs(D - D[0])))
    rhs = tol * abs(D[0]) + abs_tol
    return CheckReport(
        "duality_pairing", "duality-conservation", {"S": S, "tol": tol, "abs_tol": abs_tol, "points": int(taus.size)},
        dev, rhs, dev <= rhs, {"D": D.tolist(), "D_first": float(D[0])},
    )


def check_potential_monotone(trace: FrequencyTrace, tol: float) -> CheckReport:
    """Pointwise N'(τ) >= -tol (inverse-square potential with q = 2)."""
    valid = trace.valid & np.isfinite(trace.N_prime)
    worst = float(np.min(trace.N_prime[valid])) if valid.any() else math.nan
    k = int(np.argmin(np.where(valid, trace.N_prime, np.inf)))
    return CheckReport(
        "check_potential_monotone", "frequency-monotone-inverse-square", {"tol": tol},
        -worst, tol, bool(valid.any() and worst >= -tol), {"worst_tau": float(trace.tau[k])},
    )
