"""JSON scenario descriptions and the runner that turns one into a trace
and a list of check reports.

Expressions for coefficients, potentials and probes are strings parsed by
sympy. Available symbols: ``x1 x2 x3`` (coordinates, ``x`` is an alias for
``x1``), ``t`` (time), ``r`` (radius) and ``e1 e2 e3`` (components of the
unit vector x/|x|, used by angular profiles).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

import numpy as np
import sympy as sp

from oulab.dynamics import (
    EvolutionConfig,
    LowerOrder,
    Potential,
    evolve_snapshots,
    inverse_square_solution,
)
from oulab.errors import ConfigurationError
from oulab.frequency import (
    FrequencyTrace,
    check_almost_monotone,
    check_H_lower_bound,
    check_monotone,
    check_potential_monotone,
    compute_T0,
    default_tau_grid,
    duality_pairing,
    pure_provider,
    snapshot_provider,
    trace_frequency,
)
from oulab.gaussian import GrowthClass, SpectralField, build_gamma_grid, check_growth, project
from oulab.inequalities import VanishingProbe, hardy_quadratic, hardy_singular, polynomial_probe, probe_integral, vanishing_envelope
from oulab.reports import CheckReport

MODES = ("pure", "lower_order", "potential_smooth", "potential_singular", "probe")
_X = sp.symbols("x1 x2 x3", real=True)
_E = sp.symbols("e1 e2 e3", real=True)
_T, _R, _S = sp.symbols("t r s", real=True)
_LOCALS = {"x1": _X[0], "x2": _X[1], "x3": _X[2], "x": _X[0], "t": _T, "r": _R,
           "e1": _E[0], "e2": _E[1], "e3": _E[2], "s": _S, "tau": sp.Symbol("tau", real=True)}


def _require(doc: dict, key: str, where: str = "scenario"):
    if key not in doc:
        raise ConfigurationError(f"{where}: missing required field '{key}'")
    return doc[key]


def parse_expr(text: Any, allowed: set[str], what: str) -> sp.Expr:
    """Parse a numeric literal or expression string, restricting free symbols."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return sp.nsimplify(text) if isinstance(text, int) else sp.Float(text)
    if not isinstance(text, str):
        raise ConfigurationError(f"{what}: expected an expression string, got {text!r}")
    try:
        expr = sp.sympify(text, locals=_LOCALS)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigurationError(f"{what}: cannot parse {text!r}") from exc
    names = {str(s) for s in expr.free_symbols}
    extra = names - allowed
    if extra:
        raise ConfigurationError(f"{what}: unknown symbols {sorted(extra)} (allowed: {sorted(allowed)})")
    return expr


def _lambdify(expr: sp.Expr, symbols: list) -> Callable:
    f = sp.lambdify(symbols, expr, modules="numpy")

    def call(*args):
        out = np.asarray(f(*args), dtype=float)
        shape = np.broadcast_shapes(*(np.shape(a) for a in args)) if args else ()
        return np.broadcast_to(out, shape).astype(float)

    return call


def spatial_function(text, dim: int, what: str, with_time: bool = True) -> Callable:
    """f(points, t) from an expression in x1..x_dim (and t)."""
    names = {f"x{i + 1}" for i in range(dim)} | ({"x"} if dim >= 1 else set())
    if with_time:
        names.add("t")
    expr = parse_expr(text, names, what)
    f = _lambdify(expr, list(_X[:dim]) + [_T])

    def call(points, t=0.0):
        x = np.atleast_2d(np.asarray(points, dtype=float))
        return f(*(x[:, i] for i in range(dim)), np.full(x.shape[0], float(t)))

    return call


def radial_function(text, what: str) -> Callable:
    f = _lambdify(parse_expr(text, {"r"}, what), [_R])
    return lambda r: f(np.asarray(r, dtype=float))


def angular_function(text, dim: int, what: str) -> Callable:
    names = {f"e{i + 1}" for i in range(dim)}
    f = _lambdify(parse_expr(text, names, what), list(_E[:dim]))
    return lambda unit: f(*(np.atleast_2d(unit)[:, i] for i in range(dim)))


def _fraction(value, what: str) -> float:
    try:
        return float(Fraction(str(value)))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigurationError(f"{what}: invalid rational {value!r}") from exc


def parse_initial(doc: dict, dim: int, degree: int, time: float) -> SpectralField:
    """Initial data from Hermite modes, monomial terms or a polynomial string.

    Hermite entries give coefficients of He_α (not normalised); they are
    stored on h_α = He_α / sqrt(α!).
    """
    if not isinstance(doc, dict) or not doc:
        raise ConfigurationError("initial: expected an object with 'hermite', 'monomials' or 'polynomial'")
    coeffs = np.zeros((degree + 1,) * dim)
    if "hermite" in doc:
        for k, term in enumerate(doc["hermite"]):
            idx = tuple(int(i) for i in _require(term, "index", f"initial.hermite[{k}]"))
            if len(idx) != dim or min(idx) < 0:
                raise ConfigurationError(f"initial.hermite[{k}]: index must have {dim} non-negative entries")
            if max(idx) > degree:
                raise ConfigurationError(f"initial.hermite[{k}]: degree {max(idx)} exceeds cutoff {degree}")
            c = _fraction(term.get("coeff", 1), f"initial.hermite[{k}].coeff")
            coeffs[idx] += c * math.sqrt(math.prod(math.factorial(i) for i in idx))
    field_ = SpectralField(coeffs, time)
    terms = []
    if "monomials" in doc:
        for k, term in enumerate(doc["monomials"]):
            p = tuple(int(i) for i in _require(term, "powers", f"initial.monomials[{k}]"))
            if len(p) != dim or min(p) < 0:
                raise ConfigurationError(f"initial.monomials[{k}]: powers must have {dim} non-negative entries")
            terms.append((p, _fraction(term.get("coeff", 1), f"initial.monomials[{k}].coeff")))
    if "polynomial" in doc:
        expr = parse_expr(doc["polynomial"], {f"x{i + 1}" for i in range(dim)} | {"x"}, "initial.polynomial")
        try:
            poly = sp.Poly(sp.expand(expr), *_X[:dim])
        except sp.PolynomialError as exc:
            raise ConfigurationError("initial.polynomial: not a polynomial in the coordinates") from exc
        terms += [(m, float(c)) for m, c in poly.terms()]
    if terms:
        if max(max(p) for p, _ in terms) > degree:
            raise ConfigurationError(f"initial: polynomial degree exceeds cutoff {degree}")
        grid = build_gamma_grid(dim, degree + 1)

        def f(x):
            return sum(c * np.prod(x ** np.array(p), axis=1) for p, c in terms)

        field_ = field_ + project(f, degree, grid, time)
    if "hermite" not in doc and not terms:
        raise ConfigurationError("initial: expected 'hermite', 'monomials' or 'polynomial'")
    return field_.with_time(time)


@dataclass
class Scenario:
    name: str
    dim: int
    mode: str
    T: float
    growth: GrowthClass
    degree: int
    nodes: int
    dt: float
    tau_spec: dict
    checks: list
    initial: SpectralField | None = None
    lower_order: LowerOrder | None = None
    potential: Potential | None = None
    separable: dict | None = None
    probe: VanishingProbe | None = None
    refine: dict | None = None
    shift: float = 0.0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def T0(self) -> float:
        if self.probe is not None:
            return self.probe.T0
        return compute_T0(self.growth.A, self.T).value

    def tau_grid(self) -> np.ndarray:
        spec = self.tau_spec
        return default_tau_grid(self.T0, int(spec.get("points", 40)), float(spec.get("lo", 0.01)),
                                float(spec.get("hi", 0.9)))

    def evolution(self, dt: float | None = None) -> EvolutionConfig:
        return EvolutionConfig(self.dt if dt is None else dt, self.degree, self.nodes)


def load_scenario(source: str | Path | dict) -> Scenario:
    """Parse and validate a scenario from a path or an already-decoded dict."""
    if isinstance(source, dict):
        doc = source
    else:
        try:
            doc = json.loads(Path(source).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {source}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {source} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("scenario must be a JSON object")
    name = str(_require(doc, "name"))
    dim = _require(doc, "dim")
    if dim not in (1, 2, 3):
        raise ConfigurationError(f"dim must be 1, 2 or 3, got {dim!r}")
    mode = _require(doc, "mode")
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    gdoc = doc.get("growth", {})
    growth = GrowthClass(float(gdoc.get("A", 1.0)), float(gdoc.get("B", 1e6)))
    grid = doc.get("grid", {})
    degree, nodes = int(grid.get("degree", 8)), int(grid.get("nodes", 0))
    nodes = nodes or degree + 4
    scn = Scenario(
        name=name, dim=dim, mode=mode, T=float(doc.get("T", 1.0)), growth=growth, degree=degree,
        nodes=nodes, dt=float(grid.get("dt", 1e-3)), tau_spec=dict(doc.get("tau_grid", {})),
        checks=list(doc.get("checks", [])), refine=doc.get("refine"), shift=float(doc.get("shift", 0.0)),
        raw=doc,
    )
    if scn.T <= 0:
        raise ConfigurationError("T must be positive")
    EvolutionConfig(scn.dt, degree, nodes)  # validates m >= D + 1
    if mode == "probe":
        scn.probe = _parse_probe(_require(doc, "probe"), dim, growth)
    else:
        init = _require(doc, "initial")
        start = -scn.T0 + scn.shift
        if mode == "potential_singular" and "separable" in init:
            scn.separable = _parse_separable(init["separable"], dim, doc)
        else:
            scn.initial = parse_initial(init, dim, degree, start)
            if "B" in gdoc and not check_growth(scn.initial.values, growth, build_gamma_grid(dim, nodes)):
                raise ConfigurationError("initial data violates its declared G(A, B) growth at a quadrature node")
    if mode == "lower_order":
        scn.lower_order = _parse_lower_order(_require(doc, "coefficients"), dim)
        times = np.linspace(-scn.T0, 0.0, 9)
        scn.lower_order.check(build_gamma_grid(dim, nodes), times)
    if mode in ("potential_smooth", "potential_singular") and scn.separable is None:
        scn.potential = _parse_potential(_require(doc, "potential"), dim, mode)
        scn.potential.check(dim)
    if scn.tau_spec.get("hi", 0.9) >= 1 or scn.tau_spec.get("lo", 0.01) <= 0:
        raise ConfigurationError("tau_grid must lie inside (0, T0): need 0 < lo < hi < 1")
    for k, chk in enumerate(scn.checks):
        if not isinstance(chk, dict) or "name" not in chk:
            raise ConfigurationError(f"checks[{k}]: expected an object with a 'name'")
        if chk["name"] not in CHECKS:
            raise ConfigurationError(f"checks[{k}]: unknown check {chk['name']!r}")
    return scn


def _parse_lower_order(doc: dict, dim: int) -> LowerOrder:
    L = float(_require(doc, "L", "coefficients"))
    b = c = None
    if "b" in doc:
        comps = doc["b"] if isinstance(doc["b"], list) else [doc["b"]]
        if len(comps) != dim:
            raise ConfigurationError(f"coefficients.b: expected {dim} components")
        fns = [spatial_function(e, dim, f"coefficients.b[{i}]") for i, e in enumerate(comps)]
        b = lambda x, t: np.stack([f(x, t) for f in fns], axis=1)
    if "c" in doc:
        c = spatial_function(doc["c"], dim, "coefficients.c")
    return LowerOrder(b, c, L)


def _parse_potential(doc: dict, dim: int, mode: str) -> Potential:
    w = angular_function(doc["w"], dim, "potential.w") if "w" in doc else None
    if mode == "potential_smooth":
        return Potential("smooth_radial", v=radial_function(_require(doc, "v", "potential"), "potential.v"),
                         w=w, L=float(doc.get("L", 1.0)))
    return Potential("singular_radial", w=w, L=float(doc.get("L", 1.0)), q=float(doc.get("q", 2.0)),
                     epsilon=float(doc.get("epsilon", 1e-3)))


def _parse_separable(doc: dict, dim: int, root: dict) -> dict:
    if dim != 3:
        raise ConfigurationError("separable inverse-square solutions need dim = 3")
    pot = root.get("potential", {})
    if float(pot.get("q", 2.0)) != 2.0:
        raise ConfigurationError("separable solutions exist for q = 2 only")
    wz = _lambdify(parse_expr(pot.get("w", "1"), {"e3"}, "potential.w (axisymmetric, in e3)"), [_E[2]])
    radial = [_fraction(c, "initial.separable.radial") for c in _require(doc, "radial", "initial.separable")]
    sol = inverse_square_solution(wz, radial, int(doc.get("lmax", 24)))
    return {"solution": sol, "w_text": pot.get("w", "1")}


def _parse_probe(doc: dict, dim: int, growth: GrowthClass) -> VanishingProbe:
    K = int(_require(doc, "K", "probe"))
    T1 = float(doc.get("T1", 1.0))
    if "v" not in doc:
        return polynomial_probe(K, dim, growth.A, T1)
    v = spatial_function(doc["v"], dim, "probe.v")
    return VanishingProbe(K, float(_require(doc, "C0", "probe")), T1, v, growth, dim)


# -- running -------------------------------------------------------------------


@dataclass
class RunResult:
    scenario: Scenario
    trace: FrequencyTrace
    reports: list[CheckReport]
    meta: dict

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def report_document(self) -> dict:
        return {"scenario": self.scenario.name, "mode": self.scenario.mode, "meta": self.meta,
                "checks": [r.to_dict() for r in self.reports], "pass": self.passed}


def _provider(scn: Scenario, dt: float | None = None, extra_times=()):
    """Field provider covering the trace times shift - τ (plus extra times)."""
    if scn.separable is not None:
        sol = scn.separable["solution"]
        return lambda t: sol.at(t)
    if scn.mode == "pure":
        return pure_provider(scn.initial)
    times = sorted(set(float(scn.shift - t) for t in scn.tau_grid()) | set(map(float, extra_times)))
    snaps = evolve_snapshots(scn.initial, times, scn.evolution(dt), lo=scn.lower_order, V=scn.potential)
    return snapshot_provider(snaps)


def _quadrature(scn: Scenario):
    if scn.separable is not None:
        return scn.separable["solution"].quadrature_grid()
    return build_gamma_grid(scn.dim, scn.nodes)


def _potential_fn(scn: Scenario):
    if scn.separable is not None:
        return scn.separable["solution"].potential
    if scn.potential is not None:
        return lambda x: scn.potential.values(x, regularized=False)
    return None


def build_trace(scn: Scenario, dt: float | None = None, threads: int = 1) -> FrequencyTrace:
    meta = {"scenario": scn.name, "T0": scn.T0, "A": scn.growth.A,
            "L": scn.lower_order.L if scn.lower_order else (scn.potential.L if scn.potential else 0.0)}
    if scn.mode == "probe":
        tau = scn.tau_grid()
        grid = build_gamma_grid(scn.dim, max(scn.nodes, 2 * scn.probe.K + 4))
        G = np.array([probe_integral(scn.probe, t, grid) for t in tau])
        nan = np.full(tau.size, np.nan)
        return FrequencyTrace(tau, G, nan, nan, nan, ("probe",) * tau.size, meta)
    return trace_frequency(_provider(scn, dt), scn.tau_grid(), _quadrature(scn), V=_potential_fn(scn),
                           shift=scn.shift, meta=meta, threads=threads)


def converged_trace(scn: Scenario, tol: float = 1e-6, max_halvings: int = 6,
                    threads: int = 1) -> tuple[FrequencyTrace, dict]:
    """Halve dt until N changes by less than tol between dt and dt/2."""
    dt = scn.dt
    prev = build_trace(scn, dt, threads)
    if scn.mode in ("pure", "probe") or scn.separable is not None:
        return prev, {"dt": dt, "change": 0.0, "halvings": 0, "converged": True}
    change = math.inf
    for k in range(1, max_halvings + 1):
        dt *= 0.5
        cur = build_trace(scn, dt, threads)
        n = min(cur.N.size, prev.N.size)
        change = float(np.nanmax(np.abs(cur.N[:n] - prev.N[:n]))) if n else 0.0
        prev = cur
        if change < tol:
            return cur, {"dt": dt, "change": change, "halvings": k, "converged": True}
    return prev, {"dt": dt, "change": change, "halvings": max_halvings, "converged": False}


def _check_hardy(scn: Scenario, trace: FrequencyTrace, provider, chk: dict) -> list[CheckReport]:
    out = []
    for tau in trace.tau[trace.valid] if scn.mode != "probe" else []:
        u = provider(scn.shift - tau)
        if not isinstance(u, SpectralField):
            break
        out.append(hardy_quadratic(u, float(tau)))
        if scn.dim == 3:
            out.append(hardy_singular(u, float(tau)))
    if not out:
        raise ConfigurationError("hardy check needs a spectral field scenario")
    worst = min(out, key=lambda r: r.margin)
    return [CheckReport("hardy", "hardy-inequalities", {"points": len(out)}, worst.lhs, worst.rhs,
                        all(r.passed for r in out), {"worst": worst.to_dict()})]


def _check_reference(trace: FrequencyTrace, chk: dict) -> CheckReport:
    expr = parse_expr(_require(chk, "expected", "frequency_reference"), {"s", "tau"}, "frequency_reference.expected")
    f = _lambdify(expr, [_S, _LOCALS["tau"]])
    tau = trace.tau[trace.valid]
    ref = f(-np.expm1(-2 * tau), tau)
    dev = float(np.max(np.abs(trace.N[trace.valid] - ref)))
    tol = float(chk.get("tol", 1e-8))
    return CheckReport("frequency_reference", "frequency-closed-form", {"expected": chk["expected"], "tol": tol},
                       dev, tol, dev <= tol, {})


def _duality(scn: Scenario, chk: dict, dt: float) -> CheckReport:
    S = float(chk.get("S", 0.25 * scn.T0))
    K = int(chk.get("points", 10))
    lattice = -4 * S + 2 * S * np.arange(3 * K + 1) / K
    taus = np.linspace(-2 * S, 0.0, K + 1)[1:-1]
    if scn.mode == "pure":
        provider = pure_provider(scn.initial)
    elif scn.separable is not None:
        raise ConfigurationError("duality_pairing needs a spectral field scenario")
    else:
        u0 = scn.initial.with_time(-4 * S)
        snaps = evolve_snapshots(u0, lattice, scn.evolution(dt), lo=scn.lower_order, V=scn.potential)
        provider = snapshot_provider(snaps)
    return duality_pairing(provider, S, taus, build_gamma_grid(scn.dim, scn.nodes),
                           float(chk.get("tol", 1e-6)), float(chk.get("abs_tol", 1e-14)))


def _run_check(scn, trace, provider, chk, dt) -> list[CheckReport]:
    name = chk["name"]
    tol = float(chk.get("tol", 1e-8))
    if name == "check_monotone":
        return [check_monotone(trace, tol)]
    if name == "check_almost_monotone":
        L = scn.lower_order.L if scn.lower_order else float(chk.get("L", 0.0))
        return [check_almost_monotone(trace, L, scn.dim, tol)]
    if name == "check_potential_monotone":
        return [check_potential_monotone(trace, tol)]
    if name == "check_H_lower_bound":
        tau0 = float(chk.get("tau0", 0.5 * scn.T0))
        L = scn.lower_order.L if scn.lower_order else 0.0
        return [check_H_lower_bound(trace, tau0, chk.get("C2"), L, scn.dim,
                                    potential=scn.potential is not None or scn.separable is not None)]
    if name == "frequency_reference":
        return [_check_reference(trace, chk)]
    if name == "duality_pairing":
        return [_duality(scn, chk, dt)]
    if name == "hardy":
        return _check_hardy(scn, trace, provider, chk)
    if name == "vanishing_envelope":
        if scn.probe is None:
            raise ConfigurationError("vanishing_envelope needs a probe scenario")
        return [vanishing_envelope(scn.probe, scn.tau_grid(), slope_tol=float(chk.get("slope_tol", 0.1)))]
    raise ConfigurationError(f"unknown check {name!r}")


CHECKS = ("check_monotone", "check_almost_monotone", "check_potential_monotone", "check_H_lower_bound",
          "frequency_reference", "duality_pairing", "hardy", "vanishing_envelope")


def run_scenario(scn: Scenario, threads: int = 1) -> RunResult:
    if scn.refine:
        trace, conv = converged_trace(scn, float(scn.refine.get("tol", 1e-6)),
                                      int(scn.refine.get("max_halvings", 6)), threads)
    else:
        trace, conv = build_trace(scn, threads=threads), {"dt": scn.dt, "halvings": 0}
    needs_fields = any(c["name"] == "hardy" for c in scn.checks)
    provider = _provider(scn, conv["dt"]) if needs_fields else None
    reports = []
    for chk in scn.checks:
        reports.extend(_run_check(scn, trace, provider, chk, conv["dt"]))
    meta = {"T0": scn.T0, "dim": scn.dim, "A": scn.growth.A, "T": scn.T, "degree": scn.degree,
            "nodes": scn.nodes, "evolution": conv, "degenerate": trace.degenerate}
    if scn.potential is not None and scn.potential.kind == "singular_radial":
        meta["epsilon"] = scn.potential.epsilon
    if scn.separable is not None:
        sol = scn.separable["solution"]
        meta["separable"] = {"mu": sol.mode.mu, "beta": sol.beta, "w": scn.separable["w_text"]}
    return RunResult(scn, trace, reports, meta)
