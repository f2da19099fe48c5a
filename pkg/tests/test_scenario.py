import math

import numpy as np
import pytest

from oulab.cli import bundled_scenarios
from oulab.errors import ConfigurationError
from oulab.gaussian import build_gamma_grid
from oulab.scenario import (
    load_scenario,
    parse_expr,
    parse_initial,
    radial_function,
    run_scenario,
    spatial_function,
)

BASE = {
    "name": "base",
    "dim": 2,
    "mode": "pure",
    "initial": {"polynomial": "x1**2 - x2"},
    "growth": {"A": 1.0},
    "T": 10.0,
    "grid": {"degree": 4, "nodes": 8},
    "checks": [{"name": "check_monotone", "tol": 1e-8}],
}


def test_initial_forms_agree():
    grid = build_gamma_grid(2, 6)
    herm = parse_initial({"hermite": [{"index": [2, 0], "coeff": 1}, {"index": [0, 0], "coeff": 1},
                                      {"index": [0, 1], "coeff": -1}]}, 2, 4, 0.0)
    mono = parse_initial({"monomials": [{"powers": [2, 0]}, {"powers": [0, 1], "coeff": "-1"}]}, 2, 4, 0.0)
    poly = parse_initial({"polynomial": "x1**2 - x2"}, 2, 4, 0.0)
    expected = grid.nodes[:, 0] ** 2 - grid.nodes[:, 1]
    for u in (herm, mono, poly):
        assert np.allclose(u.grid_values(grid), expected, atol=1e-12)


def test_hermite_coefficients_are_unnormalised():
    u = parse_initial({"hermite": [{"index": [3], "coeff": "1/2"}]}, 1, 4, 0.0)
    assert u.coeffs[3] == pytest.approx(0.5 * math.sqrt(6))


@pytest.mark.parametrize("bad", [
    {},
    {"hermite": [{"index": [1]}]},
    {"hermite": [{"index": [9, 0]}]},
    {"hermite": [{"index": [1, 0], "coeff": "1/0"}]},
    {"polynomial": "sin(x1)"},
    {"polynomial": "y**2"},
])
def test_initial_rejections(bad):
    with pytest.raises(ConfigurationError):
        parse_initial(bad, 2, 4, 0.0)


def test_expression_helpers():
    f = spatial_function("x1*t + x2", 2, "b")
    assert np.allclose(f(np.array([[1.0, 2.0], [3.0, 4.0]]), 0.5), [2.5, 5.5])
    assert np.allclose(spatial_function("3", 2, "c")(np.zeros((4, 2))), 3.0)
    assert radial_function("r**2/4", "v")(np.array([2.0]))[0] == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        parse_expr("x1 +", {"x1"}, "e")
    with pytest.raises(ConfigurationError):
        parse_expr([1], {"x1"}, "e")


def test_load_scenario_validation():
    scn = load_scenario(BASE)
    assert scn.dim == 2 and scn.initial.time == pytest.approx(-scn.T0)
    for field in ("dim", "initial", "mode"):
        doc = {k: v for k, v in BASE.items() if k != field}
        with pytest.raises(ConfigurationError, match=f"'{field}'"):
            load_scenario(doc)
    with pytest.raises(ConfigurationError):
        load_scenario(dict(BASE, dim=4))
    with pytest.raises(ConfigurationError):
        load_scenario(dict(BASE, mode="quantum"))


def test_lower_order_precondition_checked():
    doc = dict(BASE, mode="lower_order", coefficients={"c": "x1*x2", "L": 1.0},
               grid={"degree": 4, "nodes": 8, "dt": 0.01})
    with pytest.raises(ConfigurationError, match="bound"):
        load_scenario(doc)


@pytest.mark.parametrize("name", sorted(bundled_scenarios()))
def test_bundled_scenarios_pass(name):
    result = run_scenario(load_scenario(bundled_scenarios()[name]))
    assert result.passed, [r.summary() for r in result.reports if not r.passed]
    doc = result.report_document()
    assert doc["pass"] is True and doc["scenario"] == name
