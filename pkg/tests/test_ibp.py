import math

import numpy as np
import pytest

from rfimlab.disorder import ZetaDistribution
from rfimlab.errors import ValidationError
from rfimlab.ibp import (CATALOG_1D, CATALOG_2D, TestFunction, baseline_reports, check_derivatives,
                         expectation_rule, gamma_1d, gamma_2d, load_baseline, register, remainder_bounds_check)

GAUSS, RAD = ZetaDistribution("gaussian"), ZetaDistribution("rademacher")
ALL = [GAUSS, RAD, ZetaDistribution("uniform"), ZetaDistribution("centered-exponential"),
       ZetaDistribution("student-t", 7.0)]


@pytest.mark.parametrize("dist", ALL, ids=lambda d: d.name)
def test_expectation_rule_moments(dist):
    y, w = expectation_rule(dist)
    assert w.sum() == pytest.approx(1, abs=1e-12)
    assert w @ y == pytest.approx(0, abs=1e-10)
    assert w @ y**2 == pytest.approx(1, abs=1e-10)
    assert w @ y**3 == pytest.approx(dist.raw_moment(3), abs=1e-8)


@pytest.mark.parametrize("name", list(CATALOG_1D))
def test_gaussian_gamma_vanishes(name):
    rep = gamma_1d(GAUSS, CATALOG_1D[name], "quadrature")
    assert abs(rep.gamma) < 1e-8
    assert abs(rep.residual) < 1e-8


def test_rademacher_cubic():
    rep = gamma_1d(RAD, CATALOG_1D["cubic"], "exact-discrete")
    assert rep.gamma == pytest.approx(-2.0, abs=1e-12)
    assert rep.lhs == pytest.approx(1.0, abs=1e-15) and rep.main == pytest.approx(3.0, abs=1e-15)
    assert all(b.holds for b in rep.bounds)


@pytest.mark.parametrize("dist", ALL, ids=lambda d: d.name)
def test_linear_function(dist):
    rep = gamma_1d(dist, CATALOG_1D["linear"], "quadrature")
    assert rep.gamma == 0 and rep.lhs == pytest.approx(2.0, abs=1e-10)
    assert all(b.holds and b.max_excess <= 0 for b in rep.bounds)


@pytest.mark.parametrize("dist", ALL, ids=lambda d: d.name)
@pytest.mark.parametrize("name", list(CATALOG_1D))
def test_univariate_identity(dist, name):
    f = CATALOG_1D[name]
    rep = gamma_1d(dist, f, "quadrature")
    assert rep.within_tolerance() and all(b.holds for b in rep.bounds)
    mc = gamma_1d(dist, f, "monte-carlo", n=4000, seed=1)
    assert mc.within_tolerance() and all(b.holds for b in mc.bounds)
    if dist.is_discrete:
        ex = gamma_1d(dist, f, "exact-discrete")
        assert abs(ex.residual) < 1e-10
        assert abs(mc.gamma - ex.gamma) < 4 * mc.se["gamma"] + 1e-12


def test_gaussian_tanh_bound_pointwise():
    rep = gamma_1d(GAUSS, CATALOG_1D["tanh"], "monte-carlo", n=100_000, seed=3)
    assert all(b.holds and b.points == 100_000 for b in rep.bounds)


def test_bivariate_xy():
    for dx in ALL[:3]:
        rep = gamma_2d(dx, RAD, CATALOG_2D["xy"], "quadrature" if dx is not RAD else "exact-discrete")
        assert rep.lhs == pytest.approx(1.0, abs=1e-10) and rep.main == pytest.approx(1.0, abs=1e-12)
        assert rep.gamma == 0


@pytest.mark.parametrize("name", list(CATALOG_2D))
def test_bivariate_gaussian_vanishes(name):
    rep = gamma_2d(GAUSS, GAUSS, CATALOG_2D[name], "quadrature", rule_n=100)
    assert abs(rep.gamma) < 1e-8 and abs(rep.residual) < 1e-8


@pytest.mark.parametrize("name", list(CATALOG_2D))
def test_bivariate_rademacher_exact(name):
    rep = gamma_2d(RAD, RAD, CATALOG_2D[name], "exact-discrete")
    assert abs(rep.residual) < 1e-10
    assert all(b.holds for b in rep.bounds)
    mc = gamma_2d(RAD, RAD, CATALOG_2D[name], "monte-carlo", n=4000, seed=2)
    assert abs(mc.gamma - rep.gamma) < 4 * mc.se["gamma"] + 1e-12


def test_printed_form_misses_a_term():
    """Three-piece remainder alone leaves the identity unbalanced on tanh(x)tanh(y)."""
    rep = gamma_2d(RAD, RAD, CATALOG_2D["tanh_tanh"], "exact-discrete")
    assert abs(rep.residual_printed) > 0.1
    assert rep.residual_printed == pytest.approx(rep.omitted, abs=1e-10)


@pytest.mark.parametrize("pair", [(RAD, GAUSS), (ALL[2], ALL[3]), (ALL[4], RAD)], ids=lambda p: "x".join(d.name for d in p))
@pytest.mark.parametrize("name", ["tanh_tanh", "x_y2", "sin_sum"])
def test_bivariate_mixed_laws_mc(pair, name):
    rep = gamma_2d(*pair, CATALOG_2D[name], "monte-carlo", n=3000, seed=5)
    assert rep.within_tolerance()
    assert all(b.holds for b in rep.bounds)


def test_baseline_regression():
    base = {(tuple(r["dists"]), r["function"]): r for r in load_baseline()}
    for rep in baseline_reports():
        ref = base[(rep.dists, rep.function)]
        for key in ("lhs", "main", "gamma", "residual", "gamma_printed", "omitted"):
            if ref[key] is None:
                assert getattr(rep, key) is None
            else:
                assert getattr(rep, key) == pytest.approx(ref[key], abs=1e-12)


def test_registration_gate():
    bad = TestFunction("bad", 1, np.sin, {1: np.cos, 2: np.sin, 3: lambda y: -np.cos(y)},
                       {1: lambda r: 1.0, 2: lambda r: 1.0, 3: lambda r: 1.0})
    assert check_derivatives(bad) > 0.1
    with pytest.raises(ValidationError, match="derivative gate"):
        register(bad)
    with pytest.raises(ValidationError):
        register(TestFunction("partial", 1, np.sin, {1: np.cos}, {1: lambda r: 1.0}))
    for tf in list(CATALOG_1D.values()) + list(CATALOG_2D.values()):
        assert check_derivatives(tf) < 1e-5


def test_method_errors():
    with pytest.raises(ValidationError):
        gamma_1d(GAUSS, CATALOG_1D["tanh"], "exact-discrete")
    with pytest.raises(ValidationError):
        gamma_1d(GAUSS, CATALOG_2D["xy"])
    with pytest.raises(ValidationError):
        gamma_2d(GAUSS, GAUSS, CATALOG_2D["xy"], "simpson")


def test_bounds_detect_violation():
    rep = gamma_1d(RAD, CATALOG_1D["cubic"], "exact-discrete")
    rep.grid["A"] = rep.grid["A"] * 100
    assert not all(b.holds for b in remainder_bounds_check(rep, CATALOG_1D["cubic"]))
