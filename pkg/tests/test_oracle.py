import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from morphint import make_domain
from morphint.errors import LiftOverflow, NonFiniteSample
from morphint.expression import parse_expression
from morphint.integrands import builtin, from_expression
from morphint.oracle import (
    WG,
    XGK,
    ToleranceNotReached,
    baseline_ismc,
    baseline_sample_mean,
    cubature_3d,
    product_lift,
    product_lift_log10,
    split_log10,
)


def _expr(src, dim):
    return from_expression(parse_expression(src, dim))


def test_gauss_nodes_match_legendre():
    x, w = np.polynomial.legendre.leggauss(10)
    assert np.allclose(np.sort(np.abs(x))[::2], np.sort(XGK[1:10:2]), atol=1e-15)
    assert np.allclose(np.sort(w[5:]), np.sort(WG), atol=1e-15)


@pytest.mark.parametrize("deg", [0, 1, 7, 20, 31])
def test_polynomials_integrated_exactly(deg):
    # a single G10K21 panel is exact to degree 31
    val = cubature_3d(_expr(f"x1^{deg}", 1), make_domain([0.0], [1.0]), 1e-10).value
    assert val == pytest.approx(1.0 / (deg + 1), rel=1e-13)


def test_unit_cube():
    r = cubature_3d(builtin("Constant", k=0.0, dim=3), make_domain([0.0] * 3, [1.0] * 3), 1e-10)
    assert abs(r.value - 1.0) < 1e-14
    assert r.converged and r.abs_error_bound >= 0.0 and r.evaluations > 0


def test_separable_product():
    dom3 = make_domain([-1.0, 0.0, 0.5], [2.0, 3.0, 1.5])
    total = cubature_3d(_expr("exp(-x1^2) * cos(x2) * (1 + x3^2) * sqrt(x3)", 3), dom3, 1e-10).value
    parts = [
        cubature_3d(_expr("exp(-x1^2)", 1), make_domain([-1.0], [2.0]), 1e-10).value,
        cubature_3d(_expr("cos(x1)", 1), make_domain([0.0], [3.0]), 1e-10).value,
        cubature_3d(_expr("(1 + x1^2) * sqrt(x1)", 1), make_domain([0.5], [1.5]), 1e-10).value,
    ]
    assert total == pytest.approx(math.prod(parts), rel=1e-10)
    assert parts[1] == pytest.approx(math.sin(3.0), rel=1e-13)


def test_matches_scipy_on_peaked_2d():
    f = _expr("exp(-50*((x1-0.3)^2 + (x2-0.6)^2)) + x1*x2", 2)
    ref, _ = integrate.dblquad(
        lambda y, x: math.exp(-50 * ((x - 0.3) ** 2 + (y - 0.6) ** 2)) + x * y, 0, 1, 0, 1, epsabs=0, epsrel=1e-12
    )
    assert cubature_3d(f, make_domain([0.0, 0.0], [1.0, 1.0]), 1e-9).value == pytest.approx(ref, rel=1e-9)


def test_endpoint_singularity():
    # open rule: ln(x) and 1/sqrt(x) are integrable at 0
    assert cubature_3d(_expr("ln(x1)", 1), make_domain([0.0], [1.0]), 1e-9).value == pytest.approx(-1.0, rel=1e-9)
    assert cubature_3d(_expr("1/sqrt(x1)", 1), make_domain([0.0], [1.0]), 1e-8).value == pytest.approx(2.0, rel=1e-7)


def test_interior_singularity_raises():
    with pytest.raises(NonFiniteSample):
        cubature_3d(_expr("ln(x1)", 1), make_domain([-1.0], [1.0]), 1e-6)


def test_tolerance_not_reached_warns():
    f = _expr("sin(1/(x1 + 1e-300))", 1)  # wildly oscillating near 0
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        r = cubature_3d(f, make_domain([0.0], [1.0]), 1e-10)
    assert not r.converged
    assert any(issubclass(x.category, ToleranceNotReached) for x in w)
    assert math.isfinite(r.value)


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        cubature_3d(builtin("PhiA", terns=2), make_domain([-3.0] * 6, [3.0] * 6))
    with pytest.raises(ValueError):
        cubature_3d(builtin("PhiA"), make_domain([-3.0] * 3, [3.0] * 3), rel_tol=1e-12)


def test_phi_a_block_coarse():
    r = cubature_3d(builtin("PhiA"), make_domain([-3.0] * 3, [3.0] * 3), 1e-4)
    assert r.value == pytest.approx(164736.65312647, rel=1e-4)


# --------------------------------------------------------------- lifting


def test_product_lift_examples():
    # the printed block value is rounded to 5 digits
    assert product_lift(1.6477e5, 5) == pytest.approx(1.213e26, rel=2e-3)
    assert product_lift(-436846.458346, 10) == pytest.approx(2.531e56, rel=1e-3)
    assert product_lift(-2.5, 3) == pytest.approx(-15.625, rel=1e-15)
    assert product_lift(3.7, 1) == 3.7


def test_product_lift_overflow_and_log():
    with pytest.raises(LiftOverflow):
        product_lift(1.6477e5, 60)
    sign, lg = product_lift_log10(-1.6477e5, 61)
    assert sign == -1.0
    assert lg == 61 * math.log10(1.6477e5)
    with pytest.raises(ValueError):
        product_lift(2.0, 0)


@pytest.mark.parametrize("v,m,e", [(1.213e26, 1.213, 26), (-4.5e-7, -4.5, -7), (1.0, 1.0, 0), (9.999999999e9, 9.999999999, 9)])
def test_split_log10(v, m, e):
    mm, ee = split_log10(v)
    assert ee == e and mm == pytest.approx(m, rel=1e-14)
    assert 1.0 <= abs(mm) < 10.0


# ------------------------------------------------------------- baselines


def test_sample_mean_constant_exact():
    est = baseline_sample_mean(builtin("Constant", k=0.0, dim=2), make_domain([0.0, -1.0], [2.0, 3.0]), 1000, 3)
    assert est.value == 8.0 and est.sigma == 0.0


def test_sample_mean_linear():
    est = baseline_sample_mean(_expr("x1", 1), make_domain([0.0], [1.0]), 10**6, 11)
    assert abs(est.value - 0.5) < 3 * est.sigma
    assert est.sigma == pytest.approx(math.sqrt(1 / 12 / 1e6), rel=0.01)


def test_sample_mean_unbiased_over_seeds():
    f = _expr("exp(-x1^2 - 0.5*x2^2) * (1 + x3)", 3)
    dom = make_domain([0.0] * 3, [1.0, 2.0, 1.0])
    ref = cubature_3d(f, dom, 1e-10).value
    ests = [baseline_sample_mean(f, dom, 2000, s) for s in range(100)]
    vals = np.array([e.value for e in ests])
    se = math.sqrt(np.mean([e.sigma**2 for e in ests]) / len(ests))
    assert abs(vals.mean() - ref) < 3 * se


def test_sample_mean_seed_reproducible():
    f = _expr("x1*x2", 2)
    dom = make_domain([0.0, 0.0], [1.0, 1.0])
    assert baseline_sample_mean(f, dom, 500, 9).value == baseline_sample_mean(f, dom, 500, 9).value


def test_ismc_baseline_flat_exact():
    dom = make_domain([-1.0, 0.0], [1.0, 5.0])
    est = baseline_ismc(builtin("Constant", k=1.5, dim=2), dom, 3, 1000, 0.4, seed=2)
    assert est.value == pytest.approx(10.0 * math.exp(-1.5), rel=1e-12)
    assert est.acceptance_pct == 100.0


def test_ismc_baseline_double_gaussian():
    f = _expr("exp(-(x1-1)^2/0.5) + 0.5*exp(-(x1+1.2)^2/0.3)", 1)
    dom = make_domain([-3.0], [3.0])
    ref = cubature_3d(f, dom, 1e-10).value
    est = baseline_ismc(f, dom, n_chains=10, n_steps=10**5, delta_max=1.0, seed=5, n_segments=20)
    assert abs(est.value - ref) < 3 * est.sigma
    assert est.sigma / est.value < 0.05
