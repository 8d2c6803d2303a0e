"""Exact-structure and quadrature tests for the polynomial classes."""

import math
from fractions import Fraction

import numpy as np
import pytest

from thinfb import fixtures
from thinfb.polyhom import (
    HomPoly,
    QuadratureFailure,
    basis,
    basis_raw,
    cone_check,
    monomials,
    project_to_Pm,
    sphere_area,
    sphere_monomial_mean,
    sphere_quadrature,
    spherical_harmonic_dim,
)


def test_monomial_count():
    for d, m in [(2, 3), (3, 2), (3, 5), (4, 3)]:
        assert len(monomials(d, m)) == math.comb(m + d - 1, d - 1)


def test_sphere_monomial_mean_exact_values():
    # classical moments of the uniform measure on S^2
    assert sphere_monomial_mean((2, 0, 0)) == Fraction(1, 3)
    assert sphere_monomial_mean((4, 0, 0)) == Fraction(1, 5)
    assert sphere_monomial_mean((2, 2, 0)) == Fraction(1, 15)
    assert sphere_monomial_mean((1, 1, 0)) == 0
    assert sphere_monomial_mean((2, 0)) == Fraction(1, 2)


def test_sphere_monomial_mean_matches_quadrature():
    pts, w = sphere_quadrature(3)
    area = w.sum()
    for e in [(2, 0, 0), (4, 0, 0), (2, 2, 0), (0, 2, 4), (6, 0, 0)]:
        num = float((pts[:, 0] ** e[0] * pts[:, 1] ** e[1] * pts[:, 2] ** e[2]) @ w)
        assert num / area == pytest.approx(float(sphere_monomial_mean(e)), abs=1e-12)


def test_sphere_area():
    assert sphere_area(3) == pytest.approx(4.0 * math.pi)
    assert sphere_area(2) == pytest.approx(2.0 * math.pi)


def test_spherical_harmonic_dim():
    for m in range(7):
        assert spherical_harmonic_dim(3, m) == 2 * m + 1
    assert spherical_harmonic_dim(2, 3) == 2


@pytest.mark.parametrize("d,m", [(2, 2), (2, 4), (3, 2), (3, 3), (3, 4), (3, 5)])
def test_basis_raw_exactly_harmonic_and_full(d, m):
    even = basis_raw(d, m, "even")
    odd = basis_raw(d, m, "odd")
    for p in even + odd:
        assert p.laplacian_residual() == 0.0
    # the parity classes partition the degree-m harmonics
    assert len(even) + len(odd) == spherical_harmonic_dim(d, m)


@pytest.mark.parametrize("d,m,cls", [(3, 2, "even"), (3, 3, "odd"), (3, 4, "even"), (2, 3, "odd")])
def test_basis_orthonormal(d, m, cls):
    bas = basis(d, m, cls)
    for i, p in enumerate(bas):
        for j, q in enumerate(bas):
            assert p.inner(q) == pytest.approx(1.0 if i == j else 0.0, abs=1e-10)


def test_eval_even_in_xd():
    p = fixtures.polynomial("m3")
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 3))
    flip = x * np.array([1.0, 1.0, -1.0])
    assert np.allclose(p.eval(x), p.eval(flip), rtol=0, atol=1e-14)


def test_grad_matches_finite_differences_off_plane():
    p = fixtures.polynomial("m3")
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20, 3))
    x[:, 2] = np.abs(x[:, 2]) + 0.5  # keep well off the plane
    g = p.grad(x)
    eps = 1e-6
    for a in range(3):
        sh = np.zeros(3)
        sh[a] = eps
        fd = (p.eval(x + sh) - p.eval(x - sh)) / (2 * eps)
        assert np.allclose(g[:, a], fd, atol=1e-7)


def test_inner_matches_quadrature():
    p = fixtures.polynomial("m2")
    q = fixtures.polynomial("x1x2")
    pts, w = sphere_quadrature(3)
    for a, b in [(p, p), (p, q), (q, q)]:
        assert a.inner(b) == pytest.approx(float((a.eval(pts) * b.eval(pts)) @ w), abs=1e-10)


def test_arithmetic_and_parity_validation():
    p = fixtures.polynomial("m2")
    q = fixtures.polynomial("x1x2")
    assert ((p + q) - q).coeffs == p.coeffs
    assert (p - p).is_zero()
    assert (2 * p).coeffs[(2, 0, 0)] == 2
    with pytest.raises(ValueError):
        HomPoly(3, 2, "even", {(1, 0, 1): Fraction(1)})  # odd x_d exponent
    with pytest.raises(ValueError):
        HomPoly(3, 2, "even", {(1, 0, 0): Fraction(1)})  # wrong degree
    with pytest.raises(ValueError):
        p + fixtures.polynomial("m1")


def test_text_roundtrip_exact():
    for name in fixtures.polynomial_names():
        p = fixtures.polynomial(name)
        back = HomPoly.from_text(p.to_text())
        assert back.coeffs == {e: c for e, c in p.coeffs.items() if c != 0}
        assert (back.dim, back.degree, back.cls) == (p.dim, p.degree, p.cls)


def test_cone_check_catalog():
    assert cone_check(fixtures.polynomial("m1")).is_plus
    assert cone_check(fixtures.polynomial("m2")).is_plus
    assert cone_check(fixtures.polynomial("m3")).is_plus
    mem = cone_check(fixtures.polynomial("x1x2"))
    assert not mem.is_plus
    assert mem.margin == pytest.approx(-0.5, abs=1e-6)


def test_cone_check_margins():
    # -d_d(-x_3) = 1 on the whole equator
    assert cone_check(fixtures.polynomial("m1")).margin == pytest.approx(1.0, abs=1e-12)
    # trace of m2 is x_1^2, grazing zero at x_1 = 0
    assert cone_check(fixtures.polynomial("m2")).margin == pytest.approx(0.0, abs=1e-9)


def test_project_reproduces_basis_elements():
    for cls, m in [("even", 2), ("odd", 3)]:
        for b in basis(3, m, cls):
            proj = project_to_Pm(b.eval, 3, m, cls)
            diff = proj - b
            assert diff.norm() < 1e-8


def test_project_kills_orthogonal_content():
    # a degree-4 harmonic has no degree-2 class component
    z4 = fixtures.polynomial("quartic_even")
    proj = project_to_Pm(z4.eval, 3, 2, "even")
    assert proj.norm() < 1e-8


def test_project_measure_input():
    p = fixtures.polynomial("x1x2")
    pts, w = sphere_quadrature(3)
    proj = project_to_Pm(("measure", pts, w * p.eval(pts)), 3, 2, "even")
    assert (proj - p).norm() < 1e-8
    with pytest.raises(QuadratureFailure):
        project_to_Pm(("measure", np.zeros((0, 3)), np.zeros(0)), 3, 2, "even")


def test_quartic_even_fixture_is_admissible():
    z4 = fixtures.polynomial("quartic_even")
    assert z4.laplacian_residual() == 0.0
    mem = cone_check(z4)
    assert mem.is_plus  # plane trace (x_1^2 + x_2^2)^2 >= 0
