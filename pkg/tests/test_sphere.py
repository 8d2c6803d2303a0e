"""Boundary-layer replacement machinery: geometry, bundles, correctors."""

import json
from fractions import Fraction as F

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import minimize

from thinfb import fixtures, sphere
from thinfb.polyhom import HomPoly, basis
from thinfb.sphere import (
    LayerGeometry,
    ReplacementBundle,
    SphereField,
    band_eigen_min,
    build_Phi,
    choose_eta,
    field_from_poly,
    fredholm_residuals,
    geometry_for,
    h1_ball_norm,
    hemisphere_nodes,
    interface_points,
    phi_c01_norm,
    phi_l2_norm,
    refine,
    replace,
    replacement_residuals,
    sphere_integral,
    verify_f_comparability,
    verify_kappa_v_bounds,
)


# ---------------------------------------------------------------------------
# geometry


def test_geometry_for_snaps_to_grid():
    g = geometry_for(3, 2, 0.3)
    assert g.eta == pytest.approx(np.sin(g.nb * g.dmu), abs=1e-14)
    assert g.nb >= 3
    assert g.lam == 2 * (2 + 3 - 2)
    with pytest.raises(ValueError):
        geometry_for(3, 2, 1.5)
    with pytest.raises(ValueError):
        geometry_for(4, 2, 0.5)
    with pytest.raises(ValueError):
        geometry_for(3, 9, 0.5)


def test_choose_eta_m2_frozen(geoms):
    # largest certified dyadic band for (d, m) = (3, 2): eta = 1/2 exactly
    g = geoms(3, 2)
    assert g.eta_request == 0.5
    assert g.nb == 32
    assert g.eta == pytest.approx(0.5, abs=1e-12)
    assert g.eig_min == pytest.approx(2.489007, abs=1e-4)
    assert g.eig_min >= g.margin


def test_choose_eta_narrows_with_degree(geoms):
    assert geoms(3, 3).eta <= geoms(3, 1).eta + 1e-12


def test_refine_doubles_resolution(geoms):
    g = geoms(3, 2)
    g2 = refine(g)
    assert g2.nb == 2 * g.nb
    assert g2.n_lat == 2 * (g.n_lat - 1) + 1
    assert g2.n_phi == 2 * g.n_phi
    assert g2.eta == g.eta  # interfaces unchanged


def test_geometry_dict_roundtrip(geoms):
    g = geoms(3, 2)
    assert LayerGeometry.from_dict(g.to_dict()) == g


def test_band_eigen_min_matches_dense_eigensolver():
    # d = 2 band is small enough for a dense generalized eigensolver oracle
    g = geometry_for(2, 1, 0.25, n_lat=97)
    K, w = sphere._band_matrices(g)
    A = (K - g.lam * sp.diags(w)).toarray()
    M = np.diag(w)
    exact = float(scipy.linalg.eigh(A, M, eigvals_only=True)[0])
    assert band_eigen_min(g) == pytest.approx(exact, abs=1e-8)


# ---------------------------------------------------------------------------
# sphere fields


def test_sphere_field_eval_at_nodes(geoms):
    g = geoms(3, 2)
    p = fixtures.polynomial("m2")
    sf = field_from_poly(p, g)
    nodes = hemisphere_nodes(g)
    assert np.allclose(sf.eval_dirs(nodes), sf.values, atol=1e-10)


def test_eval_extension_homogeneity(geoms):
    g = geoms(3, 2)
    sf = field_from_poly(fixtures.polynomial("m2"), g)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((20, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    assert np.allclose(sf.eval_extension(2, 0.5 * x), 0.25 * sf.eval_extension(2, x), atol=1e-12)
    assert sf.eval_extension(2, np.zeros((1, 3)))[0] == 0.0


def test_sphere_integral_constant_and_inner(geoms):
    g = geoms(3, 2)
    ones = SphereField(3, np.ones((g.n_lat, g.n_phi)))
    assert sphere_integral(ones) == pytest.approx(4.0 * np.pi, rel=1e-3)
    p = fixtures.polynomial("m2")
    sf = field_from_poly(p, g)
    assert sphere_integral(sf, sf.values) == pytest.approx(p.inner(p), rel=1e-3)


def test_h1_ball_norm_scales_linearly(geoms):
    g = geoms(3, 2)
    sf = field_from_poly(fixtures.polynomial("m2"), g)
    double = SphereField(3, 2.0 * sf.values)
    assert h1_ball_norm(double, 2) == pytest.approx(2.0 * h1_ball_norm(sf, 2), rel=1e-12)


# ---------------------------------------------------------------------------
# replacement: admissible polynomials are fixed points


@pytest.mark.parametrize("name", ["m1", "m2", "m3"])
def test_admissible_replacement_is_trivial(name, bundles):
    b = bundles(name)
    assert b.kappa == pytest.approx(0.0, abs=1e-14)
    assert b.sup_v() <= 1e-10
    assert float(np.abs(b.v.values).max()) <= 1e-10


def test_admissible_pbar_equals_p(bundles):
    b = bundles("m2")
    nodes = hemisphere_nodes(b.geom)
    assert np.allclose(b.pbar.values, b.p.eval(nodes), atol=1e-10)


# ---------------------------------------------------------------------------
# replacement: the sign-changing quadratic


def test_x1x2_replacement_frozen_kappa(bundles):
    b = bundles("x1x2")
    assert b.kappa == pytest.approx(3.702412, rel=1e-5)
    assert float(b.v.values.min()) >= -1e-12  # correction is nonnegative
    assert b.sup_v() > 0.1


def test_x1x2_fredholm_residuals(bundles):
    assert float(np.abs(fredholm_residuals(bundles("x1x2"))).max()) <= 1e-8


def test_x1x2_complementarity(bundles):
    res = replacement_residuals(bundles("x1x2"))
    assert res.equator_min >= -1e-10
    assert res.band_residual <= 1e-9
    assert res.equator_sign <= 1e-10  # the equator measure is nonpositive
    assert res.compl_residual <= 1e-10


def test_x1x2_kappa_stable_under_refinement(bundles, geoms):
    b = bundles("x1x2")
    fine = replace(b.p, refine(b.geom))
    assert fine.kappa == pytest.approx(b.kappa, rel=0.05)


def test_kappa_against_energy_minimization_oracle():
    """Independent check: minimize the certified band quadratic with
    L-BFGS-B box bounds and read kappa off the interface flux."""
    p = fixtures.polynomial("x1x2")
    g = geometry_for(3, 2, 0.5, n_lat=49, n_phi=64)
    ref = replace(p, g)
    K, w = sphere._band_matrices(g)
    A = (K - g.lam * sp.diags(w)).tocsc()
    nb, nphi = g.nb, g.n_phi
    obs = -p.eval(sphere._equator_nodes(g))
    lo = np.full(nb * nphi, -np.inf)
    lo[:nphi] = obs
    res = minimize(
        lambda v: 0.5 * float(v @ (A @ v)), np.zeros(nb * nphi),
        jac=lambda v: A @ v, method="L-BFGS-B",
        bounds=list(zip(lo, np.full(nb * nphi, np.inf))),
        options={"maxiter": 5000, "ftol": 1e-16, "gtol": 1e-12},
    )
    v = res.x.reshape(nb, nphi)
    f = (4.0 * v[nb - 1] - v[nb - 2]) / (2.0 * g.dmu)
    _, masses = interface_points(g)
    kappa_oracle = float((f * masses).sum())
    assert kappa_oracle == pytest.approx(ref.kappa, rel=0.01)


def test_replacement_one_homogeneous(bundles, geoms):
    b = bundles("x1x2")
    b2 = replace(2 * b.p, b.geom)
    assert b2.kappa == pytest.approx(2.0 * b.kappa, rel=1e-9)
    assert b2.sup_v() == pytest.approx(2.0 * b.sup_v(), rel=1e-9)


def test_replacement_norm_window(geoms):
    g = geoms(3, 2)
    with pytest.raises(ValueError):
        replace(10 * fixtures.polynomial("x1x2"), g)
    with pytest.raises(ValueError):
        replace(fixtures.polynomial("m1"), g)  # degree mismatch


def test_bundle_json_roundtrip(bundles):
    b = bundles("x1x2")
    back = ReplacementBundle.from_json(b.to_json())
    assert back.geom == b.geom
    assert back.kappa == b.kappa
    assert np.array_equal(back.v.values, b.v.values)
    assert np.array_equal(back.f, b.f)
    assert (back.phi - b.phi).norm() < 1e-12


def test_comparability_requires_positive_kappa(bundles):
    with pytest.raises(ValueError):
        verify_f_comparability(bundles("m2"))


def test_f_comparability_window(bundles):
    lo, hi = verify_f_comparability(bundles("x1x2"))
    assert 0.0 < lo < hi
    # frozen window for the x1x2 interface density (per unit kappa)
    assert lo == pytest.approx(0.0898, abs=0.01)
    assert hi == pytest.approx(0.3196, abs=0.01)


# ---------------------------------------------------------------------------
# correctors H and Phi


def test_H_solves_discrete_pde(bundles):
    b = bundles("x1x2")
    g = b.geom
    aN, aS, aP, _ = sphere._coeffs(g)
    diag = aN + aS + 2.0 * aP - g.lam
    phiv = b.phi.eval(hemisphere_nodes(g))
    Hv = b.H.values
    worst = 0.0
    for i in range(1, g.n_lat - 2):
        if abs(i - g.nb) <= 1:
            continue  # interface source rows
        r = (
            aN[i] * Hv[i + 1] + aS[i] * Hv[i - 1]
            + aP[i] * (np.roll(Hv[i], -1) + np.roll(Hv[i], 1))
            - diag[i] * Hv[i] + phiv[i]
        )
        worst = max(worst, float(np.abs(r).max()))
    assert worst <= 1e-4


def test_H_orthogonal_to_class(bundles):
    b = bundles("x1x2")
    for bb in basis(3, 2, "even"):
        bn = field_from_poly(bb, b.geom)
        assert abs(sphere_integral(SphereField(3, b.H.values * bn.values))) <= 1e-8


def test_H_odd_class_vanishes_on_equator(geoms):
    p = fixtures.polynomial("odd_base") + F(1, 4) * fixtures.polynomial("odd_pert")
    b = replace(p, geoms(3, 3))
    assert b.kappa > 0.0
    assert float(np.abs(b.H.values[0]).max()) == 0.0


def test_Phi_log_structure(bundles):
    # Phi(2x) - 2^m Phi(x) = 2^m log(2) c phi(x): the log corrector exactly
    b = bundles("x1x2")
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    x *= 0.3
    lhs = build_Phi(b, 2.0 * x) - 4.0 * build_Phi(b, x)
    rhs = 4.0 * np.log(2.0) * b.Phi_log_coeff * b.phi.eval(x)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_Phi_exclusion_radius(bundles):
    with pytest.raises(ValueError):
        build_Phi(bundles("x1x2"), np.array([[1e-4, 0.0, 0.0]]))


def test_phi_norms_frozen(bundles):
    b = bundles("x1x2")
    assert phi_l2_norm(b) == pytest.approx(0.2945, abs=1e-3)
    c01 = phi_c01_norm(b)
    assert np.isfinite(c01) and c01 > 0.0


def test_H_requires_positive_kappa(bundles):
    with pytest.raises(ValueError):
        _ = bundles("m2").H


# ---------------------------------------------------------------------------
# scaling families


def test_even_family_scaling(bundles, geoms):
    fit = verify_kappa_v_bounds(
        fixtures.polynomial("m2"), fixtures.polynomial("x1x2"), geoms(3, 2)
    )
    # kappa, sup v and the H1 norm all scale linearly in t
    assert fit.slope_supv == pytest.approx(1.0, abs=0.1)
    assert np.isfinite(fit.kappa_over_supv_max) and fit.kappa_over_supv_max > 0.0
    # one fitted C works across the family: kappa <= C sup v at every t
    ok = fit.kappas > 0
    assert np.all(fit.kappas[ok] <= fit.kappa_over_supv_max * fit.sup_vs[ok] * (1 + 1e-12))


def test_odd_family_h1_slope_frozen(geoms):
    fit = verify_kappa_v_bounds(
        fixtures.polynomial("odd_base"), fixtures.polynomial("odd_pert"), geoms(3, 3)
    )
    assert fit.slope_h1 == pytest.approx(0.83, abs=0.1)
    assert fit.slope_h1 >= 0.4


def test_degenerate_family_rejected(geoms):
    with pytest.raises(ValueError):
        verify_kappa_v_bounds(
            fixtures.polynomial("m2"), fixtures.polynomial("m2"), geoms(3, 2),
            ts=[0.25, 0.5],
        )


# ---------------------------------------------------------------------------
# d = 2


def test_d2_admissible_trivial():
    g = choose_eta(2, 1)
    b = replace(fixtures.polynomial("m1_d2"), g)
    assert b.kappa == pytest.approx(0.0, abs=1e-12)
    assert b.sup_v() <= 1e-10


def test_d2_inadmissible_positive_kappa():
    g = choose_eta(2, 1)
    q = HomPoly(2, 1, "odd", {(0, 1): F(1)})  # |x_2|: wrong slope sign
    b = replace(q, g)
    assert b.kappa > 0.0
    assert float(b.v.values.min()) >= -1e-12
    assert float(np.abs(fredholm_residuals(b)).max()) <= 1e-8
